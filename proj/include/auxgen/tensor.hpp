#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "auxgen/kernels.hpp"

namespace auxgen {

/// Raised when operand extents do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t id = 0;
};

/// Shared handle to a dense row-major tensor. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  /// Leading extent; 1 for scalars.
  std::size_t rows() const;
  /// Product of trailing extents; 1 for rank <= 1 of size rows.
  std::size_t cols() const;

  // Handles have shared-pointer semantics: constness of the handle does not
  // make the storage read-only.
  std::span<T> data() const { return node_->value; }
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> grad() const;
  void zero_grad() const;
  void clear_grad() const { node_->grad.clear(); }

  bool all_finite() const;
  std::uint64_t id() const { return node_->id; }
  TensorNode<T>* node() const { return node_.get(); }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

struct GraphDiagnostics {
  std::size_t fully_masked_rows = 0;
};

/// Reverse-mode tape. Ops append records in creation order, which is a
/// topological order, and `backward` replays them in reverse exactly once.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  /// True when an op over `inputs` must be recorded.
  bool tracks(std::initializer_list<const Tensor<T>*> inputs) const;
  bool tracks(std::span<const Tensor<T>> inputs) const;

  void record(std::string_view kind, std::vector<Tensor<T>> inputs, Tensor<T>& output,
              BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return records_.size(); }
  std::size_t count(std::string_view kind) const;
  void clear();

  GraphDiagnostics& diagnostics() { return diagnostics_; }
  const GraphDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  struct OpRecord {
    std::string_view kind;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<OpRecord> records_;
  GraphDiagnostics diagnostics_;
};

/// Additive attention mask: 0 lets a query attend to a key, kMaskBlocked prevents it.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  static AttentionMask open(std::size_t rows, std::size_t cols);
  static AttentionMask closed(std::size_t rows, std::size_t cols);

  bool allows(std::size_t r, std::size_t c) const {
    return values[r * cols + c] > kernels::kMaskBlockedThreshold;
  }
  void allow(std::size_t r, std::size_t c) { values[r * cols + c] = 0.0f; }
  void block(std::size_t r, std::size_t c) { values[r * cols + c] = kernels::kMaskBlocked; }
};

/// One mask per batch row, stored contiguously as [batch x rows x cols].
struct BatchedMask {
  std::size_t batch = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  static BatchedMask closed(std::size_t batch, std::size_t rows, std::size_t cols);
  /// Copies `mask` into the top-left corner of slot `b`.
  void place(std::size_t b, const AttentionMask& mask);
  std::span<const float> slot(std::size_t b) const {
    return std::span<const float>(values).subspan(b * rows * cols, rows * cols);
  }
  bool allows(std::size_t b, std::size_t r, std::size_t c) const {
    return values[(b * rows + r) * cols + c] > kernels::kMaskBlockedThreshold;
  }
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace auxgen

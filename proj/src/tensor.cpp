#include "auxgen/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace auxgen {
namespace {
std::atomic<std::uint64_t> next_node_id{1};
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return node_->shape.empty() ? 1 : node_->shape.front();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto r = rows();
  return r == 0 ? 0 : size() / r;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  node_->grad.assign(node_->value.size(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(node_->value.begin(), node_->value.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
bool Graph<T>::tracks(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!grad_enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template <typename T>
bool Graph<T>::tracks(std::span<const Tensor<T>> inputs) const {
  if (!grad_enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
}

template <typename T>
void Graph<T>::record(std::string_view kind, std::vector<Tensor<T>> inputs, Tensor<T>& output,
                      BackwardFn backward) {
  output.set_requires_grad(true);
  records_.push_back({kind, std::move(inputs), output, std::move(backward)});
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (backward_done_) throw ContractError("backward() called twice on the same graph");
  backward_done_ = true;
  Tensor<T> seed = loss;
  seed.grad()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

template <typename T>
std::size_t Graph<T>::count(std::string_view kind) const {
  return static_cast<std::size_t>(std::count_if(
      records_.begin(), records_.end(), [&](const OpRecord& r) { return r.kind == kind; }));
}

template <typename T>
void Graph<T>::clear() {
  records_.clear();
  backward_done_ = false;
  diagnostics_ = {};
}

AttentionMask AttentionMask::open(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<float>(rows * cols, 0.0f)};
}

AttentionMask AttentionMask::closed(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<float>(rows * cols, kernels::kMaskBlocked)};
}

BatchedMask BatchedMask::closed(std::size_t batch, std::size_t rows, std::size_t cols) {
  return {batch, rows, cols, std::vector<float>(batch * rows * cols, kernels::kMaskBlocked)};
}

void BatchedMask::place(std::size_t b, const AttentionMask& mask) {
  if (b >= batch || mask.rows > rows || mask.cols > cols) {
    throw DimensionError("mask does not fit batched mask slot");
  }
  for (std::size_t r = 0; r < mask.rows; ++r) {
    std::copy_n(mask.values.begin() + static_cast<std::ptrdiff_t>(r * mask.cols), mask.cols,
                values.begin() + static_cast<std::ptrdiff_t>((b * rows + r) * cols));
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace auxgen

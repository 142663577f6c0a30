#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "auxgen/rng.hpp"
#include "auxgen/tensor.hpp"

namespace auxgen {

enum class Init {
  zeros,
  ones,
  embedding,      // uniform(-0.1, 0.1)
  glorot,         // uniform(+-sqrt(6 / (fan_in + fan_out)))
  recurrent,      // uniform(+-1 / sqrt(fan_in))
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Owns every trainable tensor of a model under a unique dotted name.
/// Insertion order is stable and defines checkpoint and optimizer order.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(std::string name, Shape shape, Init init, Rng& rng);
  Tensor<T> add(std::string name, Tensor<T> value);

  bool contains(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const;
  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total scalar count of parameters whose name starts with `prefix`.
  std::size_t count(std::string_view prefix = {}) const;

  /// Allocates zeroed gradients for every parameter.
  void zero_grad();

 private:
  std::vector<NamedTensor<T>> entries_;
};

/// Adagrad: acc += g^2, then p -= lr * g / (sqrt(acc) + eps).
template <typename T>
class Adagrad {
 public:
  explicit Adagrad(const ParameterStore<T>& params, T learning_rate = T(0.05), T eps = T(1e-10));

  /// Applies one update from the populated gradients, then clears them.
  /// Parameters without a gradient are left as they are, which matches the
  /// update for an all-zero gradient.
  void step();

  T learning_rate() const { return lr_; }
  T epsilon() const { return eps_; }
  const std::vector<std::vector<T>>& accumulators() const { return acc_; }
  std::vector<std::vector<T>>& accumulators() { return acc_; }

 private:
  const ParameterStore<T>* params_;
  T lr_;
  T eps_;
  std::vector<std::vector<T>> acc_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Adagrad<float>;
extern template class Adagrad<double>;

}  // namespace auxgen

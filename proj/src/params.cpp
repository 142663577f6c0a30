#include "auxgen/params.hpp"

#include <algorithm>
#include <cmath>

namespace auxgen {

template <typename T>
Tensor<T> ParameterStore<T>::add(std::string name, Shape shape, Init init, Rng& rng) {
  const auto n = shape_size(shape);
  std::vector<T> v(n, T(0));
  const double fan_out = shape.empty() ? 1.0 : static_cast<double>(shape.front());
  const double fan_in = shape.size() < 2 ? 1.0 : static_cast<double>(n) / fan_out;
  double bound = 0.0;
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(v.begin(), v.end(), T(1));
      break;
    case Init::embedding:
      bound = 0.1;
      break;
    case Init::glorot:
      bound = std::sqrt(6.0 / (fan_in + fan_out));
      break;
    case Init::recurrent:
      bound = 1.0 / std::sqrt(fan_in);
      break;
  }
  if (bound > 0.0) {
    for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
  }
  return add(std::move(name), Tensor<T>::from(std::move(shape), std::move(v), true));
}

template <typename T>
Tensor<T> ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), value});
  return value;
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedTensor<T>& e) { return e.name == name; });
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("unknown parameter: " + std::string(name));
}

template <typename T>
std::size_t ParameterStore<T>::count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.name.compare(0, prefix.size(), prefix) == 0) n += e.tensor.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) {
    Tensor<T> t = e.tensor;
    t.zero_grad();
  }
}

template <typename T>
Adagrad<T>::Adagrad(const ParameterStore<T>& params, T learning_rate, T eps)
    : params_(&params), lr_(learning_rate), eps_(eps) {
  for (const auto& e : params.entries()) acc_.emplace_back(e.tensor.size(), T(0));
}

template <typename T>
void Adagrad<T>::step() {
  const auto& entries = params_->entries();
  if (entries.size() != acc_.size()) throw ContractError("adagrad: parameter set changed");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T> p = entries[i].tensor;
    if (!p.has_grad()) continue;
    auto value = p.data();
    const auto grad = std::as_const(p).grad();
    auto& acc = acc_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = grad[j];
      acc[j] += g * g;
      value[j] -= lr_ * g / (std::sqrt(acc[j]) + eps_);
    }
    p.clear_grad();
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Adagrad<float>;
template class Adagrad<double>;

}  // namespace auxgen

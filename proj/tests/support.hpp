#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "auxgen/params.hpp"
#include "auxgen/tensor.hpp"

namespace testing {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares autodiff gradients of `loss` against central finite differences
/// for every scalar of every parameter in `params`.
inline GradCheck check_gradients(auxgen::ParameterStore<double>& params,
                                 const std::function<double(bool)>& loss, double h = 1e-6) {
  params.zero_grad();
  loss(true);
  std::vector<std::vector<double>> analytic;
  for (const auto& e : params.entries()) {
    const auto g = e.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  GradCheck out;
  for (std::size_t p = 0; p < params.entries().size(); ++p) {
    const auto& e = params.entries()[p];
    auto v = e.tensor.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss(false);
      v[i] = saved - h;
      const double down = loss(false);
      v[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = e.name + "[" + std::to_string(i) + "] analytic=" + sci(a) +
                    " numeric=" + sci(numeric);
      }
    }
  }
  return out;
}

/// Same check for free-standing input tensors.
inline double max_input_grad_error(std::vector<auxgen::Tensor<double>>& inputs,
                                   const std::function<auxgen::Tensor<double>(auxgen::Graph<double>&)>& f,
                                   double h = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    auxgen::Graph<double> g;
    const auto loss = f(g);
    g.backward(loss);
  }
  double worst = 0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      auto eval = [&] {
        auxgen::Graph<double> g(false);
        return f(g).item();
      };
      v[i] = saved + h;
      const double up = eval();
      v[i] = saved - h;
      const double down = eval();
      v[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testing

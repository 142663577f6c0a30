#include <cmath>
#include <vector>

#include "doctest.h"

#include "auxgen/kernels.hpp"
#include "auxgen/rng.hpp"

using namespace auxgen;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("gemm kernels agree with the reference loops") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(70), n = 1 + rng.below(70), k = 1 + rng.below(70);
    const bool acc = trial % 2;
    const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
    const auto bt = random_values(n * k, rng), at = random_values(k * m, rng);
    const auto init = random_values(m * n, rng);

    auto c1 = init, c2 = init;
    kernels::gemm_nn<double>(m, n, k, a, b, c1, acc);
    kernels::reference::gemm_nn<double>(m, n, k, a, b, c2, acc);
    CHECK(max_diff(c1, c2) < 1e-12);

    c1 = init, c2 = init;
    kernels::gemm_nt<double>(m, n, k, a, bt, c1, acc);
    kernels::reference::gemm_nt<double>(m, n, k, a, bt, c2, acc);
    CHECK(max_diff(c1, c2) < 1e-12);

    c1 = init, c2 = init;
    kernels::gemm_tn<double>(m, n, k, at, b, c1, acc);
    kernels::reference::gemm_tn<double>(m, n, k, at, b, c2, acc);
    CHECK(max_diff(c1, c2) < 1e-12);
  }
}

TEST_CASE("gemm results do not depend on the thread count") {
  Rng rng(3);
  const std::size_t m = 300, n = 64, k = 96;
  const auto a = random_values(m * k, rng), b = random_values(k * n, rng);
  std::vector<double> c1(m * n), c2(m * n);
  const int saved = kernels::max_threads();
  kernels::set_threads(1);
  kernels::gemm_nn<double>(m, n, k, a, b, c1, false);
  kernels::set_threads(4);
  kernels::gemm_nn<double>(m, n, k, a, b, c2, false);
  kernels::set_threads(saved);
  CHECK(c1 == c2);
}

TEST_CASE("masked softmax matches the reference and zeroes fully blocked rows") {
  Rng rng(11);
  const std::size_t rows = 9, cols = 13;
  const auto scores = random_values(rows * cols, rng);
  std::vector<float> mask(rows * cols, 0.0f);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (rng.bernoulli(0.3)) mask[i] = kernels::kMaskBlocked;
  for (std::size_t c = 0; c < cols; ++c) mask[4 * cols + c] = kernels::kMaskBlocked;

  std::vector<double> fast(rows * cols), ref(rows * cols);
  const auto blocked = kernels::masked_softmax_rows<double>(rows, cols, scores, mask, fast);
  const auto blocked_ref = kernels::reference::masked_softmax_rows<double>(rows, cols, scores, mask, ref);
  CHECK(blocked == 1);
  CHECK(blocked_ref == 1);
  CHECK(max_diff(fast, ref) < 1e-12);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      CHECK(std::isfinite(fast[r * cols + c]));
      s += fast[r * cols + c];
    }
    if (r == 4) CHECK(s == 0.0);
    else CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

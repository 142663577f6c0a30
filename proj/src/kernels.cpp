#include "auxgen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace auxgen::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

inline bool worth_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelWork && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
  (void)work;
  return false;
#endif
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void softmax_row(std::size_t cols, const T* s, const float* m, T* out, std::size_t& fully_masked) {
  bool any_open = false;
  T best = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < cols; ++j) {
    if (m[j] > kMaskBlockedThreshold) any_open = true;
    best = std::max(best, s[j] + static_cast<T>(m[j]));
  }
  if (!any_open) {
    std::fill(out, out + cols, T(0));
    ++fully_masked;
    return;
  }
  T total = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    const T e = std::exp(s[j] + static_cast<T>(m[j]) - best);
    out[j] = e;
    total += e;
  }
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m * n * k))
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = B + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m * n * k))
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* arow = A + i * k;
    T* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dot(arow, B + j * k, k);
      crow[j] = accumulate ? crow[j] + v : v;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (worth_parallel(m * n * k))
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T api = A[p * m + i];
      if (api == T(0)) continue;
      const T* brow = B + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template <typename T>
std::size_t masked_softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> scores,
                                std::span<const float> mask, std::span<T> out) {
  std::size_t fully_masked = 0;
  const auto n = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) reduction(+ : fully_masked) if (worth_parallel(rows * cols * 8))
  for (std::int64_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_row(cols, scores.data() + off, mask.data() + off, out.data() + off, fully_masked);
  }
  return fully_masked;
}

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
std::size_t masked_softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> scores,
                                std::span<const float> mask, std::span<T> out) {
  std::size_t fully_masked = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    bool any_open = false;
    for (std::size_t j = 0; j < cols; ++j)
      if (mask[r * cols + j] > kMaskBlockedThreshold) any_open = true;
    if (!any_open) {
      for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = 0;
      ++fully_masked;
      continue;
    }
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask[r * cols + j] <= kMaskBlockedThreshold) continue;
      total += std::exp(scores[r * cols + j]);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = mask[r * cols + j] <= kMaskBlockedThreshold
                              ? T(0)
                              : std::exp(scores[r * cols + j]) / total;
    }
  }
  return fully_masked;
}

}  // namespace reference

#define AUXGEN_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,             \
                           std::span<const T>, std::span<T>, bool);                                \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,             \
                           std::span<const T>, std::span<T>, bool);                                \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,             \
                           std::span<const T>, std::span<T>, bool);                                \
  template std::size_t masked_softmax_rows<T>(std::size_t, std::size_t, std::span<const T>,       \
                                              std::span<const float>, std::span<T>);               \
  template void reference::gemm_nn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,  \
                                      std::span<const T>, std::span<T>, bool);                     \
  template void reference::gemm_nt<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,  \
                                      std::span<const T>, std::span<T>, bool);                     \
  template void reference::gemm_tn<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,  \
                                      std::span<const T>, std::span<T>, bool);                     \
  template std::size_t reference::masked_softmax_rows<T>(                                          \
      std::size_t, std::size_t, std::span<const T>, std::span<const float>, std::span<T>);

AUXGEN_INSTANTIATE_KERNELS(float)
AUXGEN_INSTANTIATE_KERNELS(double)

}  // namespace auxgen::kernels

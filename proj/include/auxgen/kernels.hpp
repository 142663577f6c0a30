#pragma once

// Dense float/double kernels used by the tensor ops.
//
// Two implementations live here. The functions directly in `auxgen::kernels`
// are the production kernels: cache-friendly loop orders, `omp simd`
// reductions and OpenMP row parallelism for large problems. Results do not
// depend on the thread count because every output element is reduced by a
// single thread in a fixed order.
//
// `auxgen::kernels::reference` holds naive textbook loops. They are kept for
// the kernel tests and the benchmark target, never for training.

#include <cstddef>
#include <span>

namespace auxgen::kernels {

/// Additive mask value standing in for minus infinity.
inline constexpr float kMaskBlocked = -1e9f;

/// Entries at or below this are treated as blocked when detecting fully masked rows.
inline constexpr float kMaskBlockedThreshold = -1e8f;

/// Number of OpenMP threads the kernels may use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

// C[m x n] = A[m x k] * B[k x n]            (C += ... when accumulate)
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);

// C[m x n] = A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);

// C[m x n] = A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);

/// Row-wise softmax of `scores + mask` into `out`. A row whose mask entries are
/// all blocked gets all-zero weights. Returns the number of such rows.
template <typename T>
std::size_t masked_softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> scores,
                                std::span<const float> mask, std::span<T> out);

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const T> a,
             std::span<const T> b, std::span<T> c, bool accumulate);
template <typename T>
std::size_t masked_softmax_rows(std::size_t rows, std::size_t cols, std::span<const T> scores,
                                std::span<const float> mask, std::span<T> out);

}  // namespace reference
}  // namespace auxgen::kernels

#pragma once

// Differentiable tensor operations. Every op computes its forward value
// eagerly and, when the graph tracks one of its inputs, records a closure
// that accumulates input gradients during Graph::backward.
//
// Matrices are rank-2 row-major tensors; "rows" below always means the
// leading extent.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "auxgen/tensor.hpp"

namespace auxgen::ops {

/// [m x k] * [k x n]
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

/// [m x k] * [n x k]^T
template <typename T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

/// x[n x in] * w[out x in]^T + bias[out]. `bias` may be undefined.
template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
/// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T factor);

/// Adds `row` (d values) to every row of x[n x d].
template <typename T>
Tensor<T> add_row(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& row);

/// Multiplies row r of x[n x d] by s[r] (s has n values).
template <typename T>
Tensor<T> scale_rows(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& s);

/// Column-wise concatenation (the ⊕ of attention heads and GRU inputs).
template <typename T>
Tensor<T> concat_cols(Graph<T>& g, const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_rows(Graph<T>& g, const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_cols(Graph<T>& g, const Tensor<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x);

/// Row gather: out[r] = table[index[r]], zero row for index -1.
/// Backward scatter-adds into the table.
template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& table, std::span<const int> index);

/// out[group[r]] += x[r] over rows with group >= 0; out has `groups` rows.
template <typename T>
Tensor<T> segment_sum(Graph<T>& g, const Tensor<T>& x, std::span<const int> group,
                      std::size_t groups);

/// Row r comes from `a` when take_a[r] is nonzero, otherwise from `b`.
template <typename T>
Tensor<T> select_rows(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                      std::span<const std::uint8_t> take_a);

/// softmax(scores + mask) per row. Rows whose mask is fully blocked return
/// zeros and are counted in graph diagnostics (never NaN).
template <typename T>
Tensor<T> masked_softmax(Graph<T>& g, const Tensor<T>& scores, const AttentionMask& mask);

/// Per-row layer normalization with learned scale and offset.
template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
};

/// Scaled dot-product attention for every (batch row, head):
///   softmax(Q_h K_h^T / sqrt(d_k) + M_b) V_h, heads concatenated column-wise.
/// q is [batch*query_len x d], k and v are [batch*key_len x d].
/// When `probs` is given it receives the weights as [batch x heads x query_len x key_len].
template <typename T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionShape& shape, const BatchedMask& mask,
                    std::vector<T>* probs = nullptr);

/// Weighted negative log-likelihood of softmax(logits):
///   sum_r weight[r] * (logsumexp(logits_r) - logits_r[target_r])
/// Rows with target < 0 are skipped. With `class_limit`, row r only normalizes over
/// its first class_limit[r] columns; the rest receive exactly zero probability.
/// `row_nll`, when given, receives the unweighted per-row NLL (0 for skipped rows).
template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits, std::span<const int> target,
                        std::span<const T> weight, std::span<const int> class_limit = {},
                        std::vector<T>* row_nll = nullptr);

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x);

/// Scalar sum_i weight_i * term_i accumulated in double and rounded once.
/// `exact`, when given, receives the double-precision value.
template <typename T>
Tensor<T> weighted_sum(Graph<T>& g, const std::vector<Tensor<T>>& terms,
                       const std::vector<double>& weights, double* exact = nullptr);

}  // namespace auxgen::ops

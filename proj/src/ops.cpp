#include "auxgen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>

namespace auxgen::ops {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename T>
void accumulate(const Tensor<T>& target, std::type_identity_t<std::span<const T>> delta) {
  auto g = target.grad();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace

template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  auto out = Tensor<T>::zeros({m, n});
  kernels::gemm_nn<T>(m, n, k, a.data(), b.data(), out.data(), false);
  if (g.tracks({&a, &b})) {
    g.record("matmul", {a, b}, out, [a, b, out, m, n, k]() mutable {
      const auto go = std::as_const(out).grad();
      if (a.requires_grad()) kernels::gemm_nt<T>(m, k, n, go, b.data(), a.grad(), true);
      if (b.requires_grad()) kernels::gemm_tn<T>(k, n, m, std::as_const(a).data(), go, b.grad(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  auto out = Tensor<T>::zeros({m, n});
  kernels::gemm_nt<T>(m, n, k, a.data(), b.data(), out.data(), false);
  if (g.tracks({&a, &b})) {
    g.record("matmul_nt", {a, b}, out, [a, b, out, m, n, k]() mutable {
      const auto go = std::as_const(out).grad();
      if (a.requires_grad()) kernels::gemm_nn<T>(m, k, n, go, std::as_const(b).data(), a.grad(), true);
      if (b.requires_grad()) kernels::gemm_tn<T>(n, k, m, go, std::as_const(a).data(), b.grad(), true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  auto out = matmul_nt(g, x, w);
  if (!bias.defined()) return out;
  return add_row(g, out, bias);
}

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  auto out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.tracks({&a, &b})) {
    g.record("add", {a, b}, out, [a, b, out]() mutable {
      const auto go = std::as_const(out).grad();
      if (a.requires_grad()) accumulate(a, go);
      if (b.requires_grad()) accumulate(b, go);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.tracks({&a, &b})) {
    g.record("sub", {a, b}, out, [a, b, out]() mutable {
      const auto go = std::as_const(out).grad();
      if (a.requires_grad()) accumulate(a, go);
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.tracks({&a, &b})) {
    g.record("mul", {a, b}, out, [a, b, out]() mutable {
      const auto go = std::as_const(out).grad();
      const auto av = std::as_const(a).data();
      const auto bv = std::as_const(b).data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T factor) {
  std::vector<T> v(x.data().begin(), x.data().end());
  for (auto& e : v) e *= factor;
  auto out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.tracks({&x})) {
    g.record("scale", {x}, out, [x, out, factor]() mutable {
      const auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_row(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& row) {
  require_matrix(x, "add_row");
  const auto n = x.shape()[0], d = x.shape()[1];
  if (row.size() != d) {
    throw DimensionError("add_row: row of size " + std::to_string(row.size()) +
                         " against width " + std::to_string(d));
  }
  std::vector<T> v(x.data().begin(), x.data().end());
  const auto rv = row.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] += rv[c];
  auto out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.tracks({&x, &row})) {
    g.record("add_row", {x, row}, out, [x, row, out, n, d]() mutable {
      const auto go = std::as_const(out).grad();
      if (x.requires_grad()) accumulate(x, go);
      if (row.requires_grad()) {
        auto gr = row.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) gr[c] += go[r * d + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_rows(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& s) {
  require_matrix(x, "scale_rows");
  const auto n = x.shape()[0], d = x.shape()[1];
  if (s.size() != n) throw DimensionError("scale_rows: need one factor per row");
  std::vector<T> v(x.data().begin(), x.data().end());
  const auto sv = s.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] *= sv[r];
  auto out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.tracks({&x, &s})) {
    g.record("scale_rows", {x, s}, out, [x, s, out, n, d]() mutable {
      const auto go = std::as_const(out).grad();
      const auto xv = std::as_const(x).data();
      const auto sv = std::as_const(s).data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += go[r * d + c] * sv[r];
      }
      if (s.requires_grad()) {
        auto gs = s.grad();
        for (std::size_t r = 0; r < n; ++r) {
          T acc = 0;
          for (std::size_t c = 0; c < d; ++c) acc += go[r * d + c] * xv[r * d + c];
          gs[r] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const auto n = parts.front().rows();
  std::size_t width = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.shape()[0] != n) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(width);
    width += p.shape()[1];
  }
  std::vector<T> v(n * width);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto w = parts[i].shape()[1];
    const auto pv = parts[i].data();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  v.begin() + static_cast<std::ptrdiff_t>(r * width + offsets[i]));
  }
  auto out = Tensor<T>::from({n, width}, std::move(v));
  if (g.tracks(std::span<const Tensor<T>>(parts))) {
    g.record("concat_cols", parts, out, [parts, out, offsets, n, width]() mutable {
      const auto go = std::as_const(out).grad();
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i].requires_grad()) continue;
        const auto w = parts[i].shape()[1];
        auto gp = parts[i].grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += go[r * width + offsets[i] + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const auto d = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<T> v;
  v.reserve(total * d);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  auto out = Tensor<T>::from({total, d}, std::move(v));
  if (g.tracks(std::span<const Tensor<T>>(parts))) {
    g.record("concat_rows", parts, out, [parts, out]() mutable {
      const auto go = std::as_const(out).grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) accumulate(p, go.subspan(off, p.size()));
        off += p.size();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Graph<T>& g, const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const auto n = x.shape()[0], d = x.shape()[1];
  if (begin + count > d) throw DimensionError("slice_cols: range exceeds width");
  std::vector<T> v(n * count);
  const auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * d + begin), count,
                v.begin() + static_cast<std::ptrdiff_t>(r * count));
  auto out = Tensor<T>::from({n, count}, std::move(v));
  if (g.tracks({&x})) {
    g.record("slice_cols", {x}, out, [x, out, n, d, begin, count]() mutable {
      const auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c) gx[r * d + begin + c] += go[r * count + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto out = Tensor<T>::from(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (g.tracks({&x})) {
    g.record("reshape", {x}, out, [x, out]() mutable { accumulate(x, std::as_const(out).grad()); });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Graph<T>& g, const Tensor<T>& x) {
  require_matrix(x, "transpose");
  const auto n = x.shape()[0], d = x.shape()[1];
  std::vector<T> v(n * d);
  const auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) v[c * n + r] = xv[r * d + c];
  auto out = Tensor<T>::from({d, n}, std::move(v));
  if (g.tracks({&x})) {
    g.record("transpose", {x}, out, [x, out, n, d]() mutable {
      const auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += go[c * n + r];
    });
  }
  return out;
}

namespace {

// Shared scaffolding for ops whose derivative can be written in terms of the output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(Graph<T>& g, const Tensor<T>& x, std::string_view kind, Fwd fwd, Deriv deriv) {
  std::vector<T> v(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(xv[i]);
  auto out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.tracks({&x})) {
    g.record(kind, {x}, out, [x, out, deriv]() mutable {
      const auto go = std::as_const(out).grad();
      const auto ov = std::as_const(out).data();
      const auto xv = std::as_const(x).data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * deriv(xv[i], ov[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> tanh(Graph<T>& g, const Tensor<T>& x) {
  return unary(g, x, "tanh", [](T v) { return std::tanh(v); },
               [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  return unary(g, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  return unary(g, x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> gather_rows(Graph<T>& g, const Tensor<T>& table, std::span<const int> index) {
  require_matrix(table, "gather_rows");
  const auto rows = table.shape()[0], d = table.shape()[1];
  std::vector<T> v(index.size() * d, T(0));
  const auto tv = table.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int i = index[r];
    if (i < 0) continue;
    if (static_cast<std::size_t>(i) >= rows) {
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of range for " +
                          std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto out = Tensor<T>::from({index.size(), d}, std::move(v));
  if (g.tracks({&table})) {
    std::vector<int> idx(index.begin(), index.end());
    g.record("gather_rows", {table}, out, [table, out, idx = std::move(idx), d]() mutable {
      const auto go = std::as_const(out).grad();
      auto gt = table.grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        const auto base = static_cast<std::size_t>(idx[r]) * d;
        for (std::size_t c = 0; c < d; ++c) gt[base + c] += go[r * d + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> segment_sum(Graph<T>& g, const Tensor<T>& x, std::span<const int> group,
                      std::size_t groups) {
  require_matrix(x, "segment_sum");
  const auto n = x.shape()[0], d = x.shape()[1];
  if (group.size() != n) throw DimensionError("segment_sum: need one group id per row");
  std::vector<T> v(groups * d, T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const int s = group[r];
    if (s < 0) continue;
    if (static_cast<std::size_t>(s) >= groups) throw ContractError("segment_sum: group out of range");
    for (std::size_t c = 0; c < d; ++c) v[static_cast<std::size_t>(s) * d + c] += xv[r * d + c];
  }
  auto out = Tensor<T>::from({groups, d}, std::move(v));
  if (g.tracks({&x})) {
    std::vector<int> grp(group.begin(), group.end());
    g.record("segment_sum", {x}, out, [x, out, grp = std::move(grp), d]() mutable {
      const auto go = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < grp.size(); ++r) {
        if (grp[r] < 0) continue;
        const auto base = static_cast<std::size_t>(grp[r]) * d;
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += go[base + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_rows(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b,
                      std::span<const std::uint8_t> take_a) {
  require_same_shape(a, b, "select_rows");
  require_matrix(a, "select_rows");
  const auto n = a.shape()[0], d = a.shape()[1];
  if (take_a.size() != n) throw DimensionError("select_rows: need one flag per row");
  std::vector<T> v(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = take_a[r] ? a.data() : b.data();
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto out = Tensor<T>::from(a.shape(), std::move(v));
  if (g.tracks({&a, &b})) {
    std::vector<std::uint8_t> flags(take_a.begin(), take_a.end());
    g.record("select_rows", {a, b}, out, [a, b, out, flags = std::move(flags), d]() mutable {
      const auto go = std::as_const(out).grad();
      for (std::size_t r = 0; r < flags.size(); ++r) {
        const Tensor<T>& dst = flags[r] ? a : b;
        if (!dst.requires_grad()) continue;
        auto gd = dst.grad();
        for (std::size_t c = 0; c < d; ++c) gd[r * d + c] += go[r * d + c];
      }
    });
  }
  return out;
}

namespace {

template <typename T>
void softmax_backward_rows(std::size_t rows, std::size_t cols, std::span<const T> p,
                           std::span<const T> dp, std::span<T> ds, T factor) {
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += dp[r * cols + c] * p[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c)
      ds[r * cols + c] += factor * p[r * cols + c] * (dp[r * cols + c] - dot);
  }
}

}  // namespace

template <typename T>
Tensor<T> masked_softmax(Graph<T>& g, const Tensor<T>& scores, const AttentionMask& mask) {
  require_matrix(scores, "masked_softmax");
  const auto rows = scores.shape()[0], cols = scores.shape()[1];
  if (mask.rows != rows || mask.cols != cols) {
    throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " against scores " +
                         shape_string(scores.shape()));
  }
  auto out = Tensor<T>::zeros({rows, cols});
  g.diagnostics().fully_masked_rows +=
      kernels::masked_softmax_rows<T>(rows, cols, scores.data(), mask.values, out.data());
  if (g.tracks({&scores})) {
    g.record("masked_softmax", {scores}, out, [scores, out, rows, cols]() mutable {
      softmax_backward_rows<T>(rows, cols, std::as_const(out).data(), std::as_const(out).grad(),
                               scores.grad(), T(1));
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  require_matrix(x, "layer_norm");
  const auto n = x.shape()[0], d = x.shape()[1];
  if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm: parameter width");
  std::vector<T> xhat(n * d), inv_std(n), v(n * d);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < n; ++r) {
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xv[r * d + c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T dev = xv[r * d + c] - mu;
      var += dev * dev;
    }
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xv[r * d + c] - mu) * inv_std[r];
      v[r * d + c] = xhat[r * d + c] * gv[c] + bv[c];
    }
  }
  auto out = Tensor<T>::from(x.shape(), std::move(v));
  if (g.tracks({&x, &gamma, &beta})) {
    g.record("layer_norm", {x, gamma, beta}, out,
             [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
              d]() mutable {
               const auto go = std::as_const(out).grad();
               const auto gv = std::as_const(gamma).data();
               if (gamma.requires_grad()) {
                 auto gg = gamma.grad();
                 for (std::size_t r = 0; r < n; ++r)
                   for (std::size_t c = 0; c < d; ++c) gg[c] += go[r * d + c] * xhat[r * d + c];
               }
               if (beta.requires_grad()) {
                 auto gb = beta.grad();
                 for (std::size_t r = 0; r < n; ++r)
                   for (std::size_t c = 0; c < d; ++c) gb[c] += go[r * d + c];
               }
               if (x.requires_grad()) {
                 auto gx = x.grad();
                 const T inv_d = T(1) / static_cast<T>(d);
                 for (std::size_t r = 0; r < n; ++r) {
                   T m1 = 0, m2 = 0;
                   for (std::size_t c = 0; c < d; ++c) {
                     const T dxh = go[r * d + c] * gv[c];
                     m1 += dxh;
                     m2 += dxh * xhat[r * d + c];
                   }
                   m1 *= inv_d;
                   m2 *= inv_d;
                   for (std::size_t c = 0; c < d; ++c) {
                     const T dxh = go[r * d + c] * gv[c];
                     gx[r * d + c] += inv_std[r] * (dxh - m1 - xhat[r * d + c] * m2);
                   }
                 }
               }
             });
  }
  return out;
}

namespace {

// Copies the column block [col, col + width) of rows [row0, row0 + rows) into a dense buffer.
template <typename T>
void extract_block(std::span<const T> src, std::size_t stride, std::size_t row0, std::size_t rows,
                   std::size_t col, std::size_t width, std::vector<T>& dst) {
  dst.resize(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((row0 + r) * stride + col), width,
                dst.begin() + static_cast<std::ptrdiff_t>(r * width));
}

template <typename T>
void add_block(std::span<T> dst, std::size_t stride, std::size_t row0, std::size_t rows,
               std::size_t col, std::size_t width, const std::vector<T>& src) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) dst[(row0 + r) * stride + col + c] += src[r * width + c];
}

}  // namespace

template <typename T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionShape& shape, const BatchedMask& mask, std::vector<T>* probs) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const auto B = shape.batch, Lq = shape.query_len, Lk = shape.key_len, H = shape.heads;
  const auto d = q.shape()[1];
  if (H == 0 || d % H != 0) throw DimensionError("attention: heads must divide model width");
  if (q.shape()[0] != B * Lq || k.shape()[0] != B * Lk || v.shape()[0] != B * Lk ||
      k.shape()[1] != d || v.shape()[1] != d) {
    throw DimensionError("attention: operand shapes do not match layout");
  }
  if (mask.batch != B || mask.rows != Lq || mask.cols != Lk) {
    throw DimensionError("attention: mask layout does not match");
  }
  const auto dk = d / H;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
  const auto block = Lq * Lk;
  std::vector<T> weights(B * H * block);
  auto out = Tensor<T>::zeros({B * Lq, d});
  std::size_t fully_masked = 0;
  const auto pairs = static_cast<std::int64_t>(B * H);
  const auto qv = q.data();
  const auto kv = k.data();
  const auto vv = v.data();
  auto ov = out.data();

#pragma omp parallel for schedule(static) reduction(+ : fully_masked) if (pairs > 1 && kernels::max_threads() > 1 && block * dk > 4096)
  for (std::int64_t pi = 0; pi < pairs; ++pi) {
    const auto b = static_cast<std::size_t>(pi) / H;
    const auto h = static_cast<std::size_t>(pi) % H;
    std::vector<T> qh, kh, vh, scores(block), oh(Lq * dk);
    extract_block<T>(qv, d, b * Lq, Lq, h * dk, dk, qh);
    extract_block<T>(kv, d, b * Lk, Lk, h * dk, dk, kh);
    extract_block<T>(vv, d, b * Lk, Lk, h * dk, dk, vh);
    kernels::gemm_nt<T>(Lq, Lk, dk, qh, kh, scores, false);
    for (auto& s : scores) s *= inv_sqrt;
    std::span<T> p(weights.data() + static_cast<std::size_t>(pi) * block, block);
    fully_masked += kernels::masked_softmax_rows<T>(Lq, Lk, scores, mask.slot(b), p);
    kernels::gemm_nn<T>(Lq, dk, Lk, p, vh, oh, false);
    for (std::size_t r = 0; r < Lq; ++r)
      std::copy_n(oh.begin() + static_cast<std::ptrdiff_t>(r * dk), dk,
                  ov.begin() + static_cast<std::ptrdiff_t>((b * Lq + r) * d + h * dk));
  }
  // Each (b, h) pair sees the same fully masked query rows; count rows once.
  g.diagnostics().fully_masked_rows += fully_masked / H;
  if (probs) *probs = weights;

  if (g.tracks({&q, &k, &v})) {
    g.record("attention", {q, k, v}, out,
             [q, k, v, out, weights = std::move(weights), B, Lq, Lk, H, d, dk, inv_sqrt,
              block]() mutable {
               const auto go = std::as_const(out).grad();
               const auto qv = std::as_const(q).data();
               const auto kv = std::as_const(k).data();
               const auto vv = std::as_const(v).data();
               std::span<T> gq, gk, gv;
               if (q.requires_grad()) gq = q.grad();
               if (k.requires_grad()) gk = k.grad();
               if (v.requires_grad()) gv = v.grad();
               const auto pairs = static_cast<std::int64_t>(B * H);
#pragma omp parallel for schedule(static) if (pairs > 1 && kernels::max_threads() > 1 && block * dk > 4096)
               for (std::int64_t pi = 0; pi < pairs; ++pi) {
                 const auto b = static_cast<std::size_t>(pi) / H;
                 const auto h = static_cast<std::size_t>(pi) % H;
                 std::span<const T> p(weights.data() + static_cast<std::size_t>(pi) * block, block);
                 std::vector<T> goh, qh, kh, vh, dp(block), ds(block, T(0));
                 extract_block<T>(go, d, b * Lq, Lq, h * dk, dk, goh);
                 extract_block<T>(vv, d, b * Lk, Lk, h * dk, dk, vh);
                 if (!gv.empty()) {
                   std::vector<T> dv(Lk * dk);
                   kernels::gemm_tn<T>(Lk, dk, Lq, p, goh, dv, false);
                   add_block<T>(gv, d, b * Lk, Lk, h * dk, dk, dv);
                 }
                 if (gq.empty() && gk.empty()) continue;
                 kernels::gemm_nt<T>(Lq, Lk, dk, goh, vh, dp, false);
                 softmax_backward_rows<T>(Lq, Lk, p, dp, ds, inv_sqrt);
                 if (!gq.empty()) {
                   extract_block<T>(kv, d, b * Lk, Lk, h * dk, dk, kh);
                   std::vector<T> dq(Lq * dk);
                   kernels::gemm_nn<T>(Lq, dk, Lk, ds, kh, dq, false);
                   add_block<T>(gq, d, b * Lq, Lq, h * dk, dk, dq);
                 }
                 if (!gk.empty()) {
                   extract_block<T>(qv, d, b * Lq, Lq, h * dk, dk, qh);
                   std::vector<T> dkm(Lk * dk);
                   kernels::gemm_tn<T>(Lk, dk, Lq, ds, qh, dkm, false);
                   add_block<T>(gk, d, b * Lk, Lk, h * dk, dk, dkm);
                 }
               }
             });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits, std::span<const int> target,
                        std::span<const T> weight, std::span<const int> class_limit,
                        std::vector<T>* row_nll) {
  require_matrix(logits, "cross_entropy");
  const auto R = logits.shape()[0], C = logits.shape()[1];
  if (target.size() != R || weight.size() != R) {
    throw DimensionError("cross_entropy: need one target and weight per row");
  }
  if (!class_limit.empty() && class_limit.size() != R) {
    throw DimensionError("cross_entropy: need one class limit per row");
  }
  const auto lv = logits.data();
  std::vector<T> lse(R, T(0));
  std::vector<std::size_t> limit(R, C);
  if (row_nll) row_nll->assign(R, T(0));
  T total = 0;
  for (std::size_t r = 0; r < R; ++r) {
    if (target[r] < 0) continue;
    if (!class_limit.empty()) limit[r] = static_cast<std::size_t>(std::max(class_limit[r], 0));
    const auto lim = limit[r];
    if (static_cast<std::size_t>(target[r]) >= lim) {
      throw ContractError("cross_entropy: target " + std::to_string(target[r]) +
                          " outside the valid classes of row " + std::to_string(r));
    }
    const T* row = lv.data() + r * C;
    T best = *std::max_element(row, row + lim);
    T acc = 0;
    for (std::size_t c = 0; c < lim; ++c) acc += std::exp(row[c] - best);
    lse[r] = best + std::log(acc);
    const T nll = lse[r] - row[target[r]];
    if (row_nll) (*row_nll)[r] = nll;
    total += weight[r] * nll;
  }
  auto out = Tensor<T>::scalar(total);
  if (g.tracks({&logits})) {
    std::vector<int> tgt(target.begin(), target.end());
    std::vector<T> w(weight.begin(), weight.end());
    g.record("cross_entropy", {logits}, out,
             [logits, out, tgt = std::move(tgt), w = std::move(w), lse = std::move(lse),
              limit = std::move(limit), C]() mutable {
               const T go = std::as_const(out).grad()[0];
               const auto lv = std::as_const(logits).data();
               auto gl = logits.grad();
               for (std::size_t r = 0; r < tgt.size(); ++r) {
                 if (tgt[r] < 0 || w[r] == T(0)) continue;
                 const T scale = go * w[r];
                 for (std::size_t c = 0; c < limit[r]; ++c)
                   gl[r * C + c] += scale * std::exp(lv[r * C + c] - lse[r]);
                 gl[r * C + static_cast<std::size_t>(tgt[r])] -= scale;
               }
             });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Graph<T>& g, const Tensor<T>& x) {
  T acc = 0;
  for (auto e : x.data()) acc += e;
  auto out = Tensor<T>::scalar(acc);
  if (g.tracks({&x})) {
    g.record("sum", {x}, out, [x, out]() mutable {
      const T go = std::as_const(out).grad()[0];
      for (auto& e : x.grad()) e += go;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Graph<T>& g, const Tensor<T>& x) {
  if (x.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(g, sum(g, x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> weighted_sum(Graph<T>& g, const std::vector<Tensor<T>>& terms,
                       const std::vector<double>& weights, double* exact) {
  if (terms.size() != weights.size()) throw DimensionError("weighted_sum: term/weight count mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    acc += weights[i] * static_cast<double>(terms[i].data()[0]);
  }
  if (exact) *exact = acc;
  auto out = Tensor<T>::scalar(static_cast<T>(acc));
  if (g.tracks(std::span<const Tensor<T>>(terms))) {
    g.record("weighted_sum", terms, out, [terms, weights, out]() mutable {
      const T go = std::as_const(out).grad()[0];
      for (std::size_t i = 0; i < terms.size(); ++i)
        if (terms[i].requires_grad()) terms[i].grad()[0] += static_cast<T>(weights[i]) * go;
    });
  }
  return out;
}

#define AUXGEN_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul_nt(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(Graph<T>&, const Tensor<T>&, T);                                        \
  template Tensor<T> add_row(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> scale_rows(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> concat_cols(Graph<T>&, const std::vector<Tensor<T>>&);                        \
  template Tensor<T> concat_rows(Graph<T>&, const std::vector<Tensor<T>>&);                        \
  template Tensor<T> slice_cols(Graph<T>&, const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> reshape(Graph<T>&, const Tensor<T>&, Shape);                                  \
  template Tensor<T> transpose(Graph<T>&, const Tensor<T>&);                                       \
  template Tensor<T> tanh(Graph<T>&, const Tensor<T>&);                                            \
  template Tensor<T> relu(Graph<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sigmoid(Graph<T>&, const Tensor<T>&);                                         \
  template Tensor<T> gather_rows(Graph<T>&, const Tensor<T>&, std::span<const int>);               \
  template Tensor<T> segment_sum(Graph<T>&, const Tensor<T>&, std::span<const int>, std::size_t);  \
  template Tensor<T> select_rows(Graph<T>&, const Tensor<T>&, const Tensor<T>&,                    \
                                 std::span<const std::uint8_t>);                                   \
  template Tensor<T> masked_softmax(Graph<T>&, const Tensor<T>&, const AttentionMask&);            \
  template Tensor<T> layer_norm(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                T);                                                                \
  template Tensor<T> attention(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                               const AttentionShape&, const BatchedMask&, std::vector<T>*);        \
  template Tensor<T> cross_entropy(Graph<T>&, const Tensor<T>&, std::span<const int>,              \
                                   std::span<const T>, std::span<const int>, std::vector<T>*);     \
  template Tensor<T> sum(Graph<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mean(Graph<T>&, const Tensor<T>&);                                            \
  template Tensor<T> weighted_sum(Graph<T>&, const std::vector<Tensor<T>>&,                        \
                                  const std::vector<double>&, double*);

AUXGEN_INSTANTIATE_OPS(float)
AUXGEN_INSTANTIATE_OPS(double)

}  // namespace auxgen::ops

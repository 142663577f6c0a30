#include "auxgen/order_net.hpp"

#include <algorithm>

namespace auxgen {

std::optional<ShuffledContext> shuffle_utterances(const std::vector<std::vector<int>>& context,
                                                  std::uint64_t seed) {
  if (context.size() < 2) return std::nullopt;
  Rng rng(seed);
  ShuffledContext out;
  out.order = rng.non_identity_permutation(context.size());
  for (const auto o : out.order) out.utterances.push_back(context[o]);
  return out;
}

template <typename T>
GruCell<T>::GruCell(ParameterStore<T>& params, const std::string& prefix, std::size_t input,
                    std::size_t hidden, Rng& rng)
    : hidden_(hidden) {
  w_ih_ = params.add(prefix + ".w_ih", {3 * hidden, input}, Init::recurrent, rng);
  w_hh_ = params.add(prefix + ".w_hh", {3 * hidden, hidden}, Init::recurrent, rng);
  b_ih_ = params.add(prefix + ".b_ih", {3 * hidden}, Init::zeros, rng);
  b_hh_ = params.add(prefix + ".b_hh", {3 * hidden}, Init::zeros, rng);
}

template <typename T>
Tensor<T> GruCell<T>::forward(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& h) const {
  const auto d = hidden_;
  const auto gi = ops::linear(g, x, w_ih_, b_ih_);
  const auto gh = ops::linear(g, h, w_hh_, b_hh_);
  const auto r = ops::sigmoid(g, ops::add(g, ops::slice_cols(g, gi, 0, d), ops::slice_cols(g, gh, 0, d)));
  const auto z = ops::sigmoid(g, ops::add(g, ops::slice_cols(g, gi, d, d), ops::slice_cols(g, gh, d, d)));
  const auto n = ops::tanh(
      g, ops::add(g, ops::slice_cols(g, gi, 2 * d, d), ops::mul(g, r, ops::slice_cols(g, gh, 2 * d, d))));
  // (1 - z) * n + z * h == n + z * (h - n)
  return ops::add(g, n, ops::mul(g, z, ops::sub(g, h, n)));
}

template <typename T>
OrderNetwork<T>::OrderNetwork(ParameterStore<T>& params, const ModelConfig& config,
                              std::size_t max_utterances, Rng& rng)
    : d_(config.d_model),
      classes_(max_utterances),
      attention_(params, "order.process.attn", config.d_model, config.heads, rng),
      process_gru_(params, "order.process.gru", config.d_model, config.d_model, rng),
      write_gru_(params, "order.write.gru", 2 * config.d_model, config.d_model, rng) {
  if (max_utterances < 2) throw ContractError("order network needs at least two position classes");
  const auto d = d_;
  w1_ = params.add("order.write.attn.w1", {d, d}, Init::glorot, rng);
  w2_ = params.add("order.write.attn.w2", {d, d}, Init::glorot, rng);
  b1_ = params.add("order.write.attn.b1", {d}, Init::zeros, rng);
  v_ = params.add("order.write.attn.v", {1, d}, Init::glorot, rng);
  class_embedding_ = params.add("order.write.class_embedding", {classes_ + 1, d}, Init::embedding, rng);
  ffn_w1_ = params.add("order.write.ffn.w1", {d, 3 * d}, Init::glorot, rng);
  ffn_b1_ = params.add("order.write.ffn.b1", {d}, Init::zeros, rng);
  ffn_w2_ = params.add("order.write.ffn.w2", {classes_, d}, Init::glorot, rng);
  ffn_b2_ = params.add("order.write.ffn.b2", {classes_}, Init::zeros, rng);
}

template <typename T>
Tensor<T> OrderNetwork<T>::read(Graph<T>& g, const GenerationModel<T>& model,
                                std::span<const ShuffledContext> items, OrderLayout& layout) const {
  layout = {};
  layout.rows = items.size();
  std::vector<corpus::SequenceView> views;
  for (const auto& item : items) {
    if (item.utterances.size() > classes_) {
      throw ContractError("context has " + std::to_string(item.utterances.size()) +
                          " utterances; the order network supports " + std::to_string(classes_));
    }
    layout.counts.push_back(item.utterances.size());
    layout.max_utterances = std::max(layout.max_utterances, item.utterances.size());
    views.push_back({&item.utterances, nullptr});
  }
  const auto batch = corpus::pack(views, model.config().max_positions);
  const auto encoded = model.encode(g, batch, batch_open_mask(batch));
  std::vector<int> group(batch.rows * batch.width, -1);
  for (std::size_t r = 0; r < batch.rows; ++r)
    for (std::size_t i = 0; i < batch.lengths[r]; ++i) {
      const auto k = batch.index(r, i);
      group[k] = static_cast<int>(r * layout.max_utterances) + batch.utterances[k];
    }
  return ops::segment_sum(g, encoded, std::span<const int>(group), layout.rows * layout.max_utterances);
}

template <typename T>
ProcessResult<T> OrderNetwork<T>::process(Graph<T>& g, const Tensor<T>& memory,
                                          const OrderLayout& layout) const {
  const auto rows = layout.rows, n = layout.max_utterances;
  auto mask = BatchedMask::closed(rows, n, n);
  for (std::size_t r = 0; r < rows; ++r)
    mask.place(r, AttentionMask::open(layout.counts[r], layout.counts[r]));
  ProcessResult<T> out;
  out.attended = attention_.forward(g, memory, memory, {rows, n, n, attention_.heads()}, mask);

  auto h = Tensor<T>::zeros({rows, d_});
  std::vector<Tensor<T>> steps;
  std::vector<int> pick(rows);
  std::vector<std::uint8_t> active(rows);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t r = 0; r < rows; ++r) {
      pick[r] = static_cast<int>(r * n + t);
      active[r] = t < layout.counts[r];
    }
    const auto x = ops::gather_rows(g, out.attended, std::span<const int>(pick));
    h = ops::select_rows(g, process_gru_.forward(g, x, h), h, std::span<const std::uint8_t>(active));
    steps.push_back(h);
  }
  out.final = h;
  // Steps are stacked t-major; reorder to the b-major slot layout.
  const auto stacked = ops::concat_rows(g, steps);
  std::vector<int> order(rows * n, -1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < layout.counts[r]; ++t) order[r * n + t] = static_cast<int>(t * rows + r);
  out.states = ops::gather_rows(g, stacked, std::span<const int>(order));
  return out;
}

template <typename T>
WriteResult<T> OrderNetwork<T>::write(Graph<T>& g, const ProcessResult<T>& processed,
                                      const OrderLayout& layout,
                                      std::span<const std::vector<std::size_t>> orders,
                                      bool teacher_forcing) const {
  const auto rows = layout.rows, n = layout.max_utterances;
  if (!orders.empty()) {
    if (orders.size() != rows) throw ContractError("order count does not match the batch");
    for (std::size_t r = 0; r < rows; ++r) {
      if (orders[r].size() != layout.counts[r]) throw ContractError("order length mismatch");
      for (const auto o : orders[r])
        if (o >= layout.counts[r]) throw ContractError("order entry out of range");
    }
  } else if (teacher_forcing) {
    throw ContractError("teacher forcing needs the true orders");
  }

  const auto keys = ops::linear(g, processed.states, w2_, Tensor<T>{});
  auto valid = AttentionMask::closed(rows, n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < layout.counts[r]; ++t) valid.allow(r, t);
  std::vector<int> owner(rows * n), broadcast(rows * n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < n; ++t) {
      owner[r * n + t] = t < layout.counts[r] ? static_cast<int>(r) : -1;
      broadcast[r * n + t] = static_cast<int>(r);
    }

  WriteResult<T> out;
  out.predicted.assign(rows, {});
  std::vector<int> prev(rows, static_cast<int>(classes_));
  std::vector<std::uint8_t> active(rows);
  std::vector<Tensor<T>> logits;
  auto hbar = processed.final;
  for (std::size_t i = 0; i < n; ++i) {
    const auto query = ops::gather_rows(g, ops::linear(g, hbar, w1_, b1_), std::span<const int>(broadcast));
    const auto scores = ops::linear(g, ops::tanh(g, ops::add(g, query, keys)), v_, Tensor<T>{});
    const auto weights = ops::masked_softmax(g, ops::reshape(g, scores, {rows, n}), valid);
    out.attention.emplace_back(weights.data().begin(), weights.data().end());
    const auto context = ops::segment_sum(
        g, ops::scale_rows(g, processed.states, ops::reshape(g, weights, {rows * n})),
        std::span<const int>(owner), rows);
    const auto x = ops::gather_rows(g, class_embedding_, std::span<const int>(prev));
    for (std::size_t r = 0; r < rows; ++r) active[r] = i < layout.counts[r];
    hbar = ops::select_rows(g, write_gru_.forward(g, ops::concat_cols(g, {context, x}), hbar), hbar,
                            std::span<const std::uint8_t>(active));
    const auto hidden = ops::relu(g, ops::linear(g, ops::concat_cols(g, {hbar, x, context}), ffn_w1_, ffn_b1_));
    const auto u = ops::linear(g, hidden, ffn_w2_, ffn_b2_);
    logits.push_back(u);

    const auto data = u.data();
    for (std::size_t r = 0; r < rows; ++r) {
      if (!active[r]) continue;
      const auto row = data.subspan(r * classes_, layout.counts[r]);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      out.predicted[r].push_back(best);
      prev[r] = static_cast<int>(teacher_forcing ? orders[r][i] : best);
    }
  }
  out.logits = ops::concat_rows(g, logits);

  if (!orders.empty()) {
    std::vector<int> targets(n * rows, -1), limit(n * rows, static_cast<int>(classes_));
    std::vector<T> w(n * rows, T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < rows; ++r) {
        limit[i * rows + r] = static_cast<int>(layout.counts[r]);
        if (i >= layout.counts[r]) continue;
        targets[i * rows + r] = static_cast<int>(orders[r][i]);
        w[i * rows + r] = T(1) / static_cast<T>(layout.counts[r] * rows);
      }
    out.loss = ops::cross_entropy(g, out.logits, std::span<const int>(targets), std::span<const T>(w),
                                  std::span<const int>(limit));
  }
  return out;
}

template <typename T>
Tensor<T> OrderNetwork<T>::loss(Graph<T>& g, const GenerationModel<T>& model,
                                std::span<const ShuffledContext> items, OrderStats* stats) const {
  if (items.empty()) return {};
  OrderLayout layout;
  const auto memory = read(g, model, items, layout);
  const auto processed = process(g, memory, layout);
  std::vector<std::vector<std::size_t>> orders;
  for (const auto& item : items) orders.push_back(item.order);
  auto result = write(g, processed, layout, orders, true);
  if (stats) score_orders(result.predicted, items, *stats);
  return result.loss;
}

template <typename T>
std::vector<std::vector<std::size_t>> OrderNetwork<T>::predict(
    const GenerationModel<T>& model, std::span<const ShuffledContext> items) const {
  if (items.empty()) return {};
  Graph<T> g(false);
  OrderLayout layout;
  const auto memory = read(g, model, items, layout);
  const auto processed = process(g, memory, layout);
  return write(g, processed, layout, {}, false).predicted;
}

void score_orders(std::span<const std::vector<std::size_t>> predicted,
                  std::span<const ShuffledContext> items, OrderStats& stats) {
  if (predicted.size() != items.size()) throw ContractError("prediction count mismatch");
  for (std::size_t r = 0; r < items.size(); ++r) {
    const auto& truth = items[r].order;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (i < predicted[r].size() && predicted[r][i] == truth[i]) ++hits;
    ++stats.instances;
    stats.positions += truth.size();
    stats.correct += hits;
    if (hits == truth.size()) ++stats.exact;
  }
}

template class GruCell<float>;
template class GruCell<double>;
template class OrderNetwork<float>;
template class OrderNetwork<double>;

}  // namespace auxgen

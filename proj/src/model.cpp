#include "auxgen/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace auxgen {

void ModelConfig::validate() const {
  if (vocab_size <= corpus::kReservedTokens.size()) throw ContractError("vocabulary too small");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ContractError("heads (" + std::to_string(heads) + ") must divide d_model (" +
                        std::to_string(d_model) + ")");
  }
  if (encoder_layers == 0) throw ContractError("need at least one encoder layer");
  if (ffn_multiplier == 0) throw ContractError("ffn multiplier must be positive");
  if (max_positions == 0 || segments < 2) throw ContractError("embedding tables too small");
}

AttentionMask generation_mask(std::size_t m, std::size_t t) {
  auto mask = AttentionMask::closed(m + t, m + t);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) mask.allow(i, j);
  for (std::size_t l = 0; l < t; ++l)
    for (std::size_t j = 0; j <= m + l; ++j) mask.allow(m + l, j);
  return mask;
}

AttentionMask word_order_mask(std::span<const int> utterance_of_token) {
  const auto n = utterance_of_token.size();
  auto mask = AttentionMask::closed(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (utterance_of_token[i] == utterance_of_token[j]) mask.allow(i, j);
  return mask;
}

BatchedMask batch_generation_mask(const corpus::Batch& batch) {
  auto out = BatchedMask::closed(batch.rows, batch.width, batch.width);
  for (std::size_t r = 0; r < batch.rows; ++r)
    out.place(r, generation_mask(batch.context_lengths[r], batch.response_length(r)));
  return out;
}

BatchedMask batch_word_order_mask(const corpus::Batch& batch) {
  auto out = BatchedMask::closed(batch.rows, batch.width, batch.width);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto n = batch.lengths[r];
    std::span<const int> utt(batch.utterances.data() + batch.index(r, 0), n);
    out.place(r, word_order_mask(utt));
  }
  return out;
}

BatchedMask batch_open_mask(const corpus::Batch& batch) {
  auto out = BatchedMask::closed(batch.rows, batch.width, batch.width);
  for (std::size_t r = 0; r < batch.rows; ++r)
    out.place(r, AttentionMask::open(batch.lengths[r], batch.lengths[r]));
  return out;
}

BatchedMask batch_decoder_mask(const corpus::Batch& batch) {
  const auto tmax = batch.max_response_length();
  auto out = BatchedMask::closed(batch.rows, tmax, batch.width);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto m = batch.context_lengths[r];
    auto mask = AttentionMask::closed(batch.response_length(r), m + batch.response_length(r));
    for (std::size_t l = 0; l < mask.rows; ++l)
      for (std::size_t j = 0; j <= m + l; ++j) mask.allow(l, j);
    out.place(r, mask);
  }
  return out;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& params, const std::string& prefix,
                                          std::size_t d, std::size_t heads, Rng& rng)
    : heads_(heads) {
  wq_ = params.add(prefix + ".wq", {d, d}, Init::glorot, rng);
  bq_ = params.add(prefix + ".bq", {d}, Init::zeros, rng);
  wk_ = params.add(prefix + ".wk", {d, d}, Init::glorot, rng);
  bk_ = params.add(prefix + ".bk", {d}, Init::zeros, rng);
  wv_ = params.add(prefix + ".wv", {d, d}, Init::glorot, rng);
  bv_ = params.add(prefix + ".bv", {d}, Init::zeros, rng);
  wo_ = params.add(prefix + ".wo", {d, d}, Init::glorot, rng);
  bo_ = params.add(prefix + ".bo", {d}, Init::zeros, rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(Graph<T>& g, const Tensor<T>& query_in,
                                         const Tensor<T>& key_in, const ops::AttentionShape& shape,
                                         const BatchedMask& mask, std::vector<T>* probs) const {
  auto q = ops::linear(g, query_in, wq_, bq_);
  auto k = ops::linear(g, key_in, wk_, bk_);
  auto v = ops::linear(g, key_in, wv_, bv_);
  auto o = ops::attention(g, q, k, v, shape, mask, probs);
  return ops::linear(g, o, wo_, bo_);
}

template <typename T>
void MultiHeadAttention<T>::extend(Graph<T>& g, KeyValueCache<T>& cache, const Tensor<T>& rows) const {
  auto k = ops::linear(g, rows, wk_, bk_);
  auto v = ops::linear(g, rows, wv_, bv_);
  if (cache.length() == 0) {
    cache.keys = k;
    cache.values = v;
  } else {
    cache.keys = ops::concat_rows(g, {cache.keys, k});
    cache.values = ops::concat_rows(g, {cache.values, v});
  }
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward_cached(Graph<T>& g, const Tensor<T>& query_in,
                                                const KeyValueCache<T>& cache,
                                                const BatchedMask& mask) const {
  auto q = ops::linear(g, query_in, wq_, bq_);
  const ops::AttentionShape shape{1, query_in.rows(), cache.length(), heads_};
  auto o = ops::attention(g, q, cache.keys, cache.values, shape, mask);
  return ops::linear(g, o, wo_, bo_);
}

template <typename T>
FeedForward<T>::FeedForward(ParameterStore<T>& params, const std::string& prefix, std::size_t d,
                            std::size_t inner, Rng& rng) {
  w1_ = params.add(prefix + ".w1", {inner, d}, Init::glorot, rng);
  b1_ = params.add(prefix + ".b1", {inner}, Init::zeros, rng);
  w2_ = params.add(prefix + ".w2", {d, inner}, Init::glorot, rng);
  b2_ = params.add(prefix + ".b2", {d}, Init::zeros, rng);
}

template <typename T>
Tensor<T> FeedForward<T>::forward(Graph<T>& g, const Tensor<T>& x) const {
  return ops::linear(g, ops::relu(g, ops::linear(g, x, w1_, b1_)), w2_, b2_);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& params, const std::string& prefix, std::size_t d) {
  Rng unused(0);
  gamma_ = params.add(prefix + ".gamma", {d}, Init::ones, unused);
  beta_ = params.add(prefix + ".beta", {d}, Init::zeros, unused);
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(Graph<T>& g, const Tensor<T>& x) const {
  return ops::layer_norm(g, x, gamma_, beta_);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterStore<T>& params, const std::string& prefix,
                                      const ModelConfig& cfg, Rng& rng)
    : attention_(params, prefix + ".attn", cfg.d_model, cfg.heads, rng),
      norm1_(params, prefix + ".norm1", cfg.d_model),
      ffn_(params, prefix + ".ffn", cfg.d_model, cfg.ffn_width(), rng),
      norm2_(params, prefix + ".norm2", cfg.d_model) {}

template <typename T>
Tensor<T> TransformerBlock<T>::finish(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& attended) const {
  auto y = norm1_.forward(g, ops::add(g, x, attended));
  return norm2_.forward(g, ops::add(g, y, ffn_.forward(g, y)));
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kv,
                                       const ops::AttentionShape& shape, const BatchedMask& mask,
                                       std::vector<T>* probs) const {
  return finish(g, x, attention_.forward(g, x, kv, shape, mask, probs));
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward_cached(Graph<T>& g, const Tensor<T>& x,
                                              const KeyValueCache<T>& cache,
                                              const BatchedMask& mask) const {
  return finish(g, x, attention_.forward_cached(g, x, cache, mask));
}

namespace {

template <typename T>
std::vector<TransformerBlock<T>> make_encoder(ParameterStore<T>& params, const ModelConfig& cfg,
                                              Rng& rng) {
  std::vector<TransformerBlock<T>> blocks;
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
    blocks.emplace_back(params, "gen.encoder." + std::to_string(i), cfg, rng);
  return blocks;
}

const ModelConfig& checked(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

template <typename T>
GenerationModel<T>::GenerationModel(ParameterStore<T>& params, const ModelConfig& config, Rng& rng)
    : config_(checked(config)),
      word_(params.add("gen.embed.word", {config.vocab_size, config.d_model}, Init::embedding, rng)),
      position_(params.add("gen.embed.position", {config.max_positions, config.d_model},
                           Init::embedding, rng)),
      segment_(params.add("gen.embed.segment", {config.segments, config.d_model}, Init::embedding,
                          rng)),
      encoder_(make_encoder(params, config, rng)),
      decoder_(params, "gen.decoder", config, rng) {
  output_ = params.add("gen.output.weight", {config.vocab_size, config.d_model}, Init::glorot, rng);
}

template <typename T>
Tensor<T> GenerationModel<T>::embed_tokens(Graph<T>& g, std::span<const int> tokens,
                                           std::span<const int> positions,
                                           std::span<const int> segments) const {
  std::vector<int> tok(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (positions[i] < 0) tok[i] = -1;
    if (positions[i] >= static_cast<int>(config_.max_positions)) {
      throw ContractError("position " + std::to_string(positions[i]) + " exceeds table of " +
                          std::to_string(config_.max_positions));
    }
    if (segments[i] >= static_cast<int>(config_.segments)) {
      throw ContractError("segment " + std::to_string(segments[i]) + " exceeds table of " +
                          std::to_string(config_.segments));
    }
  }
  auto w = ops::gather_rows(g, word_, std::span<const int>(tok));
  auto p = ops::gather_rows(g, position_, positions);
  auto s = ops::gather_rows(g, segment_, segments);
  return ops::add(g, ops::add(g, w, p), s);
}

template <typename T>
Tensor<T> GenerationModel<T>::embed(Graph<T>& g, const corpus::Batch& batch) const {
  return embed_tokens(g, batch.tokens, batch.positions, batch.segments);
}

template <typename T>
Tensor<T> GenerationModel<T>::encode(Graph<T>& g, const corpus::Batch& batch,
                                     const BatchedMask& mask, EncoderProbe<T>* probe) const {
  const ops::AttentionShape shape{batch.rows, batch.width, batch.width, config_.heads};
  auto x = embed(g, batch);
  if (probe) probe->layer_weights.clear();
  for (const auto& block : encoder_) {
    std::vector<T>* probs = nullptr;
    if (probe) probs = &probe->layer_weights.emplace_back();
    x = block.forward(g, x, x, shape, mask, probs);
  }
  return x;
}

template <typename T>
Tensor<T> GenerationModel<T>::response_logits(Graph<T>& g, const corpus::Batch& batch,
                                              const Tensor<T>& encoded) const {
  const auto tmax = batch.max_response_length();
  if (tmax == 0) throw ContractError("response_logits on a batch without responses");
  std::vector<int> rows(batch.rows * tmax, -1);
  for (std::size_t r = 0; r < batch.rows; ++r)
    for (std::size_t l = 0; l < batch.response_length(r); ++l)
      rows[r * tmax + l] = static_cast<int>(batch.index(r, batch.context_lengths[r] + l));
  auto queries = ops::gather_rows(g, encoded, std::span<const int>(rows));
  const ops::AttentionShape shape{batch.rows, tmax, batch.width, config_.heads};
  auto out = decoder_.forward(g, queries, encoded, shape, batch_decoder_mask(batch));
  return project_vocab(g, out);
}

template <typename T>
Tensor<T> GenerationModel<T>::project_vocab(Graph<T>& g, const Tensor<T>& rows) const {
  return ops::matmul_nt(g, rows, output_);
}

template <typename T>
typename GenerationModel<T>::MleResult GenerationModel<T>::mle_loss(Graph<T>& g,
                                                                    const corpus::Batch& batch) const {
  auto encoded = encode(g, batch, batch_generation_mask(batch));
  auto logits = response_logits(g, batch, encoded);
  const auto tmax = batch.max_response_length();
  std::vector<int> targets(batch.rows * tmax, -1);
  std::vector<T> weights(batch.rows * tmax, T(0));
  std::size_t scored_rows = 0;
  for (std::size_t r = 0; r < batch.rows; ++r)
    if (batch.response_length(r) > 0) ++scored_rows;
  MleResult result;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto t = batch.response_length(r);
    for (std::size_t l = 0; l < t; ++l) {
      targets[r * tmax + l] = batch.targets[batch.index(r, batch.context_lengths[r] + l)];
      weights[r * tmax + l] = T(1) / static_cast<T>(t * scored_rows);
    }
    result.tokens += t;
  }
  std::vector<T> row_nll;
  result.loss = ops::cross_entropy(g, logits, std::span<const int>(targets),
                                   std::span<const T>(weights), {}, &row_nll);
  for (std::size_t i = 0; i < row_nll.size(); ++i)
    if (targets[i] >= 0) result.nll_sum += static_cast<double>(row_nll[i]);
  return result;
}

template <typename T>
IncrementalState<T> GenerationModel<T>::start(const std::vector<std::vector<int>>& context) const {
  Graph<T> g(false);
  std::vector<int> tokens, positions, segments;
  for (std::size_t u = 0; u < context.size(); ++u)
    for (const int tok : context[u]) {
      positions.push_back(static_cast<int>(tokens.size()));
      tokens.push_back(tok);
      segments.push_back(static_cast<int>(u + 1));
    }
  IncrementalState<T> state;
  state.encoder.resize(encoder_.size());
  state.position = tokens.size();
  state.response_segment = static_cast<int>(context.size() + 1);
  const auto m = tokens.size();
  auto x = embed_tokens(g, tokens, positions, segments);
  BatchedMask open{1, m, m, std::vector<float>(m * m, 0.0f)};
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].extend(g, state.encoder[i], x);
    x = encoder_[i].forward_cached(g, x, state.encoder[i], open);
  }
  decoder_.extend(g, state.decoder, x);
  return state;
}

template <typename T>
std::vector<T> GenerationModel<T>::step(IncrementalState<T>& state, int token) const {
  Graph<T> g(false);
  const int pos = static_cast<int>(state.position);
  const int seg = state.response_segment;
  auto x = embed_tokens(g, std::span<const int>(&token, 1), std::span<const int>(&pos, 1),
                        std::span<const int>(&seg, 1));
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].extend(g, state.encoder[i], x);
    const auto len = state.encoder[i].length();
    BatchedMask open{1, 1, len, std::vector<float>(len, 0.0f)};
    x = encoder_[i].forward_cached(g, x, state.encoder[i], open);
  }
  decoder_.extend(g, state.decoder, x);
  const auto len = state.decoder.length();
  BatchedMask open{1, 1, len, std::vector<float>(len, 0.0f)};
  auto out = decoder_.forward_cached(g, x, state.decoder, open);
  ++state.position;
  auto logits = project_vocab(g, out);
  return {logits.data().begin(), logits.data().end()};
}

template <typename T>
std::vector<T> GenerationModel<T>::next_logits(const std::vector<std::vector<int>>& context,
                                               std::span<const int> prefix) const {
  Graph<T> g(false);
  std::vector<int> response(prefix.begin(), prefix.end());
  response.push_back(corpus::kEos);  // placeholder target; only inputs matter
  const corpus::SequenceView view{&context, &response};
  auto batch = corpus::pack(std::span<const corpus::SequenceView>(&view, 1), config_.max_positions);
  auto encoded = encode(g, batch, batch_generation_mask(batch));
  auto logits = response_logits(g, batch, encoded);
  const auto v = config_.vocab_size;
  const auto last = batch.response_length(0) - 1;
  const auto row = logits.data().subspan(last * v, v);
  return {row.begin(), row.end()};
}

const std::vector<float>* EmbeddingTable::find(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? nullptr : &vectors[it->second];
}

void EmbeddingTable::add(const std::string& token, std::vector<float> vec) {
  if (dim == 0) dim = vec.size();
  if (vec.size() != dim) {
    throw ContractError("expected " + std::to_string(dim) + " values, got " + std::to_string(vec.size()));
  }
  if (index_.count(token)) return;
  index_.emplace(token, tokens.size());
  tokens.push_back(token);
  vectors.push_back(std::move(vec));
}

EmbeddingTable load_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path.string());
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    std::string token;
    if (!(is >> token)) continue;
    std::vector<float> vec;
    float v = 0;
    while (is >> v) vec.push_back(v);
    if (vec.empty()) continue;
    try {
      table.add(token, std::move(vec));
    } catch (const ContractError& e) {
      throw ContractError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

template <typename T>
std::size_t apply_pretrained(const GenerationModel<T>& model, const corpus::Vocabulary& vocab,
                             const EmbeddingTable& table) {
  const auto d = model.config().d_model;
  if (table.dim != d) {
    throw ContractError("embedding file has dimension " + std::to_string(table.dim) +
                        " but the model uses " + std::to_string(d));
  }
  if (vocab.size() > model.config().vocab_size)
    throw ContractError("vocabulary is larger than the model's word table");
  Tensor<T> word = model.word_embedding();
  auto data = word.data();
  std::size_t replaced = 0;
  for (std::size_t id = corpus::kReservedTokens.size(); id < vocab.size(); ++id) {
    const auto* vec = table.find(vocab.token(static_cast<int>(id)));
    if (!vec) continue;
    for (std::size_t c = 0; c < d; ++c) data[id * d + c] = static_cast<T>((*vec)[c]);
    ++replaced;
  }
  return replaced;
}

template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class GenerationModel<float>;
template class GenerationModel<double>;
template std::size_t apply_pretrained(const GenerationModel<float>&, const corpus::Vocabulary&,
                                      const EmbeddingTable&);
template std::size_t apply_pretrained(const GenerationModel<double>&, const corpus::Vocabulary&,
                                      const EmbeddingTable&);

}  // namespace auxgen

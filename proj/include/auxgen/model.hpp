#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "auxgen/corpus.hpp"
#include "auxgen/ops.hpp"
#include "auxgen/params.hpp"
#include "auxgen/rng.hpp"
#include "auxgen/tensor.hpp"

namespace auxgen {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t encoder_layers = 1;
  std::size_t ffn_multiplier = 4;
  std::size_t max_positions = 300;  // M_p
  std::size_t segments = corpus::kDefaultWindow + 1;

  std::size_t ffn_width() const { return ffn_multiplier * d_model; }
  /// Throws ContractError on inconsistent sizes.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Attention masks

/// Seq2seq mask over m context tokens followed by t response tokens: the
/// context attends bidirectionally within itself, response offset l attends to
/// the whole context and response offsets <= l, context never sees the response.
AttentionMask generation_mask(std::size_t m, std::size_t t);

/// Block-diagonal mask: tokens attend only inside their own utterance.
AttentionMask word_order_mask(std::span<const int> utterance_of_token);

BatchedMask batch_generation_mask(const corpus::Batch& batch);
BatchedMask batch_word_order_mask(const corpus::Batch& batch);
/// Zero mask over the real tokens of each row; padding keys stay blocked.
BatchedMask batch_open_mask(const corpus::Batch& batch);
/// [rows x max_response x width]: response offset l sees positions <= m + l.
BatchedMask batch_decoder_mask(const corpus::Batch& batch);

// ---------------------------------------------------------------------------
// Layers

template <typename T>
struct KeyValueCache {
  Tensor<T> keys;
  Tensor<T> values;
  std::size_t length() const { return keys.defined() ? keys.rows() : 0; }
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(ParameterStore<T>& params, const std::string& prefix, std::size_t d,
                     std::size_t heads, Rng& rng);

  /// Projects queries from `query_in` and keys/values from `key_in`, attends,
  /// concatenates heads and applies the output projection.
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& query_in, const Tensor<T>& key_in,
                    const ops::AttentionShape& shape, const BatchedMask& mask,
                    std::vector<T>* probs = nullptr) const;

  /// Appends key/value projections of `rows` to a single-sequence cache.
  void extend(Graph<T>& g, KeyValueCache<T>& cache, const Tensor<T>& rows) const;
  /// Attention of `query_in` rows over everything in the cache.
  Tensor<T> forward_cached(Graph<T>& g, const Tensor<T>& query_in, const KeyValueCache<T>& cache,
                           const BatchedMask& mask) const;

  std::size_t heads() const { return heads_; }

 private:
  Tensor<T> wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  std::size_t heads_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward(ParameterStore<T>& params, const std::string& prefix, std::size_t d,
              std::size_t inner, Rng& rng);
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x) const;

 private:
  Tensor<T> w1_, b1_, w2_, b2_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm(ParameterStore<T>& params, const std::string& prefix, std::size_t d);
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x) const;

 private:
  Tensor<T> gamma_, beta_;
};

/// Post-norm transformer block: y = LN(x + MHA(x, kv)), out = LN(y + FFN(y)).
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(ParameterStore<T>& params, const std::string& prefix, const ModelConfig& cfg,
                   Rng& rng);

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& kv,
                    const ops::AttentionShape& shape, const BatchedMask& mask,
                    std::vector<T>* probs = nullptr) const;
  void extend(Graph<T>& g, KeyValueCache<T>& cache, const Tensor<T>& rows) const {
    attention_.extend(g, cache, rows);
  }
  Tensor<T> forward_cached(Graph<T>& g, const Tensor<T>& x, const KeyValueCache<T>& cache,
                           const BatchedMask& mask) const;

 private:
  Tensor<T> finish(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& attended) const;

  MultiHeadAttention<T> attention_;
  LayerNorm<T> norm1_;
  FeedForward<T> ffn_;
  LayerNorm<T> norm2_;
};

/// Attention weights captured during an encoder pass, one
/// [rows x heads x width x width] buffer per layer.
template <typename T>
struct EncoderProbe {
  std::vector<std::vector<T>> layer_weights;
};

/// Running state of cached greedy decoding for one context.
template <typename T>
struct IncrementalState {
  std::vector<KeyValueCache<T>> encoder;
  KeyValueCache<T> decoder;
  std::size_t position = 0;
  int response_segment = 0;
};

/// The single-layer transformer dialogue generator: summed word, position and
/// segment embeddings, a masked self-attention encoder, a cross-attention
/// decoder block and the shared output projection W_s.
template <typename T>
class GenerationModel {
 public:
  GenerationModel(ParameterStore<T>& params, const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  /// B(w) = WE[w] + P[pos] + SE[seg], zero rows on padding. Output [rows*width x d].
  Tensor<T> embed(Graph<T>& g, const corpus::Batch& batch) const;
  Tensor<T> embed_tokens(Graph<T>& g, std::span<const int> tokens, std::span<const int> positions,
                         std::span<const int> segments) const;

  Tensor<T> encode(Graph<T>& g, const corpus::Batch& batch, const BatchedMask& mask,
                   EncoderProbe<T>* probe = nullptr) const;

  /// Decoder over the response positions of an encoded batch: [rows*max_response x vocab].
  /// Row r*max_response + l predicts the target at response offset l.
  Tensor<T> response_logits(Graph<T>& g, const corpus::Batch& batch, const Tensor<T>& encoded) const;

  /// W_s applied to representation rows (shared by generation and recovery heads).
  Tensor<T> project_vocab(Graph<T>& g, const Tensor<T>& rows) const;
  const Tensor<T>& output_projection() const { return output_; }
  const Tensor<T>& word_embedding() const { return word_; }

  struct MleResult {
    Tensor<T> loss;       // mean NLL per response token, then mean over rows
    double nll_sum = 0;   // summed token NLL
    std::size_t tokens = 0;
  };
  MleResult mle_loss(Graph<T>& g, const corpus::Batch& batch) const;

  /// Encodes a context and fills the key/value caches.
  IncrementalState<T> start(const std::vector<std::vector<int>>& context) const;
  /// Feeds one response token and returns next-token logits.
  std::vector<T> step(IncrementalState<T>& state, int token) const;
  /// Full recomputation: next-token logits after [BOS] + prefix.
  std::vector<T> next_logits(const std::vector<std::vector<int>>& context,
                             std::span<const int> prefix) const;

 private:
  ModelConfig config_;
  Tensor<T> word_, position_, segment_, output_;
  std::vector<TransformerBlock<T>> encoder_;
  TransformerBlock<T> decoder_;
};

/// Pretrained embedding text file: "token v1 ... vd" per line.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<std::string> tokens;
  std::vector<std::vector<float>> vectors;
  const std::vector<float>* find(const std::string& token) const;
  /// Adds a vector; the first entry for a token wins. Throws on a dimension mismatch.
  void add(const std::string& token, std::vector<float> vec);

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

EmbeddingTable load_embedding_file(const std::filesystem::path& path);

/// Copies vectors of known tokens into the word table. Throws ContractError when
/// the file dimension differs from d. Returns the number of rows replaced.
template <typename T>
std::size_t apply_pretrained(const GenerationModel<T>& model, const corpus::Vocabulary& vocab,
                             const EmbeddingTable& table);

extern template class MultiHeadAttention<float>;
extern template class MultiHeadAttention<double>;
extern template class TransformerBlock<float>;
extern template class TransformerBlock<double>;
extern template class GenerationModel<float>;
extern template class GenerationModel<double>;

}  // namespace auxgen

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "auxgen/model.hpp"

namespace auxgen {

/// A context with its utterances permuted. order[i] is the original index
/// (0-based) of the utterance now at slot i.
struct ShuffledContext {
  std::vector<std::vector<int>> utterances;
  std::vector<std::size_t> order;
};

/// Non-identity uniform permutation of the utterances; nullopt when n < 2.
std::optional<ShuffledContext> shuffle_utterances(const std::vector<std::vector<int>>& context,
                                                  std::uint64_t seed);

/// Standard GRU cell:
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
/// Gate blocks are stacked (r, z, n) along the rows of w_ih [3d x in] and w_hh [3d x d].
template <typename T>
class GruCell {
 public:
  GruCell(ParameterStore<T>& params, const std::string& prefix, std::size_t input,
          std::size_t hidden, Rng& rng);
  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& h) const;
  std::size_t hidden() const { return hidden_; }

 private:
  Tensor<T> w_ih_, w_hh_, b_ih_, b_hh_;
  std::size_t hidden_;
};

/// Padded per-batch layout shared by the three stages: slot i of row b lives
/// at b * max_utterances + i.
struct OrderLayout {
  std::size_t rows = 0;
  std::size_t max_utterances = 0;
  std::vector<std::size_t> counts;
};

template <typename T>
struct ProcessResult {
  Tensor<T> attended;  // A: [rows*n_max x d]
  Tensor<T> states;    // h_1..h_n: [rows*n_max x d], zero past each row's count
  Tensor<T> final;     // h_n: [rows x d]
};

template <typename T>
struct WriteResult {
  Tensor<T> logits;  // u_i for every step: [n_max*rows x classes], step-major
  Tensor<T> loss;
  std::vector<std::vector<std::size_t>> predicted;  // argmax over valid classes per step
  /// Attention weights a_{i,t} per step: [n_max x rows*n_max].
  std::vector<std::vector<T>> attention;
};

struct OrderStats {
  std::size_t instances = 0;
  std::size_t positions = 0;
  std::size_t correct = 0;
  std::size_t exact = 0;
};

/// Read-process-write utterance order recovery over the generation encoder.
template <typename T>
class OrderNetwork {
 public:
  OrderNetwork(ParameterStore<T>& params, const ModelConfig& config, std::size_t max_utterances,
               Rng& rng);

  std::size_t classes() const { return classes_; }

  /// S_i: encoder outputs (zero mask) summed over each shuffled utterance. [rows*n_max x d]
  Tensor<T> read(Graph<T>& g, const GenerationModel<T>& model,
                 std::span<const ShuffledContext> items, OrderLayout& layout) const;

  /// A = MultiHead(S, S, S), then a GRU scan from h_0 = 0.
  ProcessResult<T> process(Graph<T>& g, const Tensor<T>& memory, const OrderLayout& layout) const;

  /// Pointer-free writer: Bahdanau attention over h_t, GRU from h_n and a
  /// position classifier masked to each row's count. `orders` supplies the
  /// teacher-forced inputs and the targets; the loss is left undefined when
  /// `orders` is empty.
  WriteResult<T> write(Graph<T>& g, const ProcessResult<T>& processed, const OrderLayout& layout,
                       std::span<const std::vector<std::size_t>> orders, bool teacher_forcing) const;

  /// Mean over instances of the mean per-slot NLL of the true order.
  Tensor<T> loss(Graph<T>& g, const GenerationModel<T>& model,
                 std::span<const ShuffledContext> items, OrderStats* stats = nullptr) const;

  /// Greedy order predictions (no teacher forcing).
  std::vector<std::vector<std::size_t>> predict(const GenerationModel<T>& model,
                                                std::span<const ShuffledContext> items) const;

 private:
  std::size_t d_;
  std::size_t classes_;
  MultiHeadAttention<T> attention_;
  GruCell<T> process_gru_;
  GruCell<T> write_gru_;
  Tensor<T> w1_, w2_, b1_, v_;
  Tensor<T> class_embedding_;  // classes_ + 1 rows; the last is the start symbol
  Tensor<T> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
};

/// Accumulates per-position accuracy and exact match of predicted orders.
void score_orders(std::span<const std::vector<std::size_t>> predicted,
                  std::span<const ShuffledContext> items, OrderStats& stats);

extern template class GruCell<float>;
extern template class GruCell<double>;
extern template class OrderNetwork<float>;
extern template class OrderNetwork<double>;

}  // namespace auxgen

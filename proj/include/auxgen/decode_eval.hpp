#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "auxgen/model.hpp"
#include "auxgen/order_net.hpp"
#include "auxgen/params.hpp"

namespace auxgen::eval {

using Sentence = std::vector<std::string>;

enum class DecodeMode { full, incremental };

/// Greedy search from [BOS]: argmax at every step, stopping at [EOS] (not
/// included) or after max_len tokens. [PAD], [BOS] and [MASK] are never emitted.
template <typename T>
std::vector<int> greedy_decode(const GenerationModel<T>& model,
                               const std::vector<std::vector<int>>& context, std::size_t max_len,
                               DecodeMode mode = DecodeMode::incremental);

/// exp(mean NLL over every response token of the set), teacher-forced.
template <typename T>
double perplexity(const GenerationModel<T>& model, std::span<const corpus::Dialogue> data,
                  std::size_t batch_size = 64);

struct BleuResult {
  double score = 0;
  std::array<std::size_t, 4> matches{};  // clipped n-gram matches
  std::array<std::size_t, 4> totals{};   // candidate n-grams
  std::array<double, 4> precisions{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  double brevity_penalty = 0;
};

/// Corpus-level BLEU-4 against one reference per candidate: clipped n-gram
/// precisions for n = 1..4, add-one smoothing for n >= 2, geometric mean and
/// brevity penalty.
BleuResult bleu4(std::span<const Sentence> candidates, std::span<const Sentence> references);

struct DistinctResult {
  double value = 0;
  std::size_t unique = 0;
  std::size_t total = 0;
};

/// Unique n-grams over total n-grams across all responses; 0 when there are none.
DistinctResult distinct_n(std::span<const Sentence> responses, std::size_t n);

struct EmbeddingScores {
  double average = 0;
  double greedy = 0;
  double extrema = 0;
  std::size_t pairs = 0;    // pairs scored
  std::size_t skipped = 0;  // pairs with an all-OOV side
};

/// Embedding Average, Greedy (symmetric) and Extrema, averaged over pairs.
/// Tokens missing from the table are ignored.
EmbeddingScores embedding_metrics(std::span<const Sentence> candidates,
                                  std::span<const Sentence> references, const EmbeddingTable& table);

/// Word-table fallback for embedding metrics; not comparable to scores computed
/// with external pretrained vectors.
EmbeddingTable table_from_model(const GenerationModel<float>& model, const corpus::Vocabulary& vocab);

struct SpeedReport {
  double full_ms_per_token = 0;
  double incremental_ms_per_token = 0;
  std::size_t tokens = 0;  // tokens generated per repetition
};

/// Wall-clock greedy decoding time per generated token, median over
/// repetitions after `warmup` discarded passes, single-threaded. Throws
/// ContractError when nothing is generated.
template <typename T>
SpeedReport decoding_speed(const GenerationModel<T>& model,
                           std::span<const std::vector<std::vector<int>>> contexts,
                           std::size_t max_len, std::size_t warmup = 1, std::size_t repetitions = 3);

struct ParamCounts {
  std::size_t training_total = 0;
  std::size_t generation_only = 0;
};

/// Generation-only counts cover "gen.*"; the training total adds the order
/// network and any other task-exclusive tensors.
template <typename T>
ParamCounts count_params(const ParameterStore<T>& params);

struct MetricReport {
  double ppl = 0;
  double bleu = 0;
  double distinct1 = 0;
  double distinct2 = 0;
  std::optional<EmbeddingScores> embedding;
  bool embedding_from_model = false;
  std::optional<SpeedReport> speed;
  ParamCounts params;
  std::size_t examples = 0;
};

/// CSV with a commented header describing the metric conventions.
std::string format_report_csv(const MetricReport& report);
std::string format_report_table(const MetricReport& report);

/// CSV: one row per slot position with its accuracy, then exact match.
std::string format_order_csv(const OrderStats& overall,
                             std::span<const std::vector<std::size_t>> predicted,
                             std::span<const ShuffledContext> items);

}  // namespace auxgen::eval

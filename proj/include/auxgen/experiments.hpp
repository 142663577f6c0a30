#pragma once
// Experiment drivers over prepared splits: ablation over auxiliary tasks and
// the encoder-depth sweep. Every run trains from the same seed and is scored
// from its best-validation checkpoint.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "auxgen/corpus.hpp"
#include "auxgen/decode_eval.hpp"
#include "auxgen/trainer.hpp"

namespace auxgen {

struct Splits {
  corpus::Vocabulary vocab;
  std::vector<corpus::Dialogue> train;
  std::vector<corpus::Dialogue> valid;
  std::vector<corpus::Dialogue> test;
};

/// Reads vocab.txt and train/valid/test.jsonl written by `prepare`.
Splits load_splits(const std::filesystem::path& dir);
void save_splits(const std::filesystem::path& dir, const Splits& splits);

struct EvalOptions {
  std::size_t max_len = 30;
  std::size_t batch_size = 64;
  const EmbeddingTable* embeddings = nullptr;  // model word table when null
  bool speed = false;
  std::size_t speed_contexts = 8;
};

struct Prediction {
  std::vector<std::string> context;
  std::string reference;
  std::string candidate;
};

/// Greedy decodes every dialogue and scores PPL, BLEU-4, distinct-1/2 and
/// embedding metrics.
eval::MetricReport evaluate_set(const ModelBundle<float>& model, const corpus::Vocabulary& vocab,
                                std::span<const corpus::Dialogue> data, const EvalOptions& options,
                                std::vector<Prediction>* predictions = nullptr);

std::string format_prediction_jsonl(const Prediction& p);

struct Variant {
  std::string name;
  TaskToggles tasks;
};

/// "full", then one row per task removed, then "- all tasks".
std::vector<Variant> table3_variants();

/// A single variant with `leave_out` removed from the full task set.
Variant leave_out_variant(const TaskToggles& leave_out);

/// Directory-safe name: "full", "no-wor", "no-wor-uor", "no-aux".
std::string variant_slug(const Variant& variant);

struct VariantResult {
  Variant variant;
  std::size_t encoder_layers = 1;
  TrainResult training;
  eval::MetricReport report;
};

struct RunOptions {
  EvalOptions eval;
  /// Initial word vectors applied before training.
  const EmbeddingTable* pretrained = nullptr;
  std::function<void(const std::string&)> progress;
};

/// Trains one configuration into `dir` and scores its best checkpoint on the
/// test split.
VariantResult run_variant(const TrainConfig& config, const Variant& variant, const Splits& data,
                          const std::filesystem::path& dir, const RunOptions& options);

/// Trains and evaluates every variant under `config`, writing each run to
/// out_dir/<slug>.
std::vector<VariantResult> ablate(const TrainConfig& config, const Splits& data,
                                  const std::vector<Variant>& variants,
                                  const std::filesystem::path& out_dir, const RunOptions& options);

/// Encoder depth x {no auxiliary tasks, all tasks}: |depths| * 2 runs.
std::vector<VariantResult> depth_sweep(const TrainConfig& config, const Splits& data,
                                       const std::vector<std::size_t>& depths,
                                       const std::filesystem::path& out_dir,
                                       const RunOptions& options);

std::string format_ablation_csv(const std::vector<VariantResult>& rows);
std::string format_sweep_csv(const std::vector<VariantResult>& rows);

}  // namespace auxgen

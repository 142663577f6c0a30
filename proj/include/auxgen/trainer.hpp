#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxgen/aux_tasks.hpp"
#include "auxgen/checkpoint.hpp"
#include "auxgen/model.hpp"
#include "auxgen/order_net.hpp"
#include "auxgen/params.hpp"

namespace auxgen {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TaskToggles {
  std::array<bool, 4> enabled{true, true, true, true};

  bool operator[](Task t) const { return enabled[static_cast<std::size_t>(t)]; }
  void set(Task t, bool on) { enabled[static_cast<std::size_t>(t)] = on; }
  bool any() const { return enabled[0] || enabled[1] || enabled[2] || enabled[3]; }
  static TaskToggles none() { return TaskToggles{{false, false, false, false}}; }
};

struct TrainConfig {
  std::size_t max_steps = 50000;       // T1
  std::size_t aux_epochs = 30;         // T2
  std::size_t batches_per_epoch = 0;   // N; 0 means one pass over the training set
  double alpha0 = 1.0;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  TaskToggles tasks;
  std::size_t encoder_layers = 1;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t patience = 3;
  double mask_rate = 0.15;
  std::size_t max_utterances = corpus::kDefaultWindow - 1;
  std::size_t max_positions = 300;
  std::size_t eval_batch_size = 64;
  /// Validation runs after every epoch when true.
  bool validate = true;

  /// N resolved against a dataset size.
  std::size_t epoch_length(std::size_t dataset_size) const;
  /// Throws ConfigError on out-of-range values.
  void validate_ranges() const;
};

/// Reads "key = value" lines; '#' starts a comment. Unknown keys and malformed
/// values throw ConfigError.
TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
/// Applies one "key=value" override.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
/// Inverse of parse_config; every key is written.
std::string format_config(const TrainConfig& config);
/// Parses "wor,uor" or "all"/"none" into the set of named tasks.
TaskToggles parse_task_list(const std::string& list);

/// alpha(t) = max(0, alpha0 * (T2*N - t) / (T2*N)): linear decay reaching
/// exactly 0 at t = T2*N.
double alpha_schedule(std::size_t step, double alpha0, std::size_t aux_epochs,
                      std::size_t batches_per_epoch);

ModelConfig model_config(const TrainConfig& config, std::size_t vocab_size);

/// Generation model plus the order network when uor is enabled.
template <typename T>
struct ModelBundle {
  ModelBundle(const ModelConfig& config, std::size_t max_utterances, bool with_order,
              std::uint64_t seed);

  ParameterStore<T> params;
  std::unique_ptr<GenerationModel<T>> generator;
  std::unique_ptr<OrderNetwork<T>> order;
  std::size_t max_utterances;
};

struct LossBreakdown {
  double total = 0;
  double mle = 0;
  std::array<double, 4> aux{};            // per-task batch loss; 0 when skipped
  std::array<std::size_t, 4> eligible{};  // instances per task
  double alpha = 0;
  double mle_nll_sum = 0;
  std::size_t mle_tokens = 0;
};

/// Counts executed auxiliary forward passes per task.
struct AuxCounters {
  std::array<std::size_t, 4> forwards{};
  std::size_t total() const { return forwards[0] + forwards[1] + forwards[2] + forwards[3]; }
};

/// Seed of the corruption draw for (task, batch row) at a training step.
std::uint64_t corruption_seed(std::uint64_t master, std::size_t step, Task task, std::size_t row);

/// L_full = L_mle + alpha * sum of enabled auxiliary losses on the same batch.
/// Auxiliary passes run only when alpha > 0.
template <typename T>
Tensor<T> joint_loss(Graph<T>& g, const ModelBundle<T>& model,
                     std::span<const corpus::Dialogue> batch, double alpha,
                     const TaskToggles& tasks, double mask_rate, std::uint64_t seed,
                     std::size_t step, LossBreakdown& breakdown, AuxCounters* counters = nullptr);

/// Early stopping on validation perplexity: stops after `patience` consecutive
/// epochs without a strict improvement on the best value.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records an epoch; returns true when this epoch is a new best.
  bool update(double ppl);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  double best() const { return best_; }
  std::size_t bad_epochs() const { return bad_epochs_; }
  void restore(double best, std::size_t bad_epochs) {
    best_ = best;
    bad_epochs_ = bad_epochs;
  }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

/// Summed response NLL and token count over a dataset, teacher-forced.
struct NllTotals {
  double nll = 0;
  std::size_t tokens = 0;
  double perplexity() const;
};
template <typename T>
NllTotals corpus_nll(const GenerationModel<T>& model, std::span<const corpus::Dialogue> data,
                     std::size_t batch_size);

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  std::optional<double> val_ppl;
};

struct TrainResult {
  std::size_t steps = 0;      // completed optimizer steps
  std::size_t epochs = 0;
  bool stopped_early = false;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::vector<StepRecord> log;
  AuxCounters counters;
};

struct TrainOptions {
  /// Writes best.ckpt, last.ckpt, train_log.csv and config.txt when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from out_dir/last.ckpt when it exists.
  bool resume = false;
  /// Stop after this many steps of the current invocation (for interruption tests).
  std::optional<std::size_t> stop_after;
  /// Called after every optimizer step.
  std::function<void(const StepRecord&)> on_step;
};

/// Algorithm 1: joint training with a decaying auxiliary weight, per-epoch
/// validation and early stopping. The model is trained in place.
TrainResult train(const TrainConfig& config, ModelBundle<float>& model,
                  std::span<const corpus::Dialogue> train_set,
                  std::span<const corpus::Dialogue> valid_set, const TrainOptions& options = {});

/// Checkpoint I/O: parameters, architecture metadata and optional optimizer
/// and trainer state.
struct TrainerState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
};
void save_model(const std::filesystem::path& path, const ModelBundle<float>& model,
                const Adagrad<float>* optimizer = nullptr, const TrainerState* state = nullptr);
/// Rebuilds a bundle from a checkpoint written by save_model.
std::unique_ptr<ModelBundle<float>> load_model(const std::filesystem::path& path,
                                               TrainerState* state = nullptr);
/// Copies checkpoint values into an existing bundle; throws CheckpointError on
/// missing or mis-shaped tensors.
void restore_parameters(const std::vector<NamedArray>& arrays, ModelBundle<float>& model,
                        Adagrad<float>* optimizer = nullptr);

std::string format_log_header();
std::string format_log_row(const StepRecord& record);

extern template struct ModelBundle<float>;
extern template struct ModelBundle<double>;

}  // namespace auxgen

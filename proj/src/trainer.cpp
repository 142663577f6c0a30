#include "auxgen/trainer.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace auxgen {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& value) {
  U out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for key '" + key + "'");
}

std::string task_list(const TaskToggles& tasks) {
  std::string out;
  for (const auto t : kAllTasks) {
    if (!tasks[t]) continue;
    if (!out.empty()) out += ',';
    out += task_name(t);
  }
  return out.empty() ? "none" : out;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t TrainConfig::epoch_length(std::size_t dataset_size) const {
  if (batches_per_epoch > 0) return batches_per_epoch;
  return std::max<std::size_t>(1, (dataset_size + batch_size - 1) / batch_size);
}

void TrainConfig::validate_ranges() const {
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) throw ConfigError("alpha0 must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in [0, 1]");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("heads must divide d_model");
  }
  if (encoder_layers == 0) throw ConfigError("encoder_layers must be positive");
  if (max_utterances < 2) throw ConfigError("max_utterances must be at least 2");
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be positive");
}

TaskToggles parse_task_list(const std::string& list) {
  const auto text = trim(list);
  if (text == "all") return {};
  auto out = TaskToggles::none();
  if (text == "none" || text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item == "all") return {};
    const auto t = parse_task(item);
    if (!t) throw ConfigError("unknown task '" + item + "' (expected wor, uor, mwr, mur or all)");
    out.set(*t, true);
  }
  return out;
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& raw) {
  const auto value = trim(raw);
  if (key == "max_steps") c.max_steps = parse_number<std::size_t>(key, value);
  else if (key == "aux_epochs") c.aux_epochs = parse_number<std::size_t>(key, value);
  else if (key == "batches_per_epoch") c.batches_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "alpha0") c.alpha0 = parse_number<double>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "tasks") c.tasks = parse_task_list(value);
  else if (key == "encoder_layers") c.encoder_layers = parse_number<std::size_t>(key, value);
  else if (key == "d_model") c.d_model = parse_number<std::size_t>(key, value);
  else if (key == "heads") c.heads = parse_number<std::size_t>(key, value);
  else if (key == "patience") c.patience = parse_number<std::size_t>(key, value);
  else if (key == "mask_rate") c.mask_rate = parse_number<double>(key, value);
  else if (key == "max_utterances") c.max_utterances = parse_number<std::size_t>(key, value);
  else if (key == "max_positions") c.max_positions = parse_number<std::size_t>(key, value);
  else if (key == "eval_batch_size") c.eval_batch_size = parse_number<std::size_t>(key, value);
  else if (key == "validate") c.validate = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, base);
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "max_steps = " << c.max_steps << '\n'
     << "aux_epochs = " << c.aux_epochs << '\n'
     << "batches_per_epoch = " << c.batches_per_epoch << '\n'
     << "alpha0 = " << shortest(c.alpha0) << '\n'
     << "learning_rate = " << shortest(c.learning_rate) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "seed = " << c.seed << '\n'
     << "tasks = " << task_list(c.tasks) << '\n'
     << "encoder_layers = " << c.encoder_layers << '\n'
     << "d_model = " << c.d_model << '\n'
     << "heads = " << c.heads << '\n'
     << "patience = " << c.patience << '\n'
     << "mask_rate = " << shortest(c.mask_rate) << '\n'
     << "max_utterances = " << c.max_utterances << '\n'
     << "max_positions = " << c.max_positions << '\n'
     << "eval_batch_size = " << c.eval_batch_size << '\n'
     << "validate = " << (c.validate ? "true" : "false") << '\n';
  return os.str();
}

double alpha_schedule(std::size_t step, double alpha0, std::size_t aux_epochs,
                      std::size_t batches_per_epoch) {
  const auto horizon = aux_epochs * batches_per_epoch;
  if (horizon == 0 || step >= horizon) return 0.0;
  return alpha0 * static_cast<double>(horizon - step) / static_cast<double>(horizon);
}

ModelConfig model_config(const TrainConfig& config, std::size_t vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = config.d_model;
  m.heads = config.heads;
  m.encoder_layers = config.encoder_layers;
  m.max_positions = config.max_positions;
  m.segments = config.max_utterances + 2;
  return m;
}

template <typename T>
ModelBundle<T>::ModelBundle(const ModelConfig& config, std::size_t max_utt, bool with_order,
                            std::uint64_t seed)
    : max_utterances(max_utt) {
  auto rng = Rng::derive(seed, Stream::init);
  generator = std::make_unique<GenerationModel<T>>(params, config, rng);
  if (with_order) {
    auto order_rng = Rng::derive(seed, Stream::init, {1});
    order = std::make_unique<OrderNetwork<T>>(params, config, max_utt, order_rng);
  }
}

std::uint64_t corruption_seed(std::uint64_t master, std::size_t step, Task task, std::size_t row) {
  return Rng::derive(master, Stream::corruption, {step, static_cast<std::uint64_t>(task), row})
      .next_u64();
}

template <typename T>
Tensor<T> joint_loss(Graph<T>& g, const ModelBundle<T>& model,
                     std::span<const corpus::Dialogue> batch_rows, double alpha,
                     const TaskToggles& tasks, double mask_rate, std::uint64_t seed,
                     std::size_t step, LossBreakdown& breakdown, AuxCounters* counters) {
  if (alpha < 0) throw ContractError("alpha must be non-negative");
  breakdown = {};
  breakdown.alpha = alpha;
  const auto& gen = *model.generator;

  std::vector<corpus::SequenceView> views;
  for (const auto& d : batch_rows) views.push_back({&d.context, &d.response});
  const auto batch = corpus::pack(views, gen.config().max_positions);
  const auto mle = gen.mle_loss(g, batch);
  breakdown.mle = static_cast<double>(mle.loss.item());
  breakdown.mle_nll_sum = mle.nll_sum;
  breakdown.mle_tokens = mle.tokens;

  std::vector<Tensor<T>> terms{mle.loss};
  std::vector<double> weights{1.0};
  auto add_term = [&](Task task, const Tensor<T>& loss, std::size_t eligible) {
    const auto k = static_cast<std::size_t>(task);
    breakdown.eligible[k] = eligible;
    if (counters) ++counters->forwards[k];
    breakdown.aux[k] = static_cast<double>(loss.item());
    terms.push_back(loss);
    weights.push_back(alpha);
  };

  if (alpha > 0) {
    for (const auto task : kAllTasks) {
      if (!tasks[task]) continue;
      if (task == Task::uor) {
        if (!model.order) throw ContractError("uor enabled without an order network");
        std::vector<ShuffledContext> items;
        for (std::size_t r = 0; r < batch_rows.size(); ++r) {
          if (batch_rows[r].context.size() > model.max_utterances) continue;
          auto s = shuffle_utterances(batch_rows[r].context, corruption_seed(seed, step, task, r));
          if (s) items.push_back(std::move(*s));
        }
        if (!items.empty()) add_term(task, model.order->loss(g, gen, items), items.size());
        continue;
      }
      std::vector<CorruptedContext> items;
      for (std::size_t r = 0; r < batch_rows.size(); ++r) {
        const auto& ctx = batch_rows[r].context;
        const auto s = corruption_seed(seed, step, task, r);
        std::optional<CorruptedContext> c;
        if (task == Task::wor) c = corrupt_word_order(ctx, s);
        else if (task == Task::mwr) c = corrupt_masked_words(ctx, mask_rate, s);
        else c = corrupt_masked_utterance(ctx, s);
        if (c) items.push_back(std::move(*c));
      }
      if (items.empty()) continue;
      const auto loss = task == Task::wor ? wor_loss(g, gen, items) : mask_recovery_loss(g, gen, items);
      add_term(task, loss, items.size());
    }
  }
  return ops::weighted_sum(g, terms, weights, &breakdown.total);
}

bool EarlyStopping::update(double ppl) {
  if (ppl < best_) {
    best_ = ppl;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

double NllTotals::perplexity() const {
  if (tokens == 0) throw ContractError("perplexity of an empty set");
  return std::exp(nll / static_cast<double>(tokens));
}

template <typename T>
NllTotals corpus_nll(const GenerationModel<T>& model, std::span<const corpus::Dialogue> data,
                     std::size_t batch_size) {
  NllTotals out;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(data.size(), begin + batch_size); ++i) idx.push_back(i);
    Graph<T> g(false);
    const auto batch = corpus::make_batch(data, idx, model.config().max_positions);
    const auto r = model.mle_loss(g, batch);
    out.nll += r.nll_sum;
    out.tokens += r.tokens;
  }
  return out;
}

namespace {

// Integers and doubles are stored exactly as four 16-bit chunks.
std::vector<float> encode_bits(std::uint64_t bits) {
  std::vector<float> out(4);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<float>((bits >> (16 * i)) & 0xFFFFu);
  return out;
}

std::uint64_t decode_bits(const NamedArray& a) {
  if (a.values.size() != 4) throw CheckpointError("malformed scalar entry " + a.name);
  std::uint64_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint64_t>(a.values[i]) << (16 * i);
  return bits;
}

NamedArray scalar_entry(const std::string& name, std::uint64_t bits) {
  return {name, {4}, encode_bits(bits)};
}

std::uint64_t read_scalar(const std::vector<NamedArray>& arrays, const std::string& name) {
  const auto* a = find_array(arrays, name);
  if (!a) throw CheckpointError("checkpoint lacks " + name);
  return decode_bits(*a);
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelBundle<float>& model,
                const Adagrad<float>* optimizer, const TrainerState* state) {
  std::vector<NamedArray> arrays;
  const auto& cfg = model.generator->config();
  arrays.push_back(scalar_entry("meta.vocab_size", cfg.vocab_size));
  arrays.push_back(scalar_entry("meta.d_model", cfg.d_model));
  arrays.push_back(scalar_entry("meta.heads", cfg.heads));
  arrays.push_back(scalar_entry("meta.encoder_layers", cfg.encoder_layers));
  arrays.push_back(scalar_entry("meta.ffn_multiplier", cfg.ffn_multiplier));
  arrays.push_back(scalar_entry("meta.max_positions", cfg.max_positions));
  arrays.push_back(scalar_entry("meta.segments", cfg.segments));
  arrays.push_back(scalar_entry("meta.max_utterances", model.max_utterances));
  arrays.push_back(scalar_entry("meta.has_order", model.order ? 1 : 0));
  const auto& entries = model.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = entries[i].tensor;
    arrays.push_back({entries[i].name, t.shape(), {t.data().begin(), t.data().end()}});
    if (optimizer) arrays.push_back({entries[i].name + ".acc", t.shape(), optimizer->accumulators()[i]});
  }
  if (state) {
    arrays.push_back(scalar_entry("trainer.step", state->step));
    arrays.push_back(scalar_entry("trainer.epoch", state->epoch));
    arrays.push_back(scalar_entry("trainer.best_ppl", std::bit_cast<std::uint64_t>(state->best_ppl)));
    arrays.push_back(scalar_entry("trainer.bad_epochs", state->bad_epochs));
  }
  std::filesystem::create_directories(std::filesystem::absolute(path).parent_path());
  save_checkpoint(path, arrays);
}

void restore_parameters(const std::vector<NamedArray>& arrays, ModelBundle<float>& model,
                        Adagrad<float>* optimizer) {
  const auto& entries = model.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto* a = find_array(arrays, e.name);
    if (!a) throw CheckpointError("checkpoint lacks parameter " + e.name);
    if (a->shape != e.tensor.shape()) {
      throw CheckpointError("parameter " + e.name + " has shape " + shape_string(a->shape) +
                            " in the checkpoint but " + shape_string(e.tensor.shape()) + " in the model");
    }
    std::copy(a->values.begin(), a->values.end(), e.tensor.data().begin());
    if (optimizer) {
      const auto* acc = find_array(arrays, e.name + ".acc");
      if (!acc) throw CheckpointError("checkpoint lacks optimizer state for " + e.name);
      optimizer->accumulators()[i] = acc->values;
    }
  }
}

std::unique_ptr<ModelBundle<float>> load_model(const std::filesystem::path& path,
                                               TrainerState* state) {
  const auto arrays = load_checkpoint(path);
  ModelConfig cfg;
  cfg.vocab_size = read_scalar(arrays, "meta.vocab_size");
  cfg.d_model = read_scalar(arrays, "meta.d_model");
  cfg.heads = read_scalar(arrays, "meta.heads");
  cfg.encoder_layers = read_scalar(arrays, "meta.encoder_layers");
  cfg.ffn_multiplier = read_scalar(arrays, "meta.ffn_multiplier");
  cfg.max_positions = read_scalar(arrays, "meta.max_positions");
  cfg.segments = read_scalar(arrays, "meta.segments");
  const auto max_utt = read_scalar(arrays, "meta.max_utterances");
  const bool has_order = read_scalar(arrays, "meta.has_order") != 0;
  auto model = std::make_unique<ModelBundle<float>>(cfg, max_utt, has_order, 0);
  restore_parameters(arrays, *model);
  if (state) {
    state->step = read_scalar(arrays, "trainer.step");
    state->epoch = read_scalar(arrays, "trainer.epoch");
    state->best_ppl = std::bit_cast<double>(read_scalar(arrays, "trainer.best_ppl"));
    state->bad_epochs = read_scalar(arrays, "trainer.bad_epochs");
  }
  return model;
}

std::string format_log_header() { return "step,alpha,l_mle,l_wor,l_uor,l_mwr,l_mur,l_full,val_ppl"; }

std::string format_log_row(const StepRecord& r) {
  std::string out = std::to_string(r.step) + ',' + shortest(r.loss.alpha) + ',' + shortest(r.loss.mle);
  for (const auto v : r.loss.aux) out += ',' + shortest(v);
  out += ',' + shortest(r.loss.total) + ',';
  if (r.val_ppl) out += shortest(*r.val_ppl);
  return out;
}

namespace {

// Keeps the header and the rows of steps before `step`.
void truncate_log(const std::filesystem::path& path, std::size_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (std::stoull(line.substr(0, line.find(','))) < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& config, ModelBundle<float>& model,
                  std::span<const corpus::Dialogue> train_set,
                  std::span<const corpus::Dialogue> valid_set, const TrainOptions& options) {
  config.validate_ranges();
  if (config.tasks[Task::uor] && !model.order) {
    throw ConfigError("uor is enabled but the model has no order network");
  }
  corpus::BatchSampler sampler(train_set.size(), config.batch_size, config.seed);
  const auto epoch_len = config.epoch_length(train_set.size());
  Adagrad<float> optimizer(model.params, static_cast<float>(config.learning_rate));
  EarlyStopping stopper(config.patience);
  TrainResult result;
  TrainerState state;

  std::filesystem::path log_path, best_path, last_path;
  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log_path = *options.out_dir / "train_log.csv";
    best_path = *options.out_dir / "best.ckpt";
    last_path = *options.out_dir / "last.ckpt";
    std::ofstream(*options.out_dir / "config.txt") << format_config(config);
    if (options.resume && std::filesystem::exists(last_path)) {
      const auto arrays = load_checkpoint(last_path);
      restore_parameters(arrays, model, &optimizer);
      state.step = read_scalar(arrays, "trainer.step");
      state.epoch = read_scalar(arrays, "trainer.epoch");
      state.best_ppl = std::bit_cast<double>(read_scalar(arrays, "trainer.best_ppl"));
      state.bad_epochs = read_scalar(arrays, "trainer.bad_epochs");
      stopper.restore(state.best_ppl, state.bad_epochs);
      truncate_log(log_path, state.step);
      log.open(log_path, std::ios::app);
    } else {
      log.open(log_path, std::ios::trunc);
      log << format_log_header() << '\n';
    }
  }
  result.best_ppl = stopper.best();
  result.epochs = state.epoch;

  auto snapshot = [&](const std::filesystem::path& path) {
    state.best_ppl = stopper.best();
    state.bad_epochs = stopper.bad_epochs();
    save_model(path, model, &optimizer, &state);
  };

  bool best_written = false;
  std::size_t ran = 0;
  std::vector<corpus::Dialogue> rows;
  while (state.step < config.max_steps) {
    if (options.stop_after && ran >= *options.stop_after) break;
    const auto t = state.step;
    const auto alpha = alpha_schedule(t, config.alpha0, config.aux_epochs, epoch_len);
    rows.clear();
    for (const auto i : sampler.indices(t)) rows.push_back(train_set[i]);

    Graph<float> g;
    StepRecord record;
    record.step = t;
    const auto loss = joint_loss(g, model, rows, alpha, config.tasks, config.mask_rate, config.seed,
                                 t, record.loss, &result.counters);
    if (!std::isfinite(record.loss.total)) {
      throw TrainingAborted("non-finite loss at step " + std::to_string(t) +
                            (options.out_dir ? "; best checkpoint kept at " + best_path.string() : ""));
    }
    g.backward(loss);
    optimizer.step();
    ++state.step;
    ++ran;

    if (state.step % epoch_len == 0) {
      ++state.epoch;
      if (config.validate && !valid_set.empty()) {
        const auto ppl = corpus_nll(*model.generator, valid_set, config.eval_batch_size).perplexity();
        record.val_ppl = ppl;
        if (stopper.update(ppl) && options.out_dir) {
          snapshot(best_path);
          best_written = true;
        }
      }
      if (options.out_dir) snapshot(last_path);
    }
    if (log.is_open()) log << format_log_row(record) << '\n' << std::flush;
    if (options.on_step) options.on_step(record);
    result.log.push_back(std::move(record));
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  if (options.out_dir) {
    snapshot(last_path);
    if (!best_written && !std::filesystem::exists(best_path)) snapshot(best_path);
  }
  result.steps = state.step;
  result.epochs = state.epoch;
  result.best_ppl = stopper.best();
  return result;
}

#define AUXGEN_INSTANTIATE(T)                                                                      \
  template struct ModelBundle<T>;                                                                  \
  template Tensor<T> joint_loss(Graph<T>&, const ModelBundle<T>&, std::span<const corpus::Dialogue>, \
                                double, const TaskToggles&, double, std::uint64_t, std::size_t,     \
                                LossBreakdown&, AuxCounters*);                                      \
  template NllTotals corpus_nll(const GenerationModel<T>&, std::span<const corpus::Dialogue>,       \
                                std::size_t);
AUXGEN_INSTANTIATE(float)
AUXGEN_INSTANTIATE(double)
#undef AUXGEN_INSTANTIATE

}  // namespace auxgen

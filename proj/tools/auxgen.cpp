// auxgen command-line driver: synth, prepare, train, generate, evaluate,
// ablate, depth-sweep and bench.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "auxgen/aux_tasks.hpp"
#include "auxgen/corpus.hpp"
#include "auxgen/decode_eval.hpp"
#include "auxgen/experiments.hpp"
#include "auxgen/kernels.hpp"
#include "auxgen/order_net.hpp"
#include "auxgen/rng.hpp"
#include "auxgen/synthetic.hpp"
#include "auxgen/trainer.hpp"

#ifndef AUXGEN_VERSION
#define AUXGEN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace auxgen;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " is required");
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

void require_prepared(const fs::path& dir) {
  require_file(dir, "--data");
  for (const char* f : {"vocab.txt", "train.jsonl", "valid.jsonl", "test.jsonl"}) {
    if (!fs::exists(dir / f)) throw UsageError(dir.string() + " is not a prepared data directory (missing " + f + ")");
  }
}

void write_snapshot(const fs::path& dir, const std::string& config_text) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << config_text;
  std::ofstream(dir / "version.txt") << AUXGEN_VERSION << '\n';
}

/// Training flags shared by train, ablate and depth-sweep. Unset flags leave
/// the config file (or built-in default) untouched.
struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d_model, heads, encoder_layers, t2, n_per_epoch, max_steps, batch_size;
  std::optional<std::size_t> patience, max_utterances;
  std::optional<double> alpha0, learning_rate;
  std::string tasks;
  std::string leave_out;
  std::vector<std::string> set;

  void add(CLI::App* app, bool with_task_flags) {
    app->add_option("--config", config, "key = value config file");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--d-model", d_model, "model width d");
    app->add_option("--heads", heads, "attention heads");
    app->add_option("--encoder-layers", encoder_layers, "encoder depth");
    app->add_option("--alpha0", alpha0, "initial auxiliary weight");
    app->add_option("--t2", t2, "epochs until the auxiliary weight reaches 0");
    app->add_option("--n-per-epoch", n_per_epoch, "batches per epoch (0 = one pass)");
    app->add_option("--max-steps", max_steps, "step budget T1");
    app->add_option("--batch-size", batch_size, "mini-batch size");
    app->add_option("--lr", learning_rate, "Adagrad learning rate");
    app->add_option("--patience", patience, "early-stopping patience in epochs");
    app->add_option("--max-utterances", max_utterances, "context utterance cap");
    app->add_option("--set", set, "extra key=value overrides")->take_all();
    if (with_task_flags) {
      app->add_option("--tasks", tasks, "enabled auxiliary tasks: wor,uor,mwr,mur | all | none");
      app->add_option("--leave-out", leave_out, "tasks to disable, e.g. wor,uor");
    }
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config.empty()) {
      require_file(config, "--config");
      c = load_config(config);
    }
    auto set_num = [&](const char* key, const auto& v) {
      if (v) apply_setting(c, key, std::to_string(*v));
    };
    set_num("seed", seed);
    set_num("d_model", d_model);
    set_num("heads", heads);
    set_num("encoder_layers", encoder_layers);
    set_num("aux_epochs", t2);
    set_num("batches_per_epoch", n_per_epoch);
    set_num("max_steps", max_steps);
    set_num("batch_size", batch_size);
    set_num("patience", patience);
    set_num("max_utterances", max_utterances);
    if (alpha0) c.alpha0 = *alpha0;
    if (learning_rate) c.learning_rate = *learning_rate;
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!tasks.empty()) c.tasks = parse_task_list(tasks);
    if (!leave_out.empty()) {
      const auto off = parse_task_list(leave_out);
      for (Task t : kAllTasks) {
        if (off[t]) c.tasks.set(t, false);
      }
    }
    c.validate_ranges();
    return c;
  }
};

struct EvalFlags {
  std::size_t max_len = 30;
  std::string embeddings;

  void add(CLI::App* app) {
    app->add_option("--max-len", max_len, "greedy decoding length cap");
    app->add_option("--embeddings", embeddings, "word vectors (token v1 .. vd per line)");
  }
};

std::optional<EmbeddingTable> load_embeddings(const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_file(path, "--embeddings");
  return load_embedding_file(path);
}

std::vector<corpus::Dialogue> pick_split(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "valid") return s.valid;
  if (name == "test") return s.test;
  throw UsageError("--split must be train, valid or test");
}

void log(const std::string& line) { std::cerr << line << std::endl; }

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string kind = "qa";
  std::size_t count = 200;
  std::uint64_t seed = 1;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto kind = synth::parse_kind(a.kind);
  if (!kind) throw UsageError("--kind must be qa, ordered or copy");
  synth::write_jsonl(a.out, synth::generate(*kind, a.count, a.seed));
  std::cout << "wrote " << a.count << " dialogues to " << a.out << '\n';
  return 0;
}

// ---- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string data;
  std::string out;
  std::size_t vocab_cap = 20000;
  std::size_t window = corpus::kDefaultWindow;
  std::size_t max_utt_len = corpus::kDefaultMaxUtteranceLength;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 1;
};

int run_prepare(const PrepareArgs& a) {
  require_file(a.data, "--data");
  if (a.valid_fraction < 0 || a.test_fraction < 0 || a.valid_fraction + a.test_fraction >= 1) {
    throw UsageError("split fractions must be non-negative and sum below 1");
  }
  const auto loaded = corpus::load_jsonl(a.data);
  for (const auto& e : loaded.errors) log("line " + std::to_string(e.line) + ": " + e.message);
  for (const auto& w : loaded.warnings) log(w);

  // Split whole conversations so windows of one dialogue never straddle splits.
  auto rng = Rng::derive(a.seed, Stream::batches, {0xD47A});
  const auto order = rng.permutation(loaded.dialogues.size());
  const auto n = order.size();
  const auto n_valid = static_cast<std::size_t>(a.valid_fraction * static_cast<double>(n));
  const auto n_test = static_cast<std::size_t>(a.test_fraction * static_cast<double>(n));
  std::vector<corpus::RawDialogue> parts[3];
  for (std::size_t i = 0; i < n; ++i) {
    const int part = i < n_valid ? 1 : i < n_valid + n_test ? 2 : 0;
    parts[part].push_back(loaded.dialogues[order[i]]);
  }

  std::vector<corpus::TextDialogue> text[3];
  corpus::WindowStats stats[3];
  for (int p = 0; p < 3; ++p) text[p] = corpus::window_and_truncate(parts[p], a.window, a.max_utt_len, &stats[p]);
  Splits s;
  s.vocab = corpus::Vocabulary::build(text[0], a.vocab_cap);
  s.train = corpus::encode_all(text[0], s.vocab);
  s.valid = corpus::encode_all(text[1], s.vocab);
  s.test = corpus::encode_all(text[2], s.vocab);
  save_splits(a.out, s);

  std::ostringstream cfg;
  cfg << "data = " << a.data << "\nvocab_cap = " << a.vocab_cap << "\nwindow = " << a.window
      << "\nmax_utt_len = " << a.max_utt_len << "\nvalid_fraction = " << a.valid_fraction
      << "\ntest_fraction = " << a.test_fraction << "\nseed = " << a.seed << '\n';
  write_snapshot(a.out, cfg.str());
  std::cout << "conversations " << n << " (skipped lines " << loaded.errors.size() << ")\n"
            << "instances train " << s.train.size() << " valid " << s.valid.size() << " test "
            << s.test.size() << "\nvocab " << s.vocab.size() << '\n';
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  bool resume = false;
  std::string embeddings;
  std::size_t dump_corrupted = 0;
};

void dump_corruptions(const fs::path& path, const TrainConfig& cfg, const Splits& s, std::size_t count) {
  std::ofstream out(path);
  const auto text = [&](const std::vector<std::vector<int>>& utts) {
    std::vector<std::string> v;
    for (const auto& u : utts) v.push_back(s.vocab.decode(u));
    return v;
  };
  for (std::size_t row = 0; row < std::min(count, s.train.size()); ++row) {
    const auto& ctx = s.train[row].context;
    for (Task t : kAllTasks) {
      if (!cfg.tasks[t]) continue;
      const auto seed = corruption_seed(cfg.seed, 0, t, row);
      nlohmann::json j;
      j["instance"] = row;
      j["task"] = task_name(t);
      j["original"] = text(ctx);
      if (t == Task::uor) {
        const auto sh = shuffle_utterances(ctx, seed);
        if (!sh) continue;
        j["corrupted"] = text(sh->utterances);
        j["order"] = sh->order;
      } else {
        std::optional<CorruptedContext> c;
        if (t == Task::wor) c = corrupt_word_order(ctx, seed);
        if (t == Task::mwr) c = corrupt_masked_words(ctx, cfg.mask_rate, seed);
        if (t == Task::mur) c = corrupt_masked_utterance(ctx, seed);
        if (!c) continue;
        j["corrupted"] = text(c->utterances);
        j["targets"] = c->targets;
      }
      out << j.dump() << '\n';
    }
  }
}

int run_train(const TrainArgs& a, const TrainFlags& flags) {
  require_prepared(a.data);
  if (a.out.empty()) throw UsageError("--out is required");
  const auto cfg = flags.resolve();
  const auto emb = load_embeddings(a.embeddings);
  const auto s = load_splits(a.data);

  std::unique_ptr<ModelBundle<float>> bundle;
  if (a.resume && fs::exists(fs::path(a.out) / "last.ckpt")) {
    bundle = load_model(fs::path(a.out) / "last.ckpt");
  } else {
    bundle = std::make_unique<ModelBundle<float>>(model_config(cfg, s.vocab.size()), cfg.max_utterances,
                                                  cfg.tasks[Task::uor], cfg.seed);
    if (emb) log("pretrained rows " + std::to_string(apply_pretrained(*bundle->generator, s.vocab, *emb)));
  }
  write_snapshot(a.out, format_config(cfg));
  if (a.dump_corrupted > 0) dump_corruptions(fs::path(a.out) / "corrupted.jsonl", cfg, s, a.dump_corrupted);

  TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = a.resume;
  opt.on_step = [](const StepRecord& r) {
    if (r.val_ppl) {
      std::ostringstream os;
      os << "step " << r.step << " alpha " << r.loss.alpha << " l_mle " << r.loss.mle << " val_ppl "
         << *r.val_ppl;
      log(os.str());
    }
  };
  const auto result = train(cfg, *bundle, s.train, s.valid, opt);
  std::cout << "steps " << result.steps << " epochs " << result.epochs << " best_val_ppl "
            << result.best_ppl << (result.stopped_early ? " (early stop)" : "") << '\n';
  return 0;
}

// ---- generate / evaluate -----------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  bool speed = false;
};

int run_generate(const EvalArgs& a, const EvalFlags& ef) {
  require_prepared(a.data);
  require_file(a.checkpoint, "--checkpoint");
  const auto s = load_splits(a.data);
  const auto model = load_model(a.checkpoint);
  const auto data = pick_split(s, a.split);
  std::ofstream file;
  if (!a.out.empty()) {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    file.open(a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  for (const auto& d : data) {
    const auto ids = eval::greedy_decode(*model->generator, d.context, ef.max_len);
    Prediction p;
    for (const auto& u : d.context) p.context.push_back(s.vocab.decode(u));
    std::vector<int> ref(d.response.begin(), d.response.end());
    if (!ref.empty() && ref.back() == corpus::kEos) ref.pop_back();
    p.reference = s.vocab.decode(ref);
    p.candidate = s.vocab.decode(ids);
    out << format_prediction_jsonl(p) << '\n';
  }
  return 0;
}

int run_evaluate(const EvalArgs& a, const EvalFlags& ef) {
  require_prepared(a.data);
  require_file(a.checkpoint, "--checkpoint");
  const auto emb = load_embeddings(ef.embeddings);
  const auto s = load_splits(a.data);
  const auto model = load_model(a.checkpoint);
  EvalOptions opt;
  opt.max_len = ef.max_len;
  opt.embeddings = emb ? &*emb : nullptr;
  opt.speed = a.speed;
  const auto data = pick_split(s, a.split);
  std::vector<Prediction> preds;
  const auto report = evaluate_set(*model, s.vocab, data, opt, a.out.empty() ? nullptr : &preds);
  std::cout << eval::format_report_table(report);
  if (!a.out.empty()) {
    std::ostringstream cfg;
    cfg << "data = " << a.data << "\ncheckpoint = " << a.checkpoint << "\nsplit = " << a.split
        << "\nmax_len = " << ef.max_len << "\nembeddings = " << ef.embeddings << '\n';
    write_snapshot(a.out, cfg.str());
    std::ofstream(fs::path(a.out) / "metrics.csv") << eval::format_report_csv(report);
    std::ofstream pf(fs::path(a.out) / "predictions.jsonl");
    for (const auto& p : preds) pf << format_prediction_jsonl(p) << '\n';
  }
  return 0;
}

// ---- ablate / depth-sweep ----------------------------------------------------

struct ExperimentArgs {
  std::string data;
  std::string out;
  std::vector<std::size_t> depths{1, 2, 3, 4, 5, 6};
};

RunOptions run_options(const EvalFlags& ef, const std::optional<EmbeddingTable>& emb) {
  RunOptions r;
  r.eval.max_len = ef.max_len;
  r.pretrained = emb ? &*emb : nullptr;
  r.eval.embeddings = r.pretrained;
  r.progress = log;
  return r;
}

int run_ablate(const ExperimentArgs& a, TrainFlags flags, const EvalFlags& ef) {
  require_prepared(a.data);
  if (a.out.empty()) throw UsageError("--out is required");
  const std::string leave_out = flags.leave_out;
  flags.leave_out.clear();
  flags.tasks = "all";
  const auto cfg = flags.resolve();
  const auto emb = load_embeddings(ef.embeddings);
  const auto s = load_splits(a.data);
  const auto variants = leave_out.empty() ? table3_variants()
                                          : std::vector<Variant>{leave_out_variant(parse_task_list(leave_out))};
  write_snapshot(a.out, format_config(cfg) + (leave_out.empty() ? "" : "# leave_out = " + leave_out + "\n"));
  const auto rows = ablate(cfg, s, variants, a.out, run_options(ef, emb));
  const auto csv = format_ablation_csv(rows);
  std::ofstream(fs::path(a.out) / "ablation.csv") << csv;
  std::cout << csv;
  return 0;
}

int run_depth_sweep(const ExperimentArgs& a, const TrainFlags& flags, const EvalFlags& ef) {
  require_prepared(a.data);
  if (a.out.empty()) throw UsageError("--out is required");
  if (a.depths.empty()) throw UsageError("--depths must name at least one depth");
  const auto cfg = flags.resolve();
  const auto emb = load_embeddings(ef.embeddings);
  const auto s = load_splits(a.data);
  std::ostringstream depths;
  for (std::size_t i = 0; i < a.depths.size(); ++i) depths << (i ? "," : "") << a.depths[i];
  write_snapshot(a.out, format_config(cfg) + "# depths = " + depths.str() + "\n");
  const auto rows = depth_sweep(cfg, s, a.depths, a.out, run_options(ef, emb));
  const auto csv = format_sweep_csv(rows);
  std::ofstream(fs::path(a.out) / "depth_sweep.csv") << csv;
  std::cout << csv;
  return 0;
}

// ---- bench -------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::size_t context_tokens = 120;
  std::size_t contexts = 4;
  std::size_t vocab = 2000;
  std::size_t repetitions = 3;
};

int run_bench(const BenchArgs& a, const TrainFlags& flags, const EvalFlags& ef) {
  std::unique_ptr<ModelBundle<float>> model;
  TrainConfig cfg = flags.resolve();
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "--checkpoint");
    model = load_model(a.checkpoint);
  } else {
    model = std::make_unique<ModelBundle<float>>(model_config(cfg, a.vocab), cfg.max_utterances, false, cfg.seed);
  }
  const auto& mc = model->generator->config();
  if (a.context_tokens + ef.max_len + 1 > mc.max_positions) {
    throw UsageError("--context-tokens plus --max-len exceeds the position table");
  }
  auto rng = Rng::derive(cfg.seed, Stream::evaluation, {7});
  std::vector<std::vector<std::vector<int>>> contexts(a.contexts);
  const std::size_t per_utt = 20;
  for (auto& ctx : contexts) {
    for (std::size_t left = a.context_tokens; left > 0;) {
      const auto len = std::min(left, per_utt);
      std::vector<int> u(len);
      for (auto& id : u) id = 5 + static_cast<int>(rng.below(mc.vocab_size - 5));
      ctx.push_back(std::move(u));
      left -= len;
    }
  }
  const auto speed = eval::decoding_speed(*model->generator,
                                          std::span<const std::vector<std::vector<int>>>(contexts),
                                          ef.max_len, 1, a.repetitions);
  std::cout << "context_tokens " << a.context_tokens << " generated_tokens " << speed.tokens << '\n'
            << "full_ms_per_token " << speed.full_ms_per_token << '\n'
            << "incremental_ms_per_token " << speed.incremental_ms_per_token << '\n'
            << "speedup " << speed.full_ms_per_token / speed.incremental_ms_per_token << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auxgen: dialogue generation with self-supervised auxiliary tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(AUXGEN_VERSION));
  int threads = 0;
  app.add_option("--device-threads", threads, "OpenMP threads for the kernels (0 = runtime default)");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic JSONL corpus");
  synth_cmd->add_option("--kind", synth_args.kind, "qa | ordered | copy");
  synth_cmd->add_option("--count", synth_args.count, "dialogues");
  synth_cmd->add_option("--seed", synth_args.seed, "seed");
  synth_cmd->add_option("--out", synth_args.out, "output JSONL")->required();

  PrepareArgs prep;
  auto* prep_cmd = app.add_subcommand("prepare", "build vocabulary and windowed instances");
  prep_cmd->add_option("--data", prep.data, "raw JSONL dialogues")->required();
  prep_cmd->add_option("--out", prep.out, "output directory")->required();
  prep_cmd->add_option("--vocab-cap", prep.vocab_cap, "vocabulary size including reserved tokens");
  prep_cmd->add_option("--window", prep.window, "turns per instance including the response");
  prep_cmd->add_option("--max-utt-len", prep.max_utt_len, "tokens kept per utterance");
  prep_cmd->add_option("--valid-fraction", prep.valid_fraction, "share of conversations for validation");
  prep_cmd->add_option("--test-fraction", prep.test_fraction, "share of conversations for test");
  prep_cmd->add_option("--seed", prep.seed, "split seed");

  TrainArgs train_args;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", train_args.data, "prepared data directory")->required();
  train_cmd->add_option("--out", train_args.out, "run directory")->required();
  train_cmd->add_flag("--resume", train_args.resume, "continue from out/last.ckpt");
  train_cmd->add_option("--embeddings", train_args.embeddings, "initial word vectors");
  train_cmd->add_option("--dump-corrupted", train_args.dump_corrupted,
                        "write the corruptions of the first N training instances to out/corrupted.jsonl");
  train_flags.add(train_cmd, true);

  EvalArgs gen_args;
  EvalFlags gen_flags;
  auto* gen_cmd = app.add_subcommand("generate", "greedy responses as JSONL");
  gen_cmd->add_option("--data", gen_args.data, "prepared data directory")->required();
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "model checkpoint");
  gen_cmd->add_option("--split", gen_args.split, "train | valid | test");
  gen_cmd->add_option("--out", gen_args.out, "output file (stdout when omitted)");
  gen_flags.add(gen_cmd);

  EvalArgs eval_args;
  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("evaluate", "PPL, BLEU, distinct and embedding metrics");
  eval_cmd->add_option("--data", eval_args.data, "prepared data directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint");
  eval_cmd->add_option("--split", eval_args.split, "train | valid | test");
  eval_cmd->add_option("--out", eval_args.out, "directory for metrics.csv and predictions.jsonl");
  eval_cmd->add_flag("--speed", eval_args.speed, "also time full vs incremental decoding");
  eval_flags.add(eval_cmd);

  ExperimentArgs abl_args;
  TrainFlags abl_flags;
  EvalFlags abl_eval;
  auto* abl_cmd = app.add_subcommand("ablate", "train and score the task ablation variants");
  abl_cmd->add_option("--data", abl_args.data, "prepared data directory")->required();
  abl_cmd->add_option("--out", abl_args.out, "output directory")->required();
  abl_flags.add(abl_cmd, false);
  abl_cmd->add_option("--leave-out", abl_flags.leave_out, "run one variant with these tasks removed");
  abl_eval.add(abl_cmd);

  ExperimentArgs sweep_args;
  TrainFlags sweep_flags;
  EvalFlags sweep_eval;
  auto* sweep_cmd = app.add_subcommand("depth-sweep", "encoder depth with and without auxiliary tasks");
  sweep_cmd->add_option("--data", sweep_args.data, "prepared data directory")->required();
  sweep_cmd->add_option("--out", sweep_args.out, "output directory")->required();
  sweep_cmd->add_option("--depths", sweep_args.depths, "encoder depths")->delimiter(',');
  sweep_flags.add(sweep_cmd, false);
  sweep_eval.add(sweep_cmd);

  BenchArgs bench_args;
  TrainFlags bench_flags;
  EvalFlags bench_eval;
  bench_eval.max_len = 20;
  auto* bench_cmd = app.add_subcommand("bench", "full vs incremental decoding time per token");
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "model checkpoint (random init when omitted)");
  bench_cmd->add_option("--context-tokens", bench_args.context_tokens, "tokens per context");
  bench_cmd->add_option("--contexts", bench_args.contexts, "contexts per repetition");
  bench_cmd->add_option("--vocab", bench_args.vocab, "vocabulary size of the random model");
  bench_cmd->add_option("--repetitions", bench_args.repetitions, "timed repetitions");
  bench_flags.add(bench_cmd, false);
  bench_cmd->add_option("--max-len", bench_eval.max_len, "tokens generated per context");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  if (threads > 0) kernels::set_threads(threads);

  try {
    if (*synth_cmd) return run_synth(synth_args);
    if (*prep_cmd) return run_prepare(prep);
    if (*train_cmd) return run_train(train_args, train_flags);
    if (*gen_cmd) return run_generate(gen_args, gen_flags);
    if (*eval_cmd) return run_evaluate(eval_args, eval_flags);
    if (*abl_cmd) return run_ablate(abl_args, abl_flags, abl_eval);
    if (*sweep_cmd) return run_depth_sweep(sweep_args, sweep_flags, sweep_eval);
    if (*bench_cmd) return run_bench(bench_args, bench_flags, bench_eval);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

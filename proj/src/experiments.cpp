#include "auxgen/experiments.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace auxgen {

namespace {

std::string token_text(const corpus::Vocabulary& vocab, std::span<const int> ids) {
  return vocab.decode(ids);
}

eval::Sentence to_sentence(const corpus::Vocabulary& vocab, std::span<const int> ids) {
  eval::Sentence out;
  for (int id : ids) {
    if (id == corpus::kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string tasks_label(const TaskToggles& tasks) {
  std::string out;
  for (Task t : kAllTasks) {
    if (!tasks[t]) continue;
    if (!out.empty()) out += '+';
    out += task_name(t);
  }
  return out.empty() ? "none" : out;
}

}  // namespace

Splits load_splits(const std::filesystem::path& dir) {
  Splits s;
  s.vocab = corpus::Vocabulary::load(dir / "vocab.txt");
  s.train = corpus::load_instances(dir / "train.jsonl");
  s.valid = corpus::load_instances(dir / "valid.jsonl");
  s.test = corpus::load_instances(dir / "test.jsonl");
  return s;
}

void save_splits(const std::filesystem::path& dir, const Splits& splits) {
  std::filesystem::create_directories(dir);
  splits.vocab.save(dir / "vocab.txt");
  corpus::save_instances(dir / "train.jsonl", splits.train);
  corpus::save_instances(dir / "valid.jsonl", splits.valid);
  corpus::save_instances(dir / "test.jsonl", splits.test);
}

eval::MetricReport evaluate_set(const ModelBundle<float>& model, const corpus::Vocabulary& vocab,
                                std::span<const corpus::Dialogue> data, const EvalOptions& options,
                                std::vector<Prediction>* predictions) {
  const auto& gen = *model.generator;
  eval::MetricReport r;
  r.examples = data.size();
  r.params = eval::count_params(model.params);
  if (data.empty()) return r;
  r.ppl = eval::perplexity(gen, data, options.batch_size);

  std::vector<eval::Sentence> candidates, references;
  candidates.reserve(data.size());
  references.reserve(data.size());
  for (const auto& d : data) {
    const auto out = eval::greedy_decode(gen, d.context, options.max_len);
    candidates.push_back(to_sentence(vocab, out));
    references.push_back(to_sentence(vocab, d.response));
    if (predictions) {
      Prediction p;
      for (const auto& u : d.context) p.context.push_back(token_text(vocab, u));
      const auto& ref = d.response;
      const std::size_t ref_len = !ref.empty() && ref.back() == corpus::kEos ? ref.size() - 1 : ref.size();
      p.reference = token_text(vocab, std::span(ref.data(), ref_len));
      p.candidate = token_text(vocab, out);
      predictions->push_back(std::move(p));
    }
  }
  r.bleu = eval::bleu4(candidates, references).score;
  r.distinct1 = eval::distinct_n(candidates, 1).value;
  r.distinct2 = eval::distinct_n(candidates, 2).value;
  if (options.embeddings) {
    r.embedding = eval::embedding_metrics(candidates, references, *options.embeddings);
  } else {
    const auto table = eval::table_from_model(gen, vocab);
    r.embedding = eval::embedding_metrics(candidates, references, table);
    r.embedding_from_model = true;
  }
  if (options.speed) {
    std::vector<std::vector<std::vector<int>>> contexts;
    for (std::size_t i = 0; i < std::min(options.speed_contexts, data.size()); ++i) {
      contexts.push_back(data[i].context);
    }
    try {
      r.speed = eval::decoding_speed(gen, std::span<const std::vector<std::vector<int>>>(contexts),
                                     options.max_len);
    } catch (const ContractError&) {
      // Every context decoded straight to [EOS]; no per-token time exists.
    }
  }
  return r;
}

std::string format_prediction_jsonl(const Prediction& p) {
  nlohmann::json j;
  j["context"] = p.context;
  j["reference"] = p.reference;
  j["candidate"] = p.candidate;
  return j.dump();
}

std::vector<Variant> table3_variants() {
  std::vector<Variant> out{{"full", TaskToggles{}}};
  for (Task t : kAllTasks) {
    TaskToggles tasks;
    tasks.set(t, false);
    out.push_back({"-" + std::string(task_name(t)), tasks});
  }
  out.push_back({"-all", TaskToggles::none()});
  return out;
}

Variant leave_out_variant(const TaskToggles& leave_out) {
  if (!leave_out.any()) return {"full", TaskToggles{}};
  TaskToggles tasks;
  std::string name;
  for (Task t : kAllTasks) {
    if (!leave_out[t]) continue;
    tasks.set(t, false);
    name += "-" + std::string(task_name(t));
  }
  if (!tasks.any()) name = "-all";
  return {name, tasks};
}

std::string variant_slug(const Variant& variant) {
  if (!variant.tasks.any()) return "no-aux";
  std::string removed;
  for (Task t : kAllTasks) {
    if (variant.tasks[t]) continue;
    removed += "-" + std::string(task_name(t));
  }
  return removed.empty() ? "full" : "no" + removed;
}

VariantResult run_variant(const TrainConfig& config, const Variant& variant, const Splits& data,
                          const std::filesystem::path& dir, const RunOptions& options) {
  TrainConfig cfg = config;
  cfg.tasks = variant.tasks;
  cfg.validate_ranges();
  ModelBundle<float> bundle(model_config(cfg, data.vocab.size()), cfg.max_utterances,
                            cfg.tasks[Task::uor], cfg.seed);
  if (options.pretrained) apply_pretrained(*bundle.generator, data.vocab, *options.pretrained);

  std::filesystem::create_directories(dir);
  TrainOptions train_options;
  train_options.out_dir = dir;
  if (options.progress) {
    train_options.on_step = [&](const StepRecord& rec) {
      if (!rec.val_ppl) return;
      std::ostringstream os;
      os << variant.name << " step " << rec.step << " val_ppl " << *rec.val_ppl;
      options.progress(os.str());
    };
  }
  VariantResult result;
  result.variant = variant;
  result.encoder_layers = cfg.encoder_layers;
  result.training = train(cfg, bundle, data.train, data.valid, train_options);

  const auto best = load_model(dir / "best.ckpt");
  result.report = evaluate_set(*best, data.vocab, data.test, options.eval);
  std::ofstream(dir / "metrics.csv") << eval::format_report_csv(result.report);
  return result;
}

std::vector<VariantResult> ablate(const TrainConfig& config, const Splits& data,
                                  const std::vector<Variant>& variants,
                                  const std::filesystem::path& out_dir, const RunOptions& options) {
  std::vector<VariantResult> rows;
  for (const auto& v : variants) {
    if (options.progress) options.progress("training " + v.name);
    rows.push_back(run_variant(config, v, data, out_dir / variant_slug(v), options));
  }
  return rows;
}

std::vector<VariantResult> depth_sweep(const TrainConfig& config, const Splits& data,
                                       const std::vector<std::size_t>& depths,
                                       const std::filesystem::path& out_dir,
                                       const RunOptions& options) {
  std::vector<VariantResult> rows;
  for (std::size_t depth : depths) {
    TrainConfig cfg = config;
    cfg.encoder_layers = depth;
    for (bool aux : {false, true}) {
      const Variant v{aux ? "full" : "-all", aux ? TaskToggles{} : TaskToggles::none()};
      const auto dir = out_dir / ("layers" + std::to_string(depth) + "-" + variant_slug(v));
      if (options.progress) {
        options.progress("training " + std::to_string(depth) + " layers, " + tasks_label(v.tasks));
      }
      rows.push_back(run_variant(cfg, v, data, dir, options));
    }
  }
  return rows;
}

std::string format_ablation_csv(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "variant,tasks,ppl,bleu4,distinct1,distinct2,emb_average,emb_greedy,emb_extrema,steps,"
        "best_val_ppl\n";
  for (const auto& r : rows) {
    os << r.variant.name << ',' << tasks_label(r.variant.tasks) << ',' << r.report.ppl << ','
       << r.report.bleu << ',' << r.report.distinct1 << ',' << r.report.distinct2 << ',';
    if (r.report.embedding) {
      os << r.report.embedding->average << ',' << r.report.embedding->greedy << ','
         << r.report.embedding->extrema << ',';
    } else {
      os << ",,,";
    }
    os << r.training.steps << ',' << r.training.best_ppl << '\n';
  }
  return os.str();
}

std::string format_sweep_csv(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "encoder_layers,aux,ppl,bleu4,distinct1,distinct2,steps,best_val_ppl\n";
  for (const auto& r : rows) {
    os << r.encoder_layers << ',' << (r.variant.tasks.any() ? "all" : "none") << ',' << r.report.ppl
       << ',' << r.report.bleu << ',' << r.report.distinct1 << ',' << r.report.distinct2 << ','
       << r.training.steps << ',' << r.training.best_ppl << '\n';
  }
  return os.str();
}

}  // namespace auxgen

#include "auxgen/decode_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "auxgen/kernels.hpp"
#include "auxgen/trainer.hpp"

namespace auxgen::eval {

namespace {

template <typename T>
int pick_token(std::span<const T> logits) {
  int best = -1;
  T best_value = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto id = static_cast<int>(i);
    if (id == corpus::kPad || id == corpus::kBos || id == corpus::kMask) continue;
    if (best < 0 || logits[i] > best_value) {
      best = id;
      best_value = logits[i];
    }
  }
  return best;
}

std::size_t context_length(const std::vector<std::vector<int>>& context) {
  std::size_t m = 0;
  for (const auto& u : context) m += u.size();
  return m;
}

}  // namespace

template <typename T>
std::vector<int> greedy_decode(const GenerationModel<T>& model,
                               const std::vector<std::vector<int>>& context, std::size_t max_len,
                               DecodeMode mode) {
  std::vector<int> out;
  if (max_len == 0) return out;
  const auto m = context_length(context);
  const auto room = model.config().max_positions > m ? model.config().max_positions - m : 0;
  const auto limit = std::min(max_len, room);
  if (limit == 0) return out;

  if (mode == DecodeMode::full) {
    for (;;) {
      const auto logits = model.next_logits(context, out);
      const int tok = pick_token<T>(logits);
      if (tok == corpus::kEos) break;
      out.push_back(tok);
      if (out.size() >= limit) break;
    }
    return out;
  }
  auto state = model.start(context);
  auto logits = model.step(state, corpus::kBos);
  for (;;) {
    const int tok = pick_token<T>(logits);
    if (tok == corpus::kEos) break;
    out.push_back(tok);
    if (out.size() >= limit) break;
    logits = model.step(state, tok);
  }
  return out;
}

template <typename T>
double perplexity(const GenerationModel<T>& model, std::span<const corpus::Dialogue> data,
                  std::size_t batch_size) {
  return corpus_nll(model, data, batch_size).perplexity();
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++out[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<double>> lookup(const Sentence& s, const EmbeddingTable& table) {
  std::vector<std::vector<double>> out;
  for (const auto& tok : s)
    if (const auto* v = table.find(tok)) out.emplace_back(v->begin(), v->end());
  return out;
}

double greedy_match(const std::vector<std::vector<double>>& from,
                    const std::vector<std::vector<double>>& to) {
  double total = 0;
  for (const auto& a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& b : to) best = std::max(best, cosine(a, b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

std::vector<double> mean_vector(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out(vs.front().size(), 0.0);
  for (const auto& v : vs)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  for (auto& x : out) x /= static_cast<double>(vs.size());
  return out;
}

std::vector<double> extrema_vector(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out(vs.front().size(), 0.0);
  for (const auto& v : vs)
    for (std::size_t i = 0; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(out[i])) out[i] = v[i];
  return out;
}

}  // namespace

BleuResult bleu4(std::span<const Sentence> candidates, std::span<const Sentence> references) {
  if (candidates.size() != references.size()) {
    throw ContractError("bleu4: " + std::to_string(candidates.size()) + " candidates but " +
                        std::to_string(references.size()) + " references");
  }
  BleuResult r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.candidate_length += candidates[i].size();
    r.reference_length += references[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand = ngrams(candidates[i], n);
      const auto ref = ngrams(references[i], n);
      for (const auto& [gram, count] : cand) {
        r.totals[n - 1] += count;
        if (const auto it = ref.find(gram); it != ref.end()) r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  for (std::size_t n = 0; n < 4; ++n) {
    if (n == 0) {
      r.precisions[0] = r.totals[0] ? static_cast<double>(r.matches[0]) / static_cast<double>(r.totals[0]) : 0.0;
    } else {
      r.precisions[n] = static_cast<double>(r.matches[n] + 1) / static_cast<double>(r.totals[n] + 1);
    }
  }
  if (r.candidate_length == 0) return r;
  r.brevity_penalty = r.candidate_length > r.reference_length
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(r.reference_length) /
                                               static_cast<double>(r.candidate_length));
  if (r.precisions[0] == 0) return r;
  double log_sum = 0;
  for (const auto p : r.precisions) log_sum += std::log(p);
  r.score = r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

DistinctResult distinct_n(std::span<const Sentence> responses, std::size_t n) {
  if (n == 0) throw ContractError("distinct_n needs n >= 1");
  std::set<std::vector<std::string>> seen;
  DistinctResult r;
  for (const auto& s : responses)
    for (const auto& [gram, count] : ngrams(s, n)) {
      seen.insert(gram);
      r.total += count;
    }
  r.unique = seen.size();
  r.value = r.total ? static_cast<double>(r.unique) / static_cast<double>(r.total) : 0.0;
  return r;
}

EmbeddingScores embedding_metrics(std::span<const Sentence> candidates,
                                  std::span<const Sentence> references, const EmbeddingTable& table) {
  if (candidates.size() != references.size()) throw ContractError("embedding_metrics: size mismatch");
  EmbeddingScores s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = lookup(candidates[i], table);
    const auto r = lookup(references[i], table);
    if (c.empty() || r.empty()) {
      ++s.skipped;
      continue;
    }
    s.average += cosine(mean_vector(c), mean_vector(r));
    s.greedy += 0.5 * (greedy_match(c, r) + greedy_match(r, c));
    s.extrema += cosine(extrema_vector(c), extrema_vector(r));
    ++s.pairs;
  }
  if (s.pairs) {
    const auto n = static_cast<double>(s.pairs);
    s.average /= n;
    s.greedy /= n;
    s.extrema /= n;
  }
  return s;
}

EmbeddingTable table_from_model(const GenerationModel<float>& model, const corpus::Vocabulary& vocab) {
  EmbeddingTable table;
  const auto d = model.config().d_model;
  const auto data = model.word_embedding().data();
  for (std::size_t id = corpus::kReservedTokens.size(); id < vocab.size(); ++id) {
    const auto row = data.subspan(id * d, d);
    table.add(vocab.token(static_cast<int>(id)), {row.begin(), row.end()});
  }
  return table;
}

template <typename T>
SpeedReport decoding_speed(const GenerationModel<T>& model,
                           std::span<const std::vector<std::vector<int>>> contexts,
                           std::size_t max_len, std::size_t warmup, std::size_t repetitions) {
  if (repetitions == 0) throw ContractError("decoding_speed needs at least one repetition");
  const int saved_threads = kernels::max_threads();
  kernels::set_threads(1);
  SpeedReport report;
  auto measure = [&](DecodeMode mode) {
    auto run = [&] {
      std::size_t tokens = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& ctx : contexts) tokens += greedy_decode(model, ctx, max_len, mode).size();
      const auto t1 = std::chrono::steady_clock::now();
      return std::pair{std::chrono::duration<double, std::milli>(t1 - t0).count(), tokens};
    };
    for (std::size_t i = 0; i < warmup; ++i) run();
    std::vector<double> per_token;
    for (std::size_t i = 0; i < repetitions; ++i) {
      const auto [ms, tokens] = run();
      if (tokens == 0) {
        kernels::set_threads(saved_threads);
        throw ContractError("decoding_speed: no tokens were generated");
      }
      report.tokens = tokens;
      per_token.push_back(ms / static_cast<double>(tokens));
    }
    std::sort(per_token.begin(), per_token.end());
    const auto mid = per_token.size() / 2;
    return per_token.size() % 2 ? per_token[mid] : 0.5 * (per_token[mid - 1] + per_token[mid]);
  };
  report.full_ms_per_token = measure(DecodeMode::full);
  report.incremental_ms_per_token = measure(DecodeMode::incremental);
  kernels::set_threads(saved_threads);
  return report;
}

template <typename T>
ParamCounts count_params(const ParameterStore<T>& params) {
  return {params.count(), params.count("gen.")};
}

std::string format_report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "# BLEU-4: corpus level, one reference, add-one smoothing for n>=2, whitespace tokens\n";
  os << "# PPL: exp(mean token NLL) over responses including [EOS]\n";
  if (r.embedding) {
    os << "# embeddings: " << (r.embedding_from_model ? "model word table (not comparable)" : "external file")
       << '\n';
  }
  os << "examples,ppl,bleu4,distinct1,distinct2,emb_average,emb_greedy,emb_extrema,"
        "ms_per_token_full,ms_per_token_incremental,params_training,params_generation\n";
  os << r.examples << ',' << r.ppl << ',' << r.bleu << ',' << r.distinct1 << ',' << r.distinct2 << ',';
  if (r.embedding) os << r.embedding->average << ',' << r.embedding->greedy << ',' << r.embedding->extrema << ',';
  else os << ",,,";
  if (r.speed) os << r.speed->full_ms_per_token << ',' << r.speed->incremental_ms_per_token << ',';
  else os << ",,";
  os << r.params.training_total << ',' << r.params.generation_only << '\n';
  return os.str();
}

std::string format_report_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "examples            " << r.examples << '\n';
  os << "PPL                 " << r.ppl << '\n';
  os << "BLEU-4              " << r.bleu << '\n';
  os << "distinct-1          " << r.distinct1 << '\n';
  os << "distinct-2          " << r.distinct2 << '\n';
  if (r.embedding) {
    os << "embedding average   " << r.embedding->average << '\n';
    os << "embedding greedy    " << r.embedding->greedy << '\n';
    os << "embedding extrema   " << r.embedding->extrema << '\n';
  }
  if (r.speed) {
    os << "ms/token full       " << r.speed->full_ms_per_token << '\n';
    os << "ms/token cached     " << r.speed->incremental_ms_per_token << '\n';
  }
  os << "parameters          " << r.params.training_total << " / " << r.params.generation_only << '\n';
  return os.str();
}

std::string format_order_csv(const OrderStats& overall,
                             std::span<const std::vector<std::size_t>> predicted,
                             std::span<const ShuffledContext> items) {
  std::vector<std::size_t> hits, seen;
  for (std::size_t r = 0; r < items.size(); ++r)
    for (std::size_t i = 0; i < items[r].order.size(); ++i) {
      if (hits.size() <= i) {
        hits.resize(i + 1);
        seen.resize(i + 1);
      }
      ++seen[i];
      if (i < predicted[r].size() && predicted[r][i] == items[r].order[i]) ++hits[i];
    }
  std::ostringstream os;
  os << std::setprecision(6) << "position,count,accuracy\n";
  for (std::size_t i = 0; i < seen.size(); ++i)
    os << i + 1 << ',' << seen[i] << ',' << static_cast<double>(hits[i]) / static_cast<double>(seen[i]) << '\n';
  const auto pos = overall.positions ? static_cast<double>(overall.correct) / static_cast<double>(overall.positions) : 0.0;
  const auto exact = overall.instances ? static_cast<double>(overall.exact) / static_cast<double>(overall.instances) : 0.0;
  os << "all," << overall.positions << ',' << pos << '\n';
  os << "exact_match," << overall.instances << ',' << exact << '\n';
  return os.str();
}

#define AUXGEN_INSTANTIATE(T)                                                                      \
  template std::vector<int> greedy_decode(const GenerationModel<T>&,                               \
                                          const std::vector<std::vector<int>>&, std::size_t,       \
                                          DecodeMode);                                             \
  template double perplexity(const GenerationModel<T>&, std::span<const corpus::Dialogue>,         \
                             std::size_t);                                                         \
  template SpeedReport decoding_speed(const GenerationModel<T>&,                                   \
                                      std::span<const std::vector<std::vector<int>>>, std::size_t, \
                                      std::size_t, std::size_t);                                   \
  template ParamCounts count_params(const ParameterStore<T>&);
AUXGEN_INSTANTIATE(float)
AUXGEN_INSTANTIATE(double)
#undef AUXGEN_INSTANTIATE

}  // namespace auxgen::eval

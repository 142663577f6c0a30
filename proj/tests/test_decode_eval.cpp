#include <cmath>

#include "doctest.h"
#include "metric_oracles.hpp"

#include "auxgen/decode_eval.hpp"
#include "auxgen/trainer.hpp"

using namespace auxgen;
using namespace auxgen::eval;

namespace {

Sentence words(std::initializer_list<const char*> w) { return {w.begin(), w.end()}; }

ModelConfig decode_config() {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = 16;
  c.heads = 2;
  c.max_positions = 40;
  c.segments = 8;
  return c;
}

}  // namespace

TEST_CASE("BLEU of an identical sentence is one") {
  const std::vector<Sentence> s{words({"the", "cat", "sat", "on", "the", "mat"})};
  CHECK(bleu4(s, s).score == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<Sentence> shorter{words({"hi", "there"})};
  CHECK(bleu4(shorter, shorter).score == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("BLEU of a short exact prefix is the brevity penalty") {
  const std::vector<Sentence> c{words({"the", "cat", "sat"})};
  const std::vector<Sentence> r{words({"the", "cat", "sat", "on", "the", "mat"})};
  const auto b = bleu4(c, r);
  CHECK(b.brevity_penalty == doctest::Approx(std::exp(-1.0)));
  CHECK(b.score == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("BLEU clips repeated candidate words") {
  const std::vector<Sentence> c{words({"the", "the", "the", "the"})};
  const std::vector<Sentence> r{words({"the", "cat", "is", "here"})};
  const auto b = bleu4(c, r);
  CHECK(b.matches[0] == 1);
  CHECK(b.totals[0] == 4);
  // p1 = 1/4, p2 = 1/4, p3 = 1/3, p4 = 1/2 with add-one smoothing
  CHECK(b.score == doctest::Approx(std::pow(0.25 * 0.25 / 3.0 * 0.5, 0.25)).epsilon(1e-14));
  CHECK(bleu4(std::vector<Sentence>{{}}, r).score == 0.0);
  CHECK_THROWS_AS(bleu4(c, std::vector<Sentence>{}), ContractError);
}

TEST_CASE("distinct-n counts unique over total n-grams") {
  const std::vector<Sentence> a{words({"a", "a", "a"})};
  CHECK(distinct_n(a, 1).value == doctest::Approx(1.0 / 3.0));
  CHECK(distinct_n(a, 2).value == doctest::Approx(0.5));
  const std::vector<Sentence> b{words({"i", "am", "ok"}), words({"i", "am", "fine"})};
  const auto d2 = distinct_n(b, 2);
  CHECK(d2.unique == 3);
  CHECK(d2.total == 4);
  CHECK(distinct_n(std::vector<Sentence>{words({"x"})}, 2).value == 0.0);
}

TEST_CASE("embedding metrics match hand-computed cosines") {
  EmbeddingTable t;
  t.add("x", {1, 0});
  t.add("y", {0, 1});
  t.add("z", {1, 1});
  const std::vector<Sentence> c{words({"x", "y"})}, r{words({"z", "oov"})};
  const auto s = embedding_metrics(c, r, t);
  CHECK(s.pairs == 1);
  CHECK(s.average == doctest::Approx(1.0));
  // cand->ref: each of x, y has cosine 1/sqrt2 with z; ref->cand: z best 1/sqrt2
  CHECK(s.greedy == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(s.extrema == doctest::Approx(1.0));
  const std::vector<Sentence> none{words({"oov"})};
  CHECK(embedding_metrics(none, r, t).skipped == 1);
}

TEST_CASE("metrics agree with brute-force oracles on random cases") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = oracle::random_case(seed);
    const auto got = bleu4(c.candidates, c.references);
    const auto want = oracle::bleu4(c.candidates, c.references);
    for (int n = 0; n < 4; ++n) {
      CHECK(got.matches[n] == want.matches[n]);
      CHECK(got.totals[n] == want.totals[n]);
    }
    CHECK(std::abs(got.score - want.score) <= 1e-12);
    for (std::size_t n : {1u, 2u}) {
      const auto d = distinct_n(c.candidates, n);
      const auto [u, tot] = oracle::distinct(c.candidates, n);
      CHECK(d.unique == u);
      CHECK(d.total == tot);
    }
    const auto e = embedding_metrics(c.candidates, c.references, c.table);
    const auto o = oracle::embedding(c.candidates, c.references, c.table);
    CHECK(e.pairs == o.pairs);
    CHECK(std::abs(e.average - o.average) <= 1e-6);
    CHECK(std::abs(e.greedy - o.greedy) <= 1e-6);
    CHECK(std::abs(e.extrema - o.extrema) <= 1e-6);
  }
}

TEST_CASE("greedy decoding is deterministic, bounded and never emits reserved inputs") {
  ParameterStore<float> params;
  Rng rng(4);
  GenerationModel<float> model(params, decode_config(), rng);
  const std::vector<std::vector<int>> ctx{{5, 6, 7}, {8, 9}};
  // Bias every position toward [PAD], [BOS] and [MASK] so a careless argmax would pick them.
  for (int tok : {corpus::kPad, corpus::kBos, corpus::kMask})
    for (std::size_t c = 0; c < 16; ++c) params.get("gen.output.weight").data()[tok * 16 + c] *= 50;
  const auto a = greedy_decode(model, ctx, 6);
  CHECK(a == greedy_decode(model, ctx, 6));
  CHECK(a == greedy_decode(model, ctx, 6, DecodeMode::full));
  CHECK(a.size() <= 6);
  for (int t : a) {
    CHECK(t != corpus::kPad);
    CHECK(t != corpus::kBos);
    CHECK(t != corpus::kMask);
    CHECK(t != corpus::kEos);
  }
  CHECK(greedy_decode(model, ctx, 1).size() <= 1);
}

TEST_CASE("perplexity of a zero projection equals the vocabulary size") {
  ParameterStore<float> params;
  Rng rng(5);
  GenerationModel<float> model(params, decode_config(), rng);
  for (auto& x : params.get("gen.output.weight").data()) x = 0;
  const std::vector<corpus::Dialogue> data{{{{5, 6}}, {7, corpus::kEos}}, {{{8}, {9}}, {corpus::kEos}}};
  CHECK(perplexity(model, std::span(data), 1) == doctest::Approx(30.0).epsilon(1e-5));
}

TEST_CASE("parameter counts split generation-only from training totals") {
  TrainConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.max_positions = 40;
  c.max_utterances = 4;
  ModelBundle<float> with(model_config(c, 30), 4, true, 1), without(model_config(c, 30), 4, false, 1);
  const auto a = count_params(with.params), b = count_params(without.params);
  std::size_t total = 0, gen = 0;
  for (const auto& e : with.params.entries()) {
    total += e.tensor.size();
    if (e.name.starts_with("gen.")) gen += e.tensor.size();
  }
  CHECK(a.training_total == total);
  CHECK(a.generation_only == gen);
  CHECK(a.generation_only < a.training_total);
  CHECK(b.generation_only == b.training_total);
  CHECK(a.generation_only == b.generation_only);
}

TEST_CASE("reports carry their conventions") {
  MetricReport r;
  r.ppl = 12.5;
  r.bleu = 0.1;
  const auto csv = format_report_csv(r);
  CHECK(csv.rfind("#", 0) == 0);
  CHECK(csv.find("ppl") != std::string::npos);
  CHECK(format_report_table(r).find("12.5") != std::string::npos);
}

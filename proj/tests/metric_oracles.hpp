#pragma once
// Brute-force re-implementations of the evaluation metrics, written without
// sharing code with the library: n-grams are compared position by position
// and clipping is done by explicit counting.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "auxgen/decode_eval.hpp"
#include "auxgen/rng.hpp"

namespace oracle {

using Sentence = std::vector<std::string>;

inline bool same_gram(const Sentence& a, std::size_t i, const Sentence& b, std::size_t j, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k)
    if (a[i + k] != b[j + k]) return false;
  return true;
}

inline std::size_t count_in(const Sentence& s, const Sentence& g, std::size_t gi, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + n <= s.size(); ++j) c += same_gram(s, j, g, gi, n);
  return c;
}

struct Bleu {
  std::size_t matches[4]{};
  std::size_t totals[4]{};
  double score = 0;
};

inline Bleu bleu4(const std::vector<Sentence>& cands, const std::vector<Sentence>& refs) {
  Bleu b;
  std::size_t clen = 0, rlen = 0;
  for (std::size_t s = 0; s < cands.size(); ++s) {
    const auto& c = cands[s];
    const auto& r = refs[s];
    clen += c.size();
    rlen += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= c.size(); ++i) {
        ++b.totals[n - 1];
        // Count each distinct gram once, at its first occurrence.
        bool first = true;
        for (std::size_t j = 0; j < i; ++j)
          if (same_gram(c, j, c, i, n)) first = false;
        if (first) b.matches[n - 1] += std::min(count_in(c, c, i, n), count_in(r, c, i, n));
      }
    }
  }
  if (clen == 0 || b.matches[0] == 0) return b;
  double logp = std::log(double(b.matches[0]) / double(b.totals[0]));
  for (int n = 1; n < 4; ++n) logp += std::log((b.matches[n] + 1.0) / (b.totals[n] + 1.0));
  const double bp = clen > rlen ? 1.0 : std::exp(1.0 - double(rlen) / double(clen));
  b.score = bp * std::exp(logp / 4);
  return b;
}

inline std::pair<std::size_t, std::size_t> distinct(const std::vector<Sentence>& rs, std::size_t n) {
  std::vector<Sentence> seen;
  std::size_t total = 0;
  for (const auto& s : rs)
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      ++total;
      Sentence g(s.begin() + long(i), s.begin() + long(i + n));
      if (std::find(seen.begin(), seen.end(), g) == seen.end()) seen.push_back(g);
    }
  return {seen.size(), total};
}

inline double cos(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, x = 0, y = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    x += a[i] * a[i];
    y += b[i] * b[i];
  }
  return (x == 0 || y == 0) ? 0.0 : d / std::sqrt(x * y);
}

struct Embedding {
  double average = 0, greedy = 0, extrema = 0;
  std::size_t pairs = 0;
};

inline Embedding embedding(const std::vector<Sentence>& cands, const std::vector<Sentence>& refs,
                           const auxgen::EmbeddingTable& table) {
  Embedding out;
  auto vecs = [&](const Sentence& s) {
    std::vector<std::vector<double>> v;
    for (const auto& t : s)
      for (std::size_t k = 0; k < table.tokens.size(); ++k)
        if (table.tokens[k] == t) {
          v.emplace_back(table.vectors[k].begin(), table.vectors[k].end());
          break;
        }
    return v;
  };
  for (std::size_t p = 0; p < cands.size(); ++p) {
    const auto c = vecs(cands[p]), r = vecs(refs[p]);
    if (c.empty() || r.empty()) continue;
    const auto dim = c[0].size();
    auto mean = [&](const std::vector<std::vector<double>>& v) {
      std::vector<double> m(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        for (const auto& x : v) m[k] += x[k];
        m[k] /= double(v.size());
      }
      return m;
    };
    auto extreme = [&](const std::vector<std::vector<double>>& v) {
      std::vector<double> m(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        double hi = -1e300, lo = 1e300;
        for (const auto& x : v) {
          hi = std::max(hi, x[k]);
          lo = std::min(lo, x[k]);
        }
        m[k] = std::abs(lo) > std::abs(hi) ? lo : hi;
      }
      return m;
    };
    auto one_way = [&](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
      double s = 0;
      for (const auto& x : a) {
        double best = -2;
        for (const auto& y : b) best = std::max(best, cos(x, y));
        s += best;
      }
      return s / double(a.size());
    };
    out.average += cos(mean(c), mean(r));
    out.greedy += (one_way(c, r) + one_way(r, c)) / 2;
    out.extrema += cos(extreme(c), extreme(r));
    ++out.pairs;
  }
  if (out.pairs) {
    out.average /= double(out.pairs);
    out.greedy /= double(out.pairs);
    out.extrema /= double(out.pairs);
  }
  return out;
}

/// A random case over a tiny alphabet so n-gram collisions are frequent.
struct Case {
  std::vector<Sentence> candidates, references;
  auxgen::EmbeddingTable table;
};

inline Case random_case(std::uint64_t seed) {
  auxgen::Rng rng(seed);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f"};
  Case c;
  const auto pairs = 1 + rng.below(4);
  auto sentence = [&] {
    Sentence s(rng.below(9));
    for (auto& w : s) w = alphabet[rng.below(alphabet.size())];
    return s;
  };
  for (std::size_t i = 0; i < pairs; ++i) {
    c.candidates.push_back(sentence());
    c.references.push_back(sentence());
  }
  for (std::size_t i = 0; i + 1 < alphabet.size(); ++i) {  // "f" stays out of vocabulary
    std::vector<float> v(3);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    c.table.add(alphabet[i], v);
  }
  return c;
}

}  // namespace oracle

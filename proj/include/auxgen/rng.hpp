#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace auxgen {

/// Independent purposes that draw randomness from one master seed.
enum class Stream : std::uint64_t {
  init = 1,
  batches = 2,
  corruption = 3,
  evaluation = 4,
  synthetic = 5,
};

/// Seeded generator. `derive` builds a fresh generator from a master seed and
/// a path of integers, so every consumer (init, per-epoch shuffles, per-step
/// corruption) gets a reproducible stream without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng derive(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint64_t> key{master};
    key.insert(key.end(), path.begin(), path.end());
    return from_key(key);
  }
  static Rng derive(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> path = {}) {
    std::vector<std::uint64_t> key{master, static_cast<std::uint64_t>(stream)};
    key.insert(key.end(), path.begin(), path.end());
    return from_key(key);
  }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p.begin(), p.end());
    return p;
  }
  /// Uniformly random permutation of n >= 2 elements that is not the identity.
  std::vector<std::size_t> non_identity_permutation(std::size_t n) {
    for (;;) {
      auto p = permutation(n);
      if (!std::is_sorted(p.begin(), p.end())) return p;
    }
  }

 private:
  static Rng from_key(const std::vector<std::uint64_t>& key) {
    std::vector<std::uint32_t> words;
    for (auto v : key) {
      words.push_back(static_cast<std::uint32_t>(v));
      words.push_back(static_cast<std::uint32_t>(v >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return Rng((static_cast<std::uint64_t>(out[1]) << 32) | out[0]);
  }

  std::mt19937_64 engine_;
};

}  // namespace auxgen

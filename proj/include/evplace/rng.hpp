#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace evplace {

// All randomness in a run flows from the scenario's single rng_seed.
// Sub-seeds are derived with a fixed labeled scheme so that every module,
// stage, provider and Monte-Carlo run draws from its own independent,
// reproducible stream:
//
//   sub_seed(master, label, a, b)
//
// where `label` names the consumer ("theta", "trips", "qos", ...) and
// a/b are indices (stage, run, provider). Identical inputs give identical
// streams on every platform; mt19937_64 output is specified by the
// standard, and uniform doubles are produced without going through the
// implementation-defined distribution classes.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t sub_seed(std::uint64_t master, std::string_view label,
                              std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(master ^ fnv1a(label));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

/// Deterministic random stream. Thin wrapper over mt19937_64 that
/// produces doubles and weighted picks identically on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index drawn proportionally to the (nonnegative) weights.
  std::size_t pick_weighted(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) return i;
    }
    return weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace evplace

#pragma once

// ============================================================================
// Deterministic random-number layer.
//
// All experiment randomness flows through this header. std::mt19937_64 is
// fully pinned by the standard, but the std <random> distributions are
// implementation-defined, so uniform/normal/Rademacher draws are generated
// here explicitly. Every consumer derives its own stream from a master seed
// plus a structured tag, which keeps runs byte-identical and lets independent
// cells of an experiment grid be computed in any order (or in parallel).
// ============================================================================

#include "stratrlhf/core.hpp"

#include <random>

namespace stratrlhf {

/// One splitmix64 step; used for seed derivation and stream splitting.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4a798579d6a7bULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a master seed and a list of stream tags.
/// Different tag sequences give statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = master ^ 0xd1b54a32d192ed03ULL;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t tag : tags) {
    state ^= tag + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

/// Deterministic generator with explicit scalar distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (explicit, portable).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = mag * std::sin(angle);
    have_spare_ = true;
    return mag * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer in {0, ..., n-1} (rejection sampling, unbiased).
  int uniform_int(int n) {
    require_input(n >= 1, "uniform_int: n must be positive");
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return static_cast<int>(draw % span);
  }

  /// Fair +/-1 coin.
  double rademacher() { return (engine_() & 1ULL) ? 1.0 : -1.0; }

  Vec normal_vec(int d) {
    Vec v(d);
    for (int j = 0; j < d; ++j) v[j] = normal();
    return v;
  }

  Vec rademacher_vec(int d) {
    Vec v(d);
    for (int j = 0; j < d; ++j) v[j] = rademacher();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace stratrlhf

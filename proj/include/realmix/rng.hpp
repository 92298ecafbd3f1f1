#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "realmix/checksum.hpp"

namespace realmix {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic engine wrapper. std::mt19937_64 output is pinned by the
// standard; the distribution transforms below are hand-rolled because the
// std::*_distribution classes are implementation-defined and would break
// the bit-reproducibility contract across toolchains.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased via bitmask rejection.
  uint64_t uniform_index(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t mask = ~0ull >> __builtin_clzll(n - 1 | 1);
    uint64_t v;
    do {
      v = eng_() & mask;
    } while (v >= n);
    return v;
  }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(uniform_index(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Box-Muller. Draws two uniforms per call; the sine branch is discarded
  // so the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Marsaglia-Tsang for shape >= 1, boosted by u^(1/a) below 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    double s = x + y;
    if (s <= 0.0) return 0.5;  // both underflowed; symmetric fallback
    return x / s;
  }

  // Fisher-Yates over [0, n).
  template <typename Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 eng_;
};

// Keyed RNG stream: a (seed, purpose tag) pair from which engines are derived
// by integer keys. Identical (seed, stream_id, keys...) always yields an
// identical engine, so every stochastic site in the pipeline is a pure
// function of its coordinates and no cursors need checkpointing.
class RngStream {
public:
  RngStream(uint64_t seed, std::string_view stream_id)
      : state_(splitmix64(seed ^ fnv1a64(stream_id.data(), stream_id.size()))) {}

  Rng at() const { return Rng(state_); }
  Rng at(uint64_t k0) const { return Rng(mix(state_, k0)); }
  Rng at(uint64_t k0, uint64_t k1) const { return Rng(mix(mix(state_, k0), k1)); }
  Rng at(uint64_t k0, uint64_t k1, uint64_t k2) const {
    return Rng(mix(mix(mix(state_, k0), k1), k2));
  }

private:
  static uint64_t mix(uint64_t h, uint64_t k) { return splitmix64(h ^ (k + 0x9e3779b97f4a7c15ull)); }
  uint64_t state_;
};

// Purpose tags used by the training pipeline.
namespace streams {
inline constexpr std::string_view kExtend = "extend";
inline constexpr std::string_view kTargetAug = "target_aug";
inline constexpr std::string_view kLabeledAug = "labeled_aug";
inline constexpr std::string_view kMixup = "mixup";
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kLabeledSampler = "labeled_sampler";
inline constexpr std::string_view kUnlabeledSampler = "unlabeled_sampler";
inline constexpr std::string_view kSplit = "split";
inline constexpr std::string_view kSynth = "synth";
}  // namespace streams

}  // namespace realmix

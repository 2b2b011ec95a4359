#pragma once

#include <cmath>
#include <cstdint>

namespace essm {

/// Deterministic PRNG (xoshiro256++ seeded through splitmix64).
///
/// The standard <random> distributions are implementation-defined, which
/// would make metric logs differ across standard libraries; everything
/// downstream of a seed goes through this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (second draw cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n), n > 0. Lemire reduction, deterministic.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Derives an independent child stream; used to decouple e.g. parameter
  /// init from batch shuffling so adding one does not shift the other.
  Rng fork(std::uint64_t stream) {
    std::uint64_t mix = next_u64() ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    return Rng(mix);
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace essm

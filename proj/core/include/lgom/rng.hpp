#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lgom {

/// Deterministic counter-based RNG (splitmix64 core). Self-contained so
/// streams are identical across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  /// Standard normal via Box-Muller; one sample per call, cached pair.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    cached_ = mag * std::sin(two_pi * u2);
    has_cached_ = true;
    return mag * std::cos(two_pi * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// FNV-1a, used to derive per-name RNG streams from a base seed.
inline uint64_t hash_name(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline Rng named_stream(uint64_t seed, std::string_view name) {
  return Rng(seed ^ hash_name(name));
}

}  // namespace lgom

#pragma once

#include <cstdint>
#include <string_view>

namespace oga {

/// Deterministic bit-stable RNG (splitmix64 core). We avoid <random>
/// distributions so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one spare cached per pair.
  double normal();

  /// Uniform integer in [0, n), n > 0.
  int64_t uniform_int(int64_t n) {
    return int64_t(next_u64() % uint64_t(n));
  }

 private:
  uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent child seed from a base seed, a domain tag and up
/// to two integer coordinates (e.g. step, view index).
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                     uint64_t b = 0);

}  // namespace oga

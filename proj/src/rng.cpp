#include "oga/rng.hpp"

#include <cmath>

namespace oga {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on two uniforms; u clamped away from 0 for log().
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double a = 6.283185307179586476925286766559 * v;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a,
                     uint64_t b) {
  // FNV-1a over the tag, then splitmix-style mixing of the coordinates.
  uint64_t h = 0xcbf29ce484222325ull ^ base;
  for (char c : tag) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001b3ull;
  }
  auto mix = [](uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  h = mix(h + 0x9e3779b97f4a7c15ull * (a + 1));
  h = mix(h + 0x9e3779b97f4a7c15ull * (b + 1));
  return h;
}

}  // namespace oga

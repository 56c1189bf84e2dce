#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hmae {

/// splitmix64 step, used to derive independent stream seeds.
inline std::uint64_t seed_mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
  return seed_mix(seed_mix(a) ^ b);
}

inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return seed_mix(seed_mix(a, b) ^ c);
}

/// mt19937_64 wrapped with hand-rolled distributions so sampled streams do
/// not depend on the standard library's distribution implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return gen_() % n; }

  /// standard normal via Box-Muller
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

private:
  std::mt19937_64 gen_;
};

}  // namespace hmae

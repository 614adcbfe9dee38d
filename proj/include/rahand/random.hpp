#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace rahand {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t Fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Child seed for a named stage: every stage draws from its own stream so
// re-running one stage does not shift the randomness of another.
constexpr std::uint64_t DeriveSeed(std::uint64_t root, std::string_view stage) {
  return Mix64(root ^ Mix64(Fnv1a64(stage)));
}

constexpr std::uint64_t DeriveSeed(std::uint64_t root, std::uint64_t index) {
  return Mix64(root ^ Mix64(index + 0x632BE59BD9B4E019ULL));
}

// [0, 1) with 53 random bits.
inline double Uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double Uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * Uniform01(rng); }

// Box-Muller; spelled out so that draws are identical across standard libraries.
inline double Normal(Rng& rng) {
  double u1 = Uniform01(rng);
  while (u1 <= 0.0) u1 = Uniform01(rng);
  const double u2 = Uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline bool Bernoulli(Rng& rng, double p) { return Uniform01(rng) < p; }

}  // namespace rahand

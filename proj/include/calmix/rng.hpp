#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace calmix {

// 64-bit FNV-1a. Used for token hashing and for deriving named rng streams.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic random stream. Distribution transforms are implemented here
// rather than via std::*_distribution so draws are bit-reproducible for a
// given seed regardless of the standard library build.
//
// Independent concerns (data order, mixing ratios, partner picks, ...) each
// take their own named stream so that enabling one feature never perturbs
// the draw sequence of another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent substream derived from (seed, tag).
  static Rng stream(std::uint64_t seed, std::string_view tag) {
    return Rng(splitmix64(seed ^ fnv1a64(tag)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return std::ldexp(static_cast<double>(engine_() >> 11), -53);
  }

  // Uniform over {0, ..., n-1}, rejection sampled (no modulo bias).
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t reject = (UINT64_MAX % un + 1) % un;  // 2^64 mod n
    for (;;) {
      const std::uint64_t u = engine_();
      if (u <= UINT64_MAX - reject) return static_cast<std::size_t>(u % un);
    }
  }

  // Standard normal via Box-Muller; consumes exactly two uniforms per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = std::ldexp(1.0, -53);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 boosted through shape + 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      if (u <= 0.0) u = std::ldexp(1.0, -53);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Beta(a, b) as the ratio of two gamma draws.
  double beta(double a, double b) {
    const double g1 = gamma(a);
    const double g2 = gamma(b);
    const double sum = g1 + g2;
    if (sum == 0.0) return 0.5;
    return g1 / sum;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace calmix

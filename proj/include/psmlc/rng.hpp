#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "psmlc/error.hpp"

namespace psmlc {

/// Portable seeded random source: xoshiro256** seeded through splitmix64.
///
/// Every distribution below is implemented here rather than through
/// <random>'s distribution objects, whose algorithms differ between
/// standard libraries. Given the same seed and the same call sequence the
/// output is identical on every platform with IEEE doubles and a correctly
/// rounded sqrt/log.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  /// Independent named sub-stream of a root seed ("data", "init", ...).
  static Rng stream(std::uint64_t root_seed, std::string_view name) {
    std::uint64_t mixed = root_seed ^ fnv1a(name);
    return Rng(splitmix64(mixed));
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform on [a, b).
  double uniform(double a, double b) {
    if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) {
      throw InputError("uniform: need finite a < b");
    }
    const double x = a + (b - a) * uniform();
    // a + (b - a) * u can round up to b when u is close to 1.
    return x < b ? x : std::nextafter(b, a);
  }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw InputError("uniform_index: empty range");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal by the Marsaglia polar method (second variate discarded).
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 uses the u^(1/shape) boost.
  double gamma(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape)) throw InputError("gamma: shape must be > 0");
    if (shape < 1.0) return gamma(shape + 1.0) * std::pow(uniform_open(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Beta(a, b) as a ratio of gammas, redrawn until strictly inside (0, 1).
  double beta(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw InputError("beta: parameters must be > 0");
    for (;;) {
      const double x = gamma(a);
      const double y = gamma(b);
      const double r = x / (x + y);
      if (r > 0.0 && r < 1.0) return r;
    }
  }

  /// Symmetric Beta(alpha, alpha), the MixUp mixing distribution.
  double beta(double alpha) { return beta(alpha, alpha); }

  /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

inline double sample_uniform(Rng& rng, double a, double b) { return rng.uniform(a, b); }

inline double sample_beta(Rng& rng, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InputError("sample_beta: alpha must be > 0");
  return rng.beta(alpha);
}

}  // namespace psmlc

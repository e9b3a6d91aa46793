#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace mpnet {

/// Deterministic random stream. Wraps std::mt19937_64 (whose raw output
/// sequence is pinned by the standard) and derives all distributions from
/// raw draws, so identical seeds give identical streams on every platform
/// and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  /// Uniform integer in [0, n). n must be > 0. Modulo bias is negligible
  /// for the small n used here.
  uint64_t uniform_int(uint64_t n) { return next() % n; }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform(0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(0.0, 1.0);
    const double u2 = uniform(0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

namespace detail {
inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Master seed fanned out into independent named streams ("init",
/// "augment", "shuffle", ...) so each pipeline stage can be reproduced in
/// isolation.
class RngHub {
 public:
  explicit RngHub(uint64_t master_seed) : master_(master_seed) {}

  uint64_t master() const { return master_; }

  Rng stream(std::string_view name) const {
    return Rng(detail::splitmix64(master_ ^ detail::fnv1a(name)));
  }

  /// Stream further qualified by an index (e.g. per-trial seeds).
  Rng stream(std::string_view name, uint64_t index) const {
    return Rng(detail::splitmix64(detail::splitmix64(master_ ^ detail::fnv1a(name)) + index));
  }

 private:
  uint64_t master_;
};

}  // namespace mpnet

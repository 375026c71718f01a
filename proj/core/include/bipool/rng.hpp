#pragma once

#include <cstdint>
#include <vector>

namespace bipool {

/// Seedable counter-based generator (splitmix64). The state is a plain
/// 64-bit counter advanced by a fixed increment and hashed per draw, so the
/// same seed yields the same sequence on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; draws a pair and caches the second.
  double normal();

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  /// Derive an independently seeded stream; the parent is not advanced.
  Rng split(uint64_t stream) const {
    Rng r(state_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
    r.next_u64();
    return r;
  }

  /// Fisher-Yates shuffle with fixed traversal order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

class Tensor;

/// Tensor filled with uniform draws in [lo, hi).
Tensor random_uniform(Rng& rng, std::vector<size_t> dims, double lo, double hi);
/// Tensor filled with N(0, sigma^2) draws.
Tensor random_normal(Rng& rng, std::vector<size_t> dims, double sigma = 1.0);

}  // namespace bipool

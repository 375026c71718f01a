#include "bipool/rng.hpp"

#include <cmath>

#include "bipool/tensor.hpp"

namespace bipool {

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller on two fresh uniforms; u1 shifted away from 0 for the log.
  double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

Tensor random_uniform(Rng& rng, std::vector<size_t> dims, double lo, double hi) {
  Tensor t(std::move(dims));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(Rng& rng, std::vector<size_t> dims, double sigma) {
  Tensor t(std::move(dims));
  for (size_t i = 0; i < t.size(); ++i) t[i] = sigma * rng.normal();
  return t;
}

}  // namespace bipool

#pragma once

#include <cstdint>

#include "bipool/tensor.hpp"

namespace bipool {

/// k cluster centers with the derived soft-assignment parameters
/// w_k = 2*gamma*mu_k and b_k = -gamma*||mu_k||^2. In tied mode w and b are
/// kept consistent with (mu, gamma); untied mode (the fine-tuning default)
/// treats w, b and mu as free parameters and keeps mu only for the hard-
/// assignment oracle.
struct Codebook {
  size_t k = 0;
  size_t d = 0;
  Tensor mu;     // k x d
  double gamma = 1.0;
  Tensor w;      // k x d
  Tensor b;      // k
  bool tied = true;

  /// Recomputes (w, b) from (mu, gamma); only meaningful in tied mode.
  void sync_derived();

  static Codebook from_centers(Tensor mu, double gamma);
};

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded to
/// the point farthest from its assigned center. gamma is initialized to
/// 1/(2 * mean nearest-center distance^2), clamped to [1e-6, 1e8].
Codebook kmeans_init(const Tensor& samples, size_t k, uint64_t seed, int iters = 25);

/// Soft assignment of a single feature: softmax over k of (w_k . x + b_k).
Tensor soft_assign(const Tensor& x, const Codebook& cb);

/// Row-wise soft assignment for L features: L x k.
Tensor soft_assign_rows(const Tensor& rows, const Codebook& cb);

}  // namespace bipool

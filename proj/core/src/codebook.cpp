#include "bipool/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

void Codebook::sync_derived() {
  w = ops::scale(mu, 2.0 * gamma);
  b = Tensor({k});
  for (size_t i = 0; i < k; ++i) {
    double sq = 0.0;
    for (size_t j = 0; j < d; ++j) sq += mu.at2(i, j) * mu.at2(i, j);
    b[i] = -gamma * sq;
  }
}

Codebook Codebook::from_centers(Tensor centers, double gamma) {
  if (centers.rank() != 2) throw ShapeError("codebook centers must be k x d");
  Codebook cb;
  cb.k = centers.dim(0);
  cb.d = centers.dim(1);
  cb.mu = std::move(centers);
  cb.gamma = gamma;
  cb.tied = true;
  cb.sync_derived();
  return cb;
}

namespace {

double sq_dist(const double* a, const double* b, size_t d) {
  double s = 0.0;
  for (size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

}  // namespace

Codebook kmeans_init(const Tensor& samples, size_t k, uint64_t seed, int iters) {
  if (samples.rank() != 2) throw ShapeError("kmeans: samples must be n x d");
  const size_t n = samples.dim(0), d = samples.dim(1);
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (n < k) throw ConfigError("kmeans: sample size " + std::to_string(n) +
                               " smaller than k " + std::to_string(k));
  Rng rng(seed);
  const double* xs = samples.data();

  // k-means++ seeding.
  Tensor centers({k, d});
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  size_t first = static_cast<size_t>(rng.below(n));
  std::copy(xs + first * d, xs + (first + 1) * d, centers.data());
  for (size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist(xs + i * d, centers.data() + (c - 1) * d, d));
      total += min_d2[i];
    }
    size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total, acc = 0.0;
      for (size_t i = 0; i < n; ++i) {
        acc += min_d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<size_t>(rng.below(n));
    }
    std::copy(xs + pick * d, xs + (pick + 1) * d, centers.data() + c * d);
  }

  std::vector<size_t> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      size_t arg = 0;
      for (size_t c = 0; c < k; ++c) {
        const double d2 = sq_dist(xs + i * d, centers.data() + c * d, d);
        if (d2 < best) {  // strict: ties stay with the lowest index
          best = d2;
          arg = c;
        }
      }
      if (assign[i] != arg) {
        assign[i] = arg;
        changed = true;
      }
    }
    Tensor sums = Tensor::zeros({k, d});
    std::vector<size_t> counts(k, 0);
    for (size_t i = 0; i < n; ++i) {
      counts[assign[i]]++;
      for (size_t j = 0; j < d; ++j) sums.at2(assign[i], j) += xs[i * d + j];
    }
    for (size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster to the point farthest from its center.
        double worst = -1.0;
        size_t pick = 0;
        for (size_t i = 0; i < n; ++i) {
          const double d2 = sq_dist(xs + i * d, centers.data() + assign[i] * d, d);
          if (d2 > worst) {
            worst = d2;
            pick = i;
          }
        }
        std::copy(xs + pick * d, xs + (pick + 1) * d, centers.data() + c * d);
        changed = true;
        continue;
      }
      for (size_t j = 0; j < d; ++j)
        centers.at2(c, j) = sums.at2(c, j) / static_cast<double>(counts[c]);
    }
    if (!changed && it > 0) break;
  }

  double mean_d2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < k; ++c)
      best = std::min(best, sq_dist(xs + i * d, centers.data() + c * d, d));
    mean_d2 += best;
  }
  mean_d2 /= static_cast<double>(n);
  double gamma = 1.0 / (2.0 * std::max(mean_d2, 1e-300));
  gamma = std::clamp(gamma, 1e-6, 1e8);

  return Codebook::from_centers(std::move(centers), gamma);
}

Tensor soft_assign(const Tensor& x, const Codebook& cb) {
  if (x.size() != cb.d)
    throw ShapeError("soft_assign: feature dim " + std::to_string(x.size()) +
                     " does not match codebook dim " + std::to_string(cb.d));
  Tensor logits({cb.k});
  for (size_t c = 0; c < cb.k; ++c) {
    double s = cb.b[c];
    for (size_t j = 0; j < cb.d; ++j) s += cb.w.at2(c, j) * x[j];
    logits[c] = s;
  }
  return ops::softmax(logits, 0);
}

Tensor soft_assign_rows(const Tensor& rows, const Codebook& cb) {
  if (rows.rank() != 2 || rows.dim(1) != cb.d)
    throw ShapeError("soft_assign_rows: rows must be L x d");
  const size_t l = rows.dim(0);
  Tensor logits({l, cb.k});
  for (size_t i = 0; i < l; ++i)
    for (size_t c = 0; c < cb.k; ++c) {
      double s = cb.b[c];
      for (size_t j = 0; j < cb.d; ++j) s += cb.w.at2(c, j) * rows.at2(i, j);
      logits.at2(i, c) = s;
    }
  return ops::softmax(logits, 1);
}

}  // namespace bipool

#include "bipool/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

Tensor bilinear_pool(const LocationFeatures& a, const LocationFeatures& b) {
  if (a.count() != b.count())
    throw ShapeError("bilinear_pool: location counts differ (" +
                     std::to_string(a.count()) + " vs " + std::to_string(b.count()) +
                     "); align_spatial the streams first");
  return ops::mm_tn(a.rows, b.rows);
}

std::pair<Tensor, Tensor> bilinear_backward(const LocationFeatures& a,
                                            const LocationFeatures& b,
                                            const Tensor& dl_dx) {
  if (dl_dx.rank() != 2 || dl_dx.dim(0) != a.channels() || dl_dx.dim(1) != b.channels())
    throw ShapeError("bilinear_backward: dl_dx must be M x N");
  if (a.count() != b.count()) throw ShapeError("bilinear_backward: location counts differ");
  Tensor dl_da = ops::mm_nt(b.rows, dl_dx);      // B G^T : (LxN)(MxN)^T
  Tensor dl_db = ops::mm_nn(a.rows, dl_dx);      // A G   : (LxM)(MxN)
  return {std::move(dl_da), std::move(dl_db)};
}

Tensor normalize_descriptor(const Tensor& vec) {
  return ops::l2_normalize(ops::signed_sqrt(vec));
}

BilinearDescriptor BilinearDescriptor::from_pooled(const Tensor& pooled, bool normalize) {
  if (pooled.rank() != 2) throw ShapeError("descriptor: pooled feature must be M x N");
  BilinearDescriptor d;
  d.m = pooled.dim(0);
  d.n = pooled.dim(1);
  d.vec = normalize ? normalize_descriptor(pooled.flattened()) : pooled.flattened();
  d.normalized = normalize;
  return d;
}

Tensor netvlad_encode(const LocationFeatures& f, const Codebook& cb) {
  if (f.channels() != cb.d) throw ShapeError("netvlad: feature dim mismatch");
  const size_t l = f.count(), d = cb.d, k = cb.k;
  Tensor s = soft_assign_rows(f.rows, cb);
  Tensor out = Tensor::zeros({k, d});
  for (size_t i = 0; i < l; ++i)
    for (size_t c = 0; c < k; ++c) {
      const double a = s.at2(i, c);
      for (size_t j = 0; j < d; ++j)
        out.at2(c, j) += a * (f.rows.at2(i, j) - cb.mu.at2(c, j));
    }
  return out;
}

Tensor netfv_encode(const LocationFeatures& f, const Codebook& cb) {
  if (f.channels() != cb.d) throw ShapeError("netfv: feature dim mismatch");
  const size_t l = f.count(), d = cb.d, k = cb.k;
  Tensor s = soft_assign_rows(f.rows, cb);
  Tensor out = Tensor::zeros({k, 2 * d});
  for (size_t i = 0; i < l; ++i)
    for (size_t c = 0; c < k; ++c) {
      const double a = s.at2(i, c);
      for (size_t j = 0; j < d; ++j) {
        const double r = f.rows.at2(i, j) - cb.mu.at2(c, j);
        out.at2(c, j) += a * r;
        out.at2(c, d + j) += a * r * r;
      }
    }
  return out;
}

Tensor netbovw_encode(const LocationFeatures& f, const Codebook& cb) {
  if (f.channels() != cb.d) throw ShapeError("netbovw: feature dim mismatch");
  const size_t l = f.count(), k = cb.k;
  Tensor s = soft_assign_rows(f.rows, cb);
  Tensor out = Tensor::zeros({k});
  for (size_t i = 0; i < l; ++i)
    for (size_t c = 0; c < k; ++c) out[c] += s.at2(i, c);
  return out;
}

Tensor hard_vlad_encode(const LocationFeatures& f, const Codebook& cb) {
  if (f.channels() != cb.d) throw ShapeError("hard_vlad: feature dim mismatch");
  const size_t l = f.count(), d = cb.d, k = cb.k;
  Tensor out = Tensor::zeros({k, d});
  for (size_t i = 0; i < l; ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t arg = 0;
    for (size_t c = 0; c < k; ++c) {
      double d2 = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double t = f.rows.at2(i, j) - cb.mu.at2(c, j);
        d2 += t * t;
      }
      if (d2 < best) {  // ties keep the lowest index
        best = d2;
        arg = c;
      }
    }
    for (size_t j = 0; j < d; ++j)
      out.at2(arg, j) += f.rows.at2(i, j) - cb.mu.at2(arg, j);
  }
  return out;
}

void symmetric_eig(const Tensor& a, Tensor& eigenvalues, Tensor& eigenvectors) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw ShapeError("symmetric_eig: matrix must be square");
  const size_t n = a.dim(0);
  Tensor m = a;
  Tensor v = Tensor::zeros({n, n});
  for (size_t i = 0; i < n; ++i) v.at2(i, i) = 1.0;

  // Cyclic Jacobi sweeps.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += m.at2(p, q) * m.at2(p, q);
    if (off < 1e-24 * (1.0 + std::abs(ops::sum_all(m)))) break;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) {
        const double apq = m.at2(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = m.at2(p, p), aqq = m.at2(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (size_t i = 0; i < n; ++i) {
          const double mip = m.at2(i, p), miq = m.at2(i, q);
          m.at2(i, p) = c * mip - s * miq;
          m.at2(i, q) = s * mip + c * miq;
        }
        for (size_t i = 0; i < n; ++i) {
          const double mpi = m.at2(p, i), mqi = m.at2(q, i);
          m.at2(p, i) = c * mpi - s * mqi;
          m.at2(q, i) = s * mpi + c * mqi;
        }
        for (size_t i = 0; i < n; ++i) {
          const double vip = v.at2(i, p), viq = v.at2(i, q);
          v.at2(i, p) = c * vip - s * viq;
          v.at2(i, q) = s * vip + c * viq;
        }
      }
  }

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return m.at2(x, x) > m.at2(y, y); });
  eigenvalues = Tensor({n});
  eigenvectors = Tensor({n, n});
  for (size_t j = 0; j < n; ++j) {
    eigenvalues[j] = m.at2(order[j], order[j]);
    for (size_t i = 0; i < n; ++i) eigenvectors.at2(i, j) = v.at2(i, order[j]);
  }
}

ProjectionMatrix pca_projection(const Tensor& samples, size_t r) {
  if (samples.rank() != 2) throw ShapeError("pca: samples must be n x d");
  const size_t n = samples.dim(0), d = samples.dim(1);
  if (r > d) throw ConfigError("pca: rank exceeds feature dimension");
  Tensor mean = ops::reduce(samples, {0}, ops::Reduce::Mean);
  Tensor centered = samples;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) centered.at2(i, j) -= mean[j];
  Tensor cov = ops::scale(ops::mm_tn(centered, centered), 1.0 / static_cast<double>(n));
  Tensor evals, evecs;
  symmetric_eig(cov, evals, evecs);
  ProjectionMatrix pm;
  pm.in_dim = d;
  pm.out_dim = r;
  pm.init_mode = ProjectionMatrix::Init::Pca;
  pm.p = Tensor({d, r});
  for (size_t i = 0; i < d; ++i)
    for (size_t j = 0; j < r; ++j) pm.p.at2(i, j) = evecs.at2(i, j);
  return pm;
}

ProjectionMatrix random_projection(size_t in_dim, size_t r, uint64_t seed) {
  if (r > in_dim) throw ConfigError("random projection: rank exceeds input dimension");
  Rng rng(seed);
  ProjectionMatrix pm;
  pm.in_dim = in_dim;
  pm.out_dim = r;
  pm.init_mode = ProjectionMatrix::Init::Random;
  pm.p = random_normal(rng, {in_dim, r}, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  return pm;
}

Tensor project_one_feature(const LocationFeatures& f, const ProjectionMatrix& pm) {
  if (f.channels() != pm.in_dim) throw ShapeError("project_one_feature: dim mismatch");
  return ops::mm_nn(f.rows, pm.p);
}

Tensor project_full(const Tensor& vec, const Tensor& p) {
  if (p.rank() != 2 || vec.size() != p.dim(0))
    throw ShapeError("project_full: vector length must match projection rows");
  const size_t n = p.dim(0), r = p.dim(1);
  Tensor out({r});
  for (size_t i = 0; i < n; ++i) {
    const double x = vec[i];
    for (size_t j = 0; j < r; ++j) out[j] += x * p.at2(i, j);
  }
  return out;
}

Tensor kron_structured_projection(const Tensor& p, size_t n) {
  if (p.rank() != 2) throw ShapeError("kron projection: P must be M x r");
  const size_t m = p.dim(0), r = p.dim(1);
  // vec(P^T X) = (P^T (x) I_n) vec(X) under row-major vec; built as the
  // MN x rN matrix applied on the right of the row vector vec(X).
  Tensor out = Tensor::zeros({m * n, r * n});
  for (size_t a = 0; a < m; ++a)
    for (size_t bcol = 0; bcol < n; ++bcol)
      for (size_t i = 0; i < r; ++i)
        out.at2(a * n + bcol, i * n + bcol) = p.at2(a, i);
  return out;
}

std::pair<FeatureMap, FeatureMap> align_spatial(FeatureMap a, FeatureMap b) {
  const auto diff = [](size_t x, size_t y) { return x > y ? x - y : y - x; };
  if (diff(a.height, b.height) > 1 || diff(a.width, b.width) > 1)
    throw ShapeError("align_spatial: extents differ by more than one row/column (" +
                     a.values.shape_str() + " vs " + b.values.shape_str() + ")");
  const size_t h = std::min(a.height, b.height);
  const size_t w = std::min(a.width, b.width);
  const auto crop = [&](FeatureMap& fm) {
    if (fm.height == h && fm.width == w) return;
    Tensor t({h, w, fm.channels});
    for (size_t i = 0; i < h; ++i)
      for (size_t j = 0; j < w; ++j)
        for (size_t c = 0; c < fm.channels; ++c) t.at3(i, j, c) = fm.values.at3(i, j, c);
    fm.values = std::move(t);
    fm.height = h;
    fm.width = w;
  };
  crop(a);
  crop(b);
  return {std::move(a), std::move(b)};
}

Var encode_bilinear_graph(Tape& t, Var fa, Var fb) {
  return t.matmul(fa, fb, /*transpose_first=*/true);
}

Var soft_assign_graph(Tape& t, Var f, Var w, Var b) {
  Var logits = t.add_row_vector(t.matmul_nt(f, w), b);  // L x k
  return t.softmax(logits, 1);
}

Var encode_netvlad_graph(Tape& t, Var f, Var w, Var b, Var mu) {
  Var s = soft_assign_graph(t, f, w, b);                  // L x k
  Var pooled = t.matmul(s, f, /*transpose_first=*/true);  // S^T F : k x d
  Var mass = t.reduce_sum(s, {0});                        // k
  return t.sub(pooled, t.row_scale(mu, mass));
}

Var encode_netfv_graph(Tape& t, Var f, Var w, Var b, Var mu) {
  Var s = soft_assign_graph(t, f, w, b);
  Var sf = t.matmul(s, f, true);            // k x d
  Var mass = t.reduce_sum(s, {0});          // k
  Var first = t.sub(sf, t.row_scale(mu, mass));
  Var sf2 = t.matmul(s, t.mul(f, f), true);
  Var cross = t.scale(t.mul(mu, sf), 2.0);
  Var musq = t.row_scale(t.mul(mu, mu), mass);
  Var second = t.add(t.sub(sf2, cross), musq);
  return t.concat_cols(first, second);
}

Var encode_netbovw_graph(Tape& t, Var f, Var w, Var b) {
  Var s = soft_assign_graph(t, f, w, b);
  return t.reduce_sum(s, {0});
}

}  // namespace bipool

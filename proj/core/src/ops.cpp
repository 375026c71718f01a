#include "bipool/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bipool::ops {

namespace {

void require_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ShapeError(std::string(who) + ": expected rank-2 tensor, got " + t.shape_str());
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_dims(b))
    throw ShapeError(std::string(who) + ": dims differ, " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tensor mm_nn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "mm_nn");
  require_rank2(b, "mm_nn");
  const size_t l = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != m)
    throw ShapeError("mm_nn: inner extents differ, " + a.shape_str() + " vs " + b.shape_str());
  Tensor y({l, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* py = y.data();
  for (size_t i = 0; i < l; ++i)
    for (size_t k = 0; k < m; ++k) {
      const double aik = pa[i * m + k];
      const double* brow = pb + k * n;
      double* yrow = py + i * n;
      for (size_t j = 0; j < n; ++j) yrow[j] += aik * brow[j];
    }
  return y;
}

Tensor mm_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "mm_tn");
  require_rank2(b, "mm_tn");
  const size_t l = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != l)
    throw ShapeError("mm_tn: location extents differ, " + a.shape_str() + " vs " + b.shape_str());
  Tensor y({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* py = y.data();
  // Accumulates over the shared leading index in ascending order.
  for (size_t k = 0; k < l; ++k) {
    const double* arow = pa + k * m;
    const double* brow = pb + k * n;
    for (size_t i = 0; i < m; ++i) {
      const double aki = arow[i];
      double* yrow = py + i * n;
      for (size_t j = 0; j < n; ++j) yrow[j] += aki * brow[j];
    }
  }
  return y;
}

Tensor mm_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "mm_nt");
  require_rank2(b, "mm_nt");
  const size_t l = a.dim(0), m = a.dim(1), n = b.dim(0);
  if (b.dim(1) != m)
    throw ShapeError("mm_nt: inner extents differ, " + a.shape_str() + " vs " + b.shape_str());
  Tensor y({l, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* py = y.data();
  for (size_t i = 0; i < l; ++i)
    for (size_t j = 0; j < n; ++j) {
      const double* arow = pa + i * m;
      const double* brow = pb + j * m;
      double s = 0.0;
      for (size_t k = 0; k < m; ++k) s += arow[k] * brow[k];
      py[i * n + j] = s;
    }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_first) {
  return transpose_first ? mm_tn(a, b) : mm_nn(a, b);
}

Tensor transpose2(const Tensor& m) {
  require_rank2(m, "transpose2");
  const size_t r = m.dim(0), c = m.dim(1);
  Tensor y({c, r});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) y.at2(j, i) = m.at2(i, j);
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "add");
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "sub");
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "mul");
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

Tensor scale(const Tensor& a, double c) {
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i) y[i] *= c;
  return y;
}

Tensor relu(const Tensor& a) {
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  return y;
}

Tensor reduce(const Tensor& t, const std::vector<size_t>& axes, Reduce mode,
              bool keepdims) {
  const size_t rank = t.rank();
  std::vector<bool> reduced(rank, false);
  for (size_t ax : axes) {
    if (ax >= rank) throw ShapeError("reduce: axis out of range");
    reduced[ax] = true;
  }
  std::vector<size_t> out_dims;
  size_t reduced_count = 1;
  for (size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      reduced_count *= t.dim(i);
      if (keepdims) out_dims.push_back(1);
    } else {
      out_dims.push_back(t.dim(i));
    }
  }
  if (out_dims.empty()) out_dims.push_back(1);

  Tensor out(out_dims);
  if (mode == Reduce::Max)
    for (size_t i = 0; i < out.size(); ++i) out[i] = -std::numeric_limits<double>::infinity();

  // Row-major sweep over the input; the output index is formed by dropping
  // reduced axes, which keeps the accumulation order fixed and ascending.
  std::vector<size_t> idx(rank, 0);
  for (size_t flat = 0; flat < t.size(); ++flat) {
    size_t out_flat = 0;
    for (size_t i = 0; i < rank; ++i) {
      if (reduced[i]) {
        if (keepdims) out_flat *= 1;
        continue;
      }
      out_flat = out_flat * t.dim(i) + idx[i];
    }
    double v = t[flat];
    if (mode == Reduce::Max)
      out[out_flat] = std::max(out[out_flat], v);
    else
      out[out_flat] += v;
    for (size_t i = rank; i-- > 0;) {
      if (++idx[i] < t.dim(i)) break;
      idx[i] = 0;
    }
  }
  if (mode == Reduce::Mean)
    for (size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(reduced_count);
  return out;
}

double sum_all(const Tensor& t) {
  double s = 0.0;
  for (size_t i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

Tensor softmax(const Tensor& t, size_t axis) {
  if (axis >= t.rank()) throw ShapeError("softmax: axis out of range");
  const size_t n = t.dim(axis);
  size_t inner = 1, outer = 1;
  for (size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  for (size_t i = 0; i < axis; ++i) outer *= t.dim(i);

  Tensor y = t;
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < n; ++i) mx = std::max(mx, y[base + i * inner]);
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double e = std::exp(y[base + i * inner] - mx);
        y[base + i * inner] = e;
        sum += e;
      }
      for (size_t i = 0; i < n; ++i) y[base + i * inner] /= sum;
    }
  return y;
}

Tensor signed_sqrt(const Tensor& v) {
  Tensor y = v;
  for (size_t i = 0; i < y.size(); ++i) {
    double x = y[i];
    y[i] = x < 0.0 ? -std::sqrt(-x) : std::sqrt(x);
  }
  return y;
}

Tensor signed_sqrt_backward(const Tensor& v, const Tensor& g, double eps) {
  require_same_dims(v, g, "signed_sqrt_backward");
  Tensor out = g;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] *= 0.5 / std::sqrt(std::max(std::abs(v[i]), eps));
  return out;
}

Tensor l2_normalize(const Tensor& v, double eps) {
  double norm = std::sqrt(sum_all(mul(v, v)));
  if (norm <= eps) return v;
  return scale(v, 1.0 / norm);
}

Tensor l2_normalize_backward(const Tensor& v, const Tensor& g, double eps) {
  require_same_dims(v, g, "l2_normalize_backward");
  double norm = std::sqrt(sum_all(mul(v, v)));
  if (norm <= eps) return g;
  // d(v/n)/dv = I/n - v v^T / n^3, applied to g.
  double vg = 0.0;
  for (size_t i = 0; i < v.size(); ++i) vg += v[i] * g[i];
  Tensor out = g;
  const double inv = 1.0 / norm;
  const double inv3 = vg / (norm * norm * norm);
  for (size_t i = 0; i < out.size(); ++i) out[i] = out[i] * inv - v[i] * inv3;
  return out;
}

void sgd_step(Tensor& p, const Tensor& g, double lr, double momentum,
              Tensor& velocity) {
  require_same_dims(p, g, "sgd_step");
  if (velocity.empty()) velocity = Tensor::zeros(p.dims());
  require_same_dims(p, velocity, "sgd_step");
  for (size_t i = 0; i < p.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * g[i];
    p[i] += velocity[i];
  }
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be HxWxC");
  if (w.rank() != 4 || w.dim(1) != 3 || w.dim(2) != 3)
    throw ShapeError("conv2d: weights must be [out,3,3,in]");
  const size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(0);
  if (w.dim(3) != ci) throw ShapeError("conv2d: channel mismatch");
  if (bias.size() != co) throw ShapeError("conv2d: bias size mismatch");

  Tensor y({h, wd, co});
  const double* px = x.data();
  const double* pw = w.data();
  double* py = y.data();
  for (size_t yy = 0; yy < h; ++yy)
    for (size_t xx = 0; xx < wd; ++xx) {
      double* yout = py + (yy * wd + xx) * co;
      for (size_t oc = 0; oc < co; ++oc) yout[oc] = bias[oc];
      for (size_t dy = 0; dy < 3; ++dy) {
        const size_t sy = yy + dy;
        if (sy < 1 || sy > h) continue;  // zero padding of one
        for (size_t dx = 0; dx < 3; ++dx) {
          const size_t sx = xx + dx;
          if (sx < 1 || sx > wd) continue;
          const double* xin = px + ((sy - 1) * wd + (sx - 1)) * ci;
          for (size_t oc = 0; oc < co; ++oc) {
            const double* wrow = pw + ((oc * 3 + dy) * 3 + dx) * ci;
            double s = 0.0;
            for (size_t ic = 0; ic < ci; ++ic) s += wrow[ic] * xin[ic];
            yout[oc] += s;
          }
        }
      }
    }
  return y;
}

void conv2d_3x3_backward(const Tensor& x, const Tensor& w, const Tensor& gout,
                         Tensor& gx, Tensor& gw, Tensor& gbias) {
  const size_t h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(0);
  if (gout.rank() != 3 || gout.dim(0) != h || gout.dim(1) != wd || gout.dim(2) != co)
    throw ShapeError("conv2d_backward: gout shape mismatch");
  gx = Tensor::zeros(x.dims());
  gw = Tensor::zeros(w.dims());
  gbias = Tensor::zeros({co});

  const double* px = x.data();
  const double* pw = w.data();
  const double* pg = gout.data();
  double* pgx = gx.data();
  double* pgw = gw.data();
  for (size_t yy = 0; yy < h; ++yy)
    for (size_t xx = 0; xx < wd; ++xx) {
      const double* grow = pg + (yy * wd + xx) * co;
      for (size_t oc = 0; oc < co; ++oc) gbias[oc] += grow[oc];
      for (size_t dy = 0; dy < 3; ++dy) {
        const size_t sy = yy + dy;
        if (sy < 1 || sy > h) continue;
        for (size_t dx = 0; dx < 3; ++dx) {
          const size_t sx = xx + dx;
          if (sx < 1 || sx > wd) continue;
          const size_t in_off = ((sy - 1) * wd + (sx - 1)) * ci;
          const double* xin = px + in_off;
          double* gxin = pgx + in_off;
          for (size_t oc = 0; oc < co; ++oc) {
            const double g = grow[oc];
            const size_t w_off = ((oc * 3 + dy) * 3 + dx) * ci;
            const double* wrow = pw + w_off;
            double* gwrow = pgw + w_off;
            for (size_t ic = 0; ic < ci; ++ic) {
              gwrow[ic] += g * xin[ic];
              gxin[ic] += g * wrow[ic];
            }
          }
        }
      }
    }
}

Tensor maxpool2(const Tensor& x, std::vector<uint32_t>* argmax) {
  if (x.rank() != 3) throw ShapeError("maxpool2: input must be HxWxC");
  const size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0)
    throw ShapeError("maxpool2: spatial extent too small to pool, " + x.shape_str());
  Tensor y({oh, ow, c});
  if (argmax) argmax->assign(y.size(), 0);
  for (size_t oy = 0; oy < oh; ++oy)
    for (size_t ox = 0; ox < ow; ++ox)
      for (size_t ch = 0; ch < c; ++ch) {
        double best = -std::numeric_limits<double>::infinity();
        uint32_t best_idx = 0;
        for (size_t dy = 0; dy < 2; ++dy)
          for (size_t dx = 0; dx < 2; ++dx) {
            const size_t idx = ((oy * 2 + dy) * w + (ox * 2 + dx)) * c + ch;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = static_cast<uint32_t>(idx);
            }
          }
        const size_t out_idx = (oy * ow + ox) * c + ch;
        y[out_idx] = best;
        if (argmax) (*argmax)[out_idx] = best_idx;
      }
  return y;
}

Tensor maxpool2_backward(const Tensor& x, const Tensor& gout,
                         const std::vector<uint32_t>& argmax) {
  Tensor gx = Tensor::zeros(x.dims());
  if (argmax.size() != gout.size())
    throw ShapeError("maxpool2_backward: argmax/gout size mismatch");
  for (size_t i = 0; i < gout.size(); ++i) gx[argmax[i]] += gout[i];
  return gx;
}

}  // namespace bipool::ops

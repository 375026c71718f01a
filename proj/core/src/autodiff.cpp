#include "bipool/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>

namespace bipool {

const Tensor& Var::grad() const { return tape_->node(id_).grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::emit(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, const Node&)> backprop,
               const char* tag) {
  Node n;
  n.value = std::move(value);
  for (int p : parents)
    if (nodes_[p].requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.backprop = std::move(backprop);
  n.op_tag = tag;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accum(int id, const Tensor& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = delta;
    return;
  }
  for (size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward: root from another tape");
  Node& r = nodes_[root.id()];
  if (r.value.size() != 1)
    throw ContractError("backward: root must be scalar-valued, got " + r.value.shape_str());
  for (Node& n : nodes_) n.grad = Tensor();
  r.grad = Tensor::full(r.value.dims(), 1.0);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, n);
  }
  for (Node& n : nodes_)
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor::zeros(n.value.dims());
}

Var Tape::add(Var a, Var b) {
  int pa = a.id(), pb = b.id();
  return emit(ops::add(a.value(), b.value()), {pa, pb},
              [pa, pb](Tape& t, const Node& n) {
                t.accum(pa, n.grad);
                t.accum(pb, n.grad);
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  int pa = a.id(), pb = b.id();
  return emit(ops::sub(a.value(), b.value()), {pa, pb},
              [pa, pb](Tape& t, const Node& n) {
                t.accum(pa, n.grad);
                t.accum(pb, ops::scale(n.grad, -1.0));
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  int pa = a.id(), pb = b.id();
  return emit(ops::mul(a.value(), b.value()), {pa, pb},
              [pa, pb](Tape& t, const Node& n) {
                if (t.needs_grad(pa)) t.accum(pa, ops::mul(n.grad, t.node(pb).value));
                if (t.needs_grad(pb)) t.accum(pb, ops::mul(n.grad, t.node(pa).value));
              },
              "mul");
}

Var Tape::scale(Var a, double c) {
  int pa = a.id();
  return emit(ops::scale(a.value(), c), {pa},
              [pa, c](Tape& t, const Node& n) { t.accum(pa, ops::scale(n.grad, c)); },
              "scale");
}

Var Tape::relu(Var a) {
  int pa = a.id();
  return emit(ops::relu(a.value()), {pa},
              [pa](Tape& t, const Node& n) {
                const Tensor& x = t.node(pa).value;
                Tensor g = n.grad;
                for (size_t i = 0; i < g.size(); ++i)
                  if (x[i] <= 0.0) g[i] = 0.0;
                t.accum(pa, g);
              },
              "relu");
}

Var Tape::matmul(Var a, Var b, bool transpose_first) {
  int pa = a.id(), pb = b.id();
  if (transpose_first) {
    // x = A^T B; closed-form backward dA = B G^T, dB = A G.
    return emit(ops::mm_tn(a.value(), b.value()), {pa, pb},
                [pa, pb](Tape& t, const Node& n) {
                  const Tensor& av = t.node(pa).value;
                  const Tensor& bv = t.node(pb).value;
                  if (t.needs_grad(pa)) t.accum(pa, ops::mm_nt(bv, n.grad));
                  if (t.needs_grad(pb)) t.accum(pb, ops::mm_nn(av, n.grad));
                },
                "matmul_tn");
  }
  return emit(ops::mm_nn(a.value(), b.value()), {pa, pb},
              [pa, pb](Tape& t, const Node& n) {
                const Tensor& av = t.node(pa).value;
                const Tensor& bv = t.node(pb).value;
                if (t.needs_grad(pa)) t.accum(pa, ops::mm_nt(n.grad, bv));
                if (t.needs_grad(pb)) t.accum(pb, ops::mm_tn(av, n.grad));
              },
              "matmul_nn");
}

Var Tape::matmul_nt(Var a, Var b) {
  int pa = a.id(), pb = b.id();
  return emit(ops::mm_nt(a.value(), b.value()), {pa, pb},
              [pa, pb](Tape& t, const Node& n) {
                const Tensor& av = t.node(pa).value;
                const Tensor& bv = t.node(pb).value;
                if (t.needs_grad(pa)) t.accum(pa, ops::mm_nn(n.grad, bv));
                if (t.needs_grad(pb)) t.accum(pb, ops::mm_tn(n.grad, av));
              },
              "matmul_nt");
}

Var Tape::transpose(Var a) {
  int pa = a.id();
  return emit(ops::transpose2(a.value()), {pa},
              [pa](Tape& t, const Node& n) { t.accum(pa, ops::transpose2(n.grad)); },
              "transpose");
}

Var Tape::reduce_sum(Var a, std::vector<size_t> axes, bool keepdims) {
  int pa = a.id();
  const std::vector<size_t> in_dims = a.value().dims();
  std::vector<bool> reduced(in_dims.size(), false);
  for (size_t ax : axes) {
    if (ax >= in_dims.size()) throw ShapeError("reduce: axis out of range");
    reduced[ax] = true;
  }
  return emit(ops::reduce(a.value(), axes, ops::Reduce::Sum, keepdims), {pa},
              [pa, in_dims, reduced](Tape& t, const Node& n) {
                Tensor g = Tensor::zeros(in_dims);
                std::vector<size_t> idx(in_dims.size(), 0);
                for (size_t flat = 0; flat < g.size(); ++flat) {
                  size_t out_flat = 0;
                  for (size_t i = 0; i < in_dims.size(); ++i) {
                    if (reduced[i]) continue;
                    out_flat = out_flat * in_dims[i] + idx[i];
                  }
                  g[flat] = n.grad[out_flat];
                  for (size_t i = in_dims.size(); i-- > 0;) {
                    if (++idx[i] < in_dims[i]) break;
                    idx[i] = 0;
                  }
                }
                t.accum(pa, g);
              },
              "reduce_sum");
}

Var Tape::reduce_mean(Var a, std::vector<size_t> axes, bool keepdims) {
  size_t count = 1;
  for (size_t ax : axes) count *= a.value().dim(ax);
  Var s = reduce_sum(a, std::move(axes), keepdims);
  return scale(s, 1.0 / static_cast<double>(count));
}

Var Tape::reduce_max(Var a, std::vector<size_t> axes, bool keepdims) {
  int pa = a.id();
  const std::vector<size_t> in_dims = a.value().dims();
  std::vector<bool> reduced(in_dims.size(), false);
  for (size_t ax : axes) {
    if (ax >= in_dims.size()) throw ShapeError("reduce: axis out of range");
    reduced[ax] = true;
  }
  Tensor out = ops::reduce(a.value(), axes, ops::Reduce::Max, keepdims);
  // Argmax per output slot, first flat index wins ties.
  std::vector<uint32_t> arg(out.size(), std::numeric_limits<uint32_t>::max());
  {
    const Tensor& x = a.value();
    std::vector<size_t> idx(in_dims.size(), 0);
    std::vector<double> best(out.size(), -std::numeric_limits<double>::infinity());
    for (size_t flat = 0; flat < x.size(); ++flat) {
      size_t out_flat = 0;
      for (size_t i = 0; i < in_dims.size(); ++i) {
        if (reduced[i]) continue;
        out_flat = out_flat * in_dims[i] + idx[i];
      }
      if (x[flat] > best[out_flat]) {
        best[out_flat] = x[flat];
        arg[out_flat] = static_cast<uint32_t>(flat);
      }
      for (size_t i = in_dims.size(); i-- > 0;) {
        if (++idx[i] < in_dims[i]) break;
        idx[i] = 0;
      }
    }
  }
  return emit(std::move(out), {pa},
              [pa, in_dims, arg](Tape& t, const Node& n) {
                Tensor g = Tensor::zeros(in_dims);
                for (size_t i = 0; i < arg.size(); ++i) g[arg[i]] += n.grad[i];
                t.accum(pa, g);
              },
              "reduce_max");
}

Var Tape::sum_all(Var a) {
  std::vector<size_t> axes(a.value().rank());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce_sum(a, std::move(axes), false);
}

Var Tape::softmax(Var a, size_t axis) {
  int pa = a.id();
  Tensor s = ops::softmax(a.value(), axis);
  return emit(std::move(s), {pa},
              [pa, axis](Tape& t, const Node& n) {
                const Tensor& s = n.value;
                const Tensor& g = n.grad;
                const size_t nn = s.dim(axis);
                size_t inner = 1, outer = 1;
                for (size_t i = axis + 1; i < s.rank(); ++i) inner *= s.dim(i);
                for (size_t i = 0; i < axis; ++i) outer *= s.dim(i);
                Tensor out = Tensor::zeros(s.dims());
                for (size_t o = 0; o < outer; ++o)
                  for (size_t in = 0; in < inner; ++in) {
                    const size_t base = o * nn * inner + in;
                    double dot = 0.0;
                    for (size_t i = 0; i < nn; ++i)
                      dot += g[base + i * inner] * s[base + i * inner];
                    for (size_t i = 0; i < nn; ++i)
                      out[base + i * inner] =
                          s[base + i * inner] * (g[base + i * inner] - dot);
                  }
                t.accum(pa, out);
              },
              "softmax");
}

Var Tape::signed_sqrt(Var a) {
  int pa = a.id();
  return emit(ops::signed_sqrt(a.value()), {pa},
              [pa](Tape& t, const Node& n) {
                t.accum(pa, ops::signed_sqrt_backward(t.node(pa).value, n.grad));
              },
              "signed_sqrt");
}

Var Tape::l2_normalize(Var a) {
  int pa = a.id();
  return emit(ops::l2_normalize(a.value()), {pa},
              [pa](Tape& t, const Node& n) {
                t.accum(pa, ops::l2_normalize_backward(t.node(pa).value, n.grad));
              },
              "l2_normalize");
}

Var Tape::reshape(Var a, std::vector<size_t> dims) {
  int pa = a.id();
  const std::vector<size_t> in_dims = a.value().dims();
  return emit(a.value().reshaped(std::move(dims)), {pa},
              [pa, in_dims](Tape& t, const Node& n) {
                t.accum(pa, n.grad.reshaped(in_dims));
              },
              "reshape");
}

Var Tape::concat_cols(Var a, Var b) {
  int pa = a.id(), pb = b.id();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
    throw ShapeError("concat_cols: need rank-2 with equal row counts");
  const size_t rows = av.dim(0), p = av.dim(1), q = bv.dim(1);
  Tensor out({rows, p + q});
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < p; ++j) out.at2(i, j) = av.at2(i, j);
    for (size_t j = 0; j < q; ++j) out.at2(i, p + j) = bv.at2(i, j);
  }
  return emit(std::move(out), {pa, pb},
              [pa, pb, rows, p, q](Tape& t, const Node& n) {
                Tensor ga({rows, p}), gb({rows, q});
                for (size_t i = 0; i < rows; ++i) {
                  for (size_t j = 0; j < p; ++j) ga.at2(i, j) = n.grad.at2(i, j);
                  for (size_t j = 0; j < q; ++j) gb.at2(i, j) = n.grad.at2(i, p + j);
                }
                t.accum(pa, ga);
                t.accum(pb, gb);
              },
              "concat_cols");
}

Var Tape::row_scale(Var mat, Var v) {
  int pm = mat.id(), pv = v.id();
  const Tensor& m = mat.value();
  const Tensor& s = v.value();
  if (m.rank() != 2 || s.size() != m.dim(0))
    throw ShapeError("row_scale: matrix rows must match vector length");
  const size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out = m;
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) out.at2(i, j) *= s[i];
  return emit(std::move(out), {pm, pv},
              [pm, pv, rows, cols](Tape& t, const Node& n) {
                const Tensor& m = t.node(pm).value;
                const Tensor& s = t.node(pv).value;
                if (t.needs_grad(pm)) {
                  Tensor gm = n.grad;
                  for (size_t i = 0; i < rows; ++i)
                    for (size_t j = 0; j < cols; ++j) gm.at2(i, j) *= s[i];
                  t.accum(pm, gm);
                }
                if (t.needs_grad(pv)) {
                  Tensor gv = Tensor::zeros(s.dims());
                  for (size_t i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (size_t j = 0; j < cols; ++j) acc += n.grad.at2(i, j) * m.at2(i, j);
                    gv[i] = acc;
                  }
                  t.accum(pv, gv);
                }
              },
              "row_scale");
}

Var Tape::add_row_vector(Var mat, Var v) {
  int pm = mat.id(), pv = v.id();
  const Tensor& m = mat.value();
  const Tensor& b = v.value();
  if (m.rank() != 2 || b.size() != m.dim(1))
    throw ShapeError("add_row_vector: matrix cols must match vector length");
  const size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out = m;
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) out.at2(i, j) += b[j];
  return emit(std::move(out), {pm, pv},
              [pm, pv, rows, cols](Tape& t, const Node& n) {
                t.accum(pm, n.grad);
                if (t.needs_grad(pv)) {
                  Tensor gv = Tensor::zeros({cols});
                  for (size_t i = 0; i < rows; ++i)
                    for (size_t j = 0; j < cols; ++j) gv[j] += n.grad.at2(i, j);
                  t.accum(pv, gv);
                }
              },
              "add_row_vector");
}

Var Tape::linear(Var x, Var w, Var b) {
  int px = x.id(), pw = w.id(), pb = b.id();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.size() != wv.dim(0) || bv.size() != wv.dim(1))
    throw ShapeError("linear: W must be DxK with x length D, b length K");
  const size_t d = wv.dim(0), k = wv.dim(1);
  Tensor out({k});
  for (size_t j = 0; j < k; ++j) out[j] = bv[j];
  for (size_t i = 0; i < d; ++i) {
    const double xi = xv[i];
    const double* wrow = wv.data() + i * k;
    for (size_t j = 0; j < k; ++j) out[j] += xi * wrow[j];
  }
  return emit(std::move(out), {px, pw, pb},
              [px, pw, pb, d, k](Tape& t, const Node& n) {
                const Tensor& xv = t.node(px).value;
                const Tensor& wv = t.node(pw).value;
                const Tensor& g = n.grad;
                if (t.needs_grad(px)) {
                  Tensor gx = Tensor::zeros({d});
                  for (size_t i = 0; i < d; ++i) {
                    const double* wrow = wv.data() + i * k;
                    double acc = 0.0;
                    for (size_t j = 0; j < k; ++j) acc += wrow[j] * g[j];
                    gx[i] = acc;
                  }
                  t.accum(px, gx);
                }
                if (t.needs_grad(pw)) {
                  Tensor gw = Tensor::zeros({d, k});
                  for (size_t i = 0; i < d; ++i) {
                    const double xi = xv[i];
                    double* grow = gw.data() + i * k;
                    for (size_t j = 0; j < k; ++j) grow[j] = xi * g[j];
                  }
                  t.accum(pw, gw);
                }
                t.accum(pb, g);
              },
              "linear");
}

Var Tape::cross_entropy_logits(Var logits, int label) {
  int pz = logits.id();
  const Tensor& z = logits.value();
  if (z.rank() != 1) throw ShapeError("cross_entropy: logits must be rank-1");
  if (label < 0 || static_cast<size_t>(label) >= z.size())
    throw ContractError("cross_entropy: label out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < z.size(); ++i) mx = std::max(mx, z[i]);
  double sum = 0.0;
  for (size_t i = 0; i < z.size(); ++i) sum += std::exp(z[i] - mx);
  const double loss = mx + std::log(sum) - z[static_cast<size_t>(label)];
  return emit(Tensor::scalar(loss), {pz},
              [pz, label](Tape& t, const Node& n) {
                const Tensor& z = t.node(pz).value;
                Tensor g = ops::softmax(z, 0);
                g[static_cast<size_t>(label)] -= 1.0;
                t.accum(pz, ops::scale(g, n.grad[0]));
              },
              "cross_entropy");
}

Var Tape::conv2d_3x3(Var x, Var w, Var bias) {
  int px = x.id(), pw = w.id(), pb = bias.id();
  return emit(ops::conv2d_3x3(x.value(), w.value(), bias.value()), {px, pw, pb},
              [px, pw, pb](Tape& t, const Node& n) {
                Tensor gx, gw, gb;
                ops::conv2d_3x3_backward(t.node(px).value, t.node(pw).value,
                                         n.grad, gx, gw, gb);
                if (t.needs_grad(px)) t.accum(px, gx);
                if (t.needs_grad(pw)) t.accum(pw, gw);
                if (t.needs_grad(pb)) t.accum(pb, gb);
              },
              "conv2d");
}

Var Tape::maxpool2(Var x) {
  int px = x.id();
  auto arg = std::make_shared<std::vector<uint32_t>>();
  Tensor y = ops::maxpool2(x.value(), arg.get());
  return emit(std::move(y), {px},
              [px, arg](Tape& t, const Node& n) {
                t.accum(px, ops::maxpool2_backward(t.node(px).value, n.grad, *arg));
              },
              "maxpool2");
}

Var Tape::tv_beta(Var image, double beta) {
  int px = image.id();
  const Tensor& x = image.value();
  if (x.rank() != 3) throw ShapeError("tv_beta: image must be HxWxC");
  const size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  double total = 0.0;
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < h; ++i)
      for (size_t j = 0; j < w; ++j) {
        const double v = x.at3(i, j, ch);
        const double dh = (j + 1 < w) ? x.at3(i, j + 1, ch) - v : 0.0;
        const double dv = (i + 1 < h) ? x.at3(i + 1, j, ch) - v : 0.0;
        total += std::pow(dh * dh + dv * dv, beta / 2.0);
      }
  return emit(Tensor::scalar(total), {px},
              [px, beta, h, w, c](Tape& t, const Node& n) {
                const Tensor& x = t.node(px).value;
                Tensor g = Tensor::zeros(x.dims());
                const double gout = n.grad[0];
                for (size_t ch = 0; ch < c; ++ch)
                  for (size_t i = 0; i < h; ++i)
                    for (size_t j = 0; j < w; ++j) {
                      const double v = x.at3(i, j, ch);
                      const double dh = (j + 1 < w) ? x.at3(i, j + 1, ch) - v : 0.0;
                      const double dv = (i + 1 < h) ? x.at3(i + 1, j, ch) - v : 0.0;
                      const double q = dh * dh + dv * dv;
                      if (q == 0.0) continue;
                      const double f = beta * std::pow(q, beta / 2.0 - 1.0) * gout;
                      if (j + 1 < w) {
                        g.at3(i, j + 1, ch) += f * dh;
                        g.at3(i, j, ch) -= f * dh;
                      }
                      if (i + 1 < h) {
                        g.at3(i + 1, j, ch) += f * dv;
                        g.at3(i, j, ch) -= f * dv;
                      }
                    }
                t.accum(px, g);
              },
              "tv_beta");
}

}  // namespace bipool

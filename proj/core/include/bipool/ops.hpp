#pragma once

#include <cstdint>
#include <vector>

#include "bipool/tensor.hpp"

namespace bipool::ops {

// All kernels use fixed ascending-index accumulation so results are
// reproducible across runs and platforms. No implicit broadcasting anywhere;
// callers reshape explicitly.

/// matmul with the layout used by pooled outer products: A is LxM, B is LxN.
/// transpose_first=true computes A^T B (MxN); false computes A B (A LxM, B MxN).
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_first);

Tensor mm_nn(const Tensor& a, const Tensor& b);  // (LxM)(MxN) -> LxN
Tensor mm_tn(const Tensor& a, const Tensor& b);  // (LxM)^T(LxN) -> MxN
Tensor mm_nt(const Tensor& a, const Tensor& b);  // (LxM)(NxM)^T -> LxN

Tensor transpose2(const Tensor& m);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);

enum class Reduce { Sum, Mean, Max };

/// Reduce over an axis set; reduced extents are removed, or kept as 1 when
/// keepdims is set. Reducing every axis yields a rank-1 scalar tensor.
Tensor reduce(const Tensor& t, const std::vector<size_t>& axes, Reduce mode,
              bool keepdims = false);

double sum_all(const Tensor& t);

/// Stable softmax (max subtraction) along one axis.
Tensor softmax(const Tensor& t, size_t axis);

/// y_i = sign(v_i) * sqrt(|v_i|).
Tensor signed_sqrt(const Tensor& v);
/// Chain-rule factor g * 0.5 / sqrt(max(|v|, eps)); eps guards the kink at 0.
Tensor signed_sqrt_backward(const Tensor& v, const Tensor& g,
                            double eps = 1e-8);

/// v / ||v||_2 over the whole buffer; below eps the input passes through.
Tensor l2_normalize(const Tensor& v, double eps = 1e-12);
Tensor l2_normalize_backward(const Tensor& v, const Tensor& g,
                             double eps = 1e-12);

/// v <- momentum*v - lr*g; p <- p + v.
void sgd_step(Tensor& p, const Tensor& g, double lr, double momentum,
              Tensor& velocity);

// Convolution kernels for the backbone: x is HxWxC, weights are
// [out_ch, 3, 3, in_ch], pad 1, stride 1.
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& bias);
void conv2d_3x3_backward(const Tensor& x, const Tensor& w, const Tensor& gout,
                         Tensor& gx, Tensor& gw, Tensor& gbias);

/// 2x2 max pool, stride 2, floor semantics (trailing odd row/col dropped).
/// argmax records the flat input index feeding each output for the backward
/// pass; ties break to the first index in (dy, dx) scan order.
Tensor maxpool2(const Tensor& x, std::vector<uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& x, const Tensor& gout,
                         const std::vector<uint32_t>& argmax);

}  // namespace bipool::ops

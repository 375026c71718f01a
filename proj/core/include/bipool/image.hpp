#pragma once

#include "bipool/tensor.hpp"

namespace bipool {

/// Bilinear interpolation with half-pixel-center alignment: source
/// coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped to the
/// valid range.
Tensor resize_bilinear(const Tensor& image, size_t new_h, size_t new_w);

/// Horizontal mirror (column order reversed).
Tensor hflip(const Tensor& image);

}  // namespace bipool

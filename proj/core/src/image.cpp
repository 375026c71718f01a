#include "bipool/image.hpp"

#include <algorithm>
#include <cmath>

namespace bipool {

Tensor resize_bilinear(const Tensor& image, size_t new_h, size_t new_w) {
  if (image.rank() != 3) throw ShapeError("resize: image must be HxWxC");
  if (new_h == 0 || new_w == 0) throw ShapeError("resize: target extents must be >= 1");
  const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (new_h == h && new_w == w) return image;
  Tensor out({new_h, new_w, c});
  for (size_t oy = 0; oy < new_h; ++oy) {
    double sy = (static_cast<double>(oy) + 0.5) * static_cast<double>(h) /
                    static_cast<double>(new_h) - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const size_t y0 = static_cast<size_t>(sy);
    const size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (size_t ox = 0; ox < new_w; ++ox) {
      double sx = (static_cast<double>(ox) + 0.5) * static_cast<double>(w) /
                      static_cast<double>(new_w) - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const size_t x0 = static_cast<size_t>(sx);
      const size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (size_t ch = 0; ch < c; ++ch) {
        const double top = image.at3(y0, x0, ch) * (1.0 - fx) + image.at3(y0, x1, ch) * fx;
        const double bot = image.at3(y1, x0, ch) * (1.0 - fx) + image.at3(y1, x1, ch) * fx;
        out.at3(oy, ox, ch) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("hflip: image must be HxWxC");
  const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out(image.dims());
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t ch = 0; ch < c; ++ch) out.at3(y, x, ch) = image.at3(y, w - 1 - x, ch);
  return out;
}

}  // namespace bipool

#pragma once

#include <string>
#include <utility>

#include "bipool/tensor.hpp"

namespace bipool {

/// Spatially indexed output of a backbone stage.
struct FeatureMap {
  size_t height = 0;
  size_t width = 0;
  size_t channels = 0;
  Tensor values;  // H x W x C
  std::string tap;

  static FeatureMap wrap(Tensor t, std::string tap_name = {}) {
    if (t.rank() != 3) throw ShapeError("feature map must be HxWxC, got " + t.shape_str());
    FeatureMap fm;
    fm.height = t.dim(0);
    fm.width = t.dim(1);
    fm.channels = t.dim(2);
    fm.values = std::move(t);
    fm.tap = std::move(tap_name);
    return fm;
  }
};

/// Per-location feature rows; row order is row-major over (H, W).
struct LocationFeatures {
  Tensor rows;  // L x C

  size_t count() const { return rows.dim(0); }
  size_t channels() const { return rows.dim(1); }

  static LocationFeatures wrap(Tensor t) {
    if (t.rank() != 2) throw ShapeError("location features must be LxC, got " + t.shape_str());
    return LocationFeatures{std::move(t)};
  }
};

inline LocationFeatures flatten_locations(const FeatureMap& fm) {
  return LocationFeatures{fm.values.reshaped({fm.height * fm.width, fm.channels})};
}

inline FeatureMap unflatten_locations(const LocationFeatures& lf, size_t h, size_t w,
                                      std::string tap = {}) {
  if (lf.count() != h * w) throw ShapeError("unflatten: L != H*W");
  return FeatureMap::wrap(lf.rows.reshaped({h, w, lf.channels()}), std::move(tap));
}

/// Crops the larger of two maps by its last row and/or column so both share
/// the same spatial extents. Differences beyond one row/column are an error.
std::pair<FeatureMap, FeatureMap> align_spatial(FeatureMap a, FeatureMap b);

}  // namespace bipool

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bipool/autodiff.hpp"
#include "bipool/features.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

using ParamMap = std::map<std::string, Tensor>;

/// One backbone stage: 3x3 conv (pad 1, stride 1) -> relu -> optional 2x2
/// max pool. Taps expose the post-activation (pre-pool) output of a stage.
struct BackboneStage {
  size_t out_channels = 0;
  bool pool_after = false;
};

struct BackboneConfig {
  size_t in_channels = 3;
  std::vector<BackboneStage> stages;
  std::vector<std::string> taps;  // names are t1..tN by stage

  /// Desk-scale default: 4 stages (16, 32, 64, 64), pool after 1-3,
  /// taps t1..t4.
  static BackboneConfig desk_default();

  void validate() const;
  size_t stage_of_tap(const std::string& tap) const;  // 0-based
  size_t tap_channels(const std::string& tap) const;
  /// Cumulative downsampling factor at the tap (pools before the stage).
  size_t tap_stride(const std::string& tap) const;
  /// Receptive field extent of one tap unit, from the config arithmetic.
  size_t tap_receptive_field(const std::string& tap) const;
  /// Smallest square input that keeps every pooling stage non-empty.
  size_t min_input_extent() const;
};

/// He-style fan-in scaled Gaussian weights, zero biases; deterministic per
/// seed. Names: backbone/s<i>/w ([out,3,3,in]) and backbone/s<i>/b.
ParamMap backbone_init(const BackboneConfig& cfg, uint64_t seed);

std::map<std::string, FeatureMap> backbone_forward(const BackboneConfig& cfg,
                                                   const ParamMap& params,
                                                   const Tensor& image);

/// Autodiff builder; params enter as graph nodes keyed like the ParamMap.
std::map<std::string, Var> backbone_graph(Tape& tape, const BackboneConfig& cfg,
                                          const std::map<std::string, Var>& params,
                                          Var image);

}  // namespace bipool

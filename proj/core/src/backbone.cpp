#include "bipool/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

BackboneConfig BackboneConfig::desk_default() {
  BackboneConfig cfg;
  cfg.in_channels = 3;
  cfg.stages = {{16, true}, {32, true}, {64, true}, {64, false}};
  cfg.taps = {"t1", "t2", "t3", "t4"};
  return cfg;
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone: at least one stage required");
  if (taps.empty()) throw ConfigError("backbone: at least one tap required");
  if (in_channels == 0) throw ConfigError("backbone: input channels must be positive");
  for (const auto& s : stages)
    if (s.out_channels == 0) throw ConfigError("backbone: stage channels must be positive");
  for (const auto& t : taps) stage_of_tap(t);
}

size_t BackboneConfig::stage_of_tap(const std::string& tap) const {
  if (tap.size() >= 2 && tap[0] == 't') {
    size_t idx = 0;
    for (size_t i = 1; i < tap.size(); ++i) {
      if (tap[i] < '0' || tap[i] > '9') idx = stages.size();
      else idx = idx * 10 + static_cast<size_t>(tap[i] - '0');
      if (idx > stages.size()) break;
    }
    if (idx >= 1 && idx <= stages.size()) return idx - 1;
  }
  throw ConfigError("backbone: unknown tap name '" + tap + "'");
}

size_t BackboneConfig::tap_channels(const std::string& tap) const {
  return stages[stage_of_tap(tap)].out_channels;
}

size_t BackboneConfig::tap_stride(const std::string& tap) const {
  const size_t stage = stage_of_tap(tap);
  size_t stride = 1;
  for (size_t i = 0; i < stage; ++i)
    if (stages[i].pool_after) stride *= 2;
  return stride;
}

size_t BackboneConfig::tap_receptive_field(const std::string& tap) const {
  const size_t stage = stage_of_tap(tap);
  size_t rf = 1, jump = 1;
  for (size_t i = 0; i <= stage; ++i) {
    rf += 2 * jump;  // 3x3 conv
    if (i < stage && stages[i].pool_after) {
      rf += jump;  // 2x2 pool
      jump *= 2;
    }
  }
  return rf;
}

size_t BackboneConfig::min_input_extent() const {
  size_t need = 1;
  size_t scale = 1;
  for (const auto& s : stages) {
    if (s.pool_after) {
      need = std::max(need, scale * 2);  // pool input must be at least 2x2
      scale *= 2;
    }
  }
  return need;
}

ParamMap backbone_init(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamMap params;
  Rng rng = Rng(seed).split(0x6261636bULL);
  size_t cin = cfg.in_channels;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const size_t cout = cfg.stages[i].out_channels;
    const double sigma = std::sqrt(2.0 / static_cast<double>(9 * cin));
    params["backbone/s" + std::to_string(i) + "/w"] =
        random_normal(rng, {cout, 3, 3, cin}, sigma);
    params["backbone/s" + std::to_string(i) + "/b"] = Tensor::zeros({cout});
    cin = cout;
  }
  return params;
}

std::map<std::string, FeatureMap> backbone_forward(const BackboneConfig& cfg,
                                                   const ParamMap& params,
                                                   const Tensor& image) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(2) != cfg.in_channels)
    throw ShapeError("backbone: image must be HxWx" + std::to_string(cfg.in_channels));
  const size_t need = cfg.min_input_extent();
  if (image.dim(0) < need || image.dim(1) < need)
    throw ShapeError("backbone: image " + image.shape_str() +
                     " smaller than minimum extent " + std::to_string(need));

  std::map<std::string, FeatureMap> taps;
  Tensor x = image;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const std::string base = "backbone/s" + std::to_string(i) + "/";
    const Tensor& w = params.at(base + "w");
    const Tensor& b = params.at(base + "b");
    Tensor activated = ops::relu(ops::conv2d_3x3(x, w, b));
    const std::string name = "t" + std::to_string(i + 1);
    if (std::find(cfg.taps.begin(), cfg.taps.end(), name) != cfg.taps.end())
      taps[name] = FeatureMap::wrap(activated, name);
    x = cfg.stages[i].pool_after ? ops::maxpool2(activated) : std::move(activated);
  }
  return taps;
}

std::map<std::string, Var> backbone_graph(Tape& tape, const BackboneConfig& cfg,
                                          const std::map<std::string, Var>& params,
                                          Var image) {
  cfg.validate();
  std::map<std::string, Var> taps;
  Var x = image;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const std::string base = "backbone/s" + std::to_string(i) + "/";
    Var activated = tape.relu(tape.conv2d_3x3(x, params.at(base + "w"), params.at(base + "b")));
    const std::string name = "t" + std::to_string(i + 1);
    if (std::find(cfg.taps.begin(), cfg.taps.end(), name) != cfg.taps.end())
      taps[name] = activated;
    x = cfg.stages[i].pool_after ? tape.maxpool2(activated) : activated;
  }
  return taps;
}

}  // namespace bipool

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bipool/config.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

/// One renderable texture element.
struct GratingComponent {
  double amp = 0.22;
  double orientation_deg = 0.0;
  double orientation_jitter_deg = 3.0;
  double frequency = 5.0;  // cycles per image
  double frequency_jitter = 0.4;
};

struct DotComponent {
  double count = 60.0;  // expected dots per image
  double radius = 1.5;
  double radius_jitter = 0.3;
  double amp = 0.4;  // dots alternate sign, keeping the mean level
};

/// One way an image of a class can look; gratings in a variant are
/// superimposed. Each image draws one variant uniformly.
struct TextureVariant {
  std::vector<GratingComponent> gratings;
  std::vector<DotComponent> dots;
};

/// Class identity is carried by which element combinations co-occur in an
/// image, not by marginal statistics: variants are balanced so per-class
/// means and orientation energies overlap across classes within a group.
struct TextureClassSpec {
  std::vector<TextureVariant> variants;
  /// When positive, a per-image base angle drawn from [0, range) is added
  /// to every grating orientation, making the orientation marginal uniform;
  /// class identity then lives purely in the relative angles.
  double base_orientation_range_deg = 0.0;
};

struct SyntheticTextureSpec {
  size_t num_classes = 8;
  size_t image_size = 64;
  size_t train_per_class = 100;
  size_t val_per_class = 20;
  size_t test_per_class = 50;
  double noise_level = 0.06;
  double brightness_jitter = 0.03;  // per-image uniform offset
  uint64_t seed = 1;
  std::vector<TextureClassSpec> classes;

  /// Default 8-class benchmark: two frequency groups of three relative-angle
  /// plaid classes each (base orientation uniform per image), plus two dot
  /// classes with matched coverage. Within a group the marginal orientation
  /// energy is uniform across classes; only the local co-occurrence of
  /// orientations separates them.
  static SyntheticTextureSpec desk_default(uint64_t seed = 1);
  /// First-order-separable companion set (fixed grating orientations at two
  /// frequencies, plus dot classes); used to pretrain backbones whose
  /// features the benchmark models start from.
  static SyntheticTextureSpec pretext_default(uint64_t seed = 2);
  static SyntheticTextureSpec from_kv(const KvConfig& kv);
  void validate() const;
};

/// Deterministic per (spec.seed, class, stream).
Tensor synth_image(const SyntheticTextureSpec& spec, size_t cls, uint64_t stream);

/// Writes class<k>/... PPMs plus train.txt / val.txt / test.txt manifests
/// with disjoint images; byte-identical across reruns with the same spec.
void synth_generate(const SyntheticTextureSpec& spec,
                    const std::filesystem::path& out_dir);

}  // namespace bipool

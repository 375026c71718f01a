#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bipool/autodiff.hpp"
#include "bipool/backbone.hpp"
#include "bipool/codebook.hpp"
#include "bipool/config.hpp"
#include "bipool/encoders.hpp"
#include "bipool/heads.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

enum class EncoderKind { Bilinear, NetVlad, NetFv, NetBovw, FcBaseline };

EncoderKind encoder_kind_from_string(const std::string& name);
std::string encoder_kind_to_string(EncoderKind kind);

struct TrainConfig {
  double lr = 0.001;
  double lr_head = 0.1;  // phase 1 is convex; larger steps are safe there
  double momentum = 0.9;
  int epochs_head = 40;
  int epochs_finetune = 10;
  size_t batch_size = 8;
  double c_svm = 1.0;
  bool flip_augment = false;
  int patience = 5;
  double svm_tol = 1e-6;
  uint64_t seed = 1;

  void validate() const;
};

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::desk_default();
  EncoderKind encoder = EncoderKind::Bilinear;
  std::string tap = "t4";
  size_t codebook_k = 64;         // NetBoVW defaults to 256; 4096 cap
  double gamma_init = 0.0;        // <= 0: derived from k-means
  size_t projection_rank = 0;     // one-stream projection; 0 disables
  std::string projection_init = "pca";  // pca | random
  bool encoder_trainable = true;  // false freezes encoder/* and proj/* in fine-tuning
  std::vector<double> scales = {1.0};
  bool multiscale_merge = true;   // false: average per-scale descriptors
  std::vector<std::string> invert_layers;
  size_t num_classes = 0;
  Dtype dtype = Dtype::F64;
  uint64_t seed = 1;
  std::string init_checkpoint;  // warm-start backbone weights from here

  void validate() const;
  size_t feature_dim() const { return backbone.tap_channels(tap); }
  size_t stream_a_dim() const {
    return projection_rank ? projection_rank : feature_dim();
  }
  size_t descriptor_dim() const;
};

/// Full key=value run configuration: model + training fields, one file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

/// Images decoded into memory with labels.
struct LoadedDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  size_t num_classes = 0;

  size_t size() const { return images.size(); }
};

/// Reads `<dir>/<manifest>` and decodes every referenced PPM.
LoadedDataset load_dataset(const std::filesystem::path& dir,
                           const std::string& manifest_name,
                           size_t expected_classes = 0);

struct Model {
  ModelConfig cfg;
  ParamMap params;

  Codebook codebook() const;
  SoftmaxHead head() const;
  SoftmaxHead bank_head(const std::string& tap) const;
  bool uses_codebook() const;
};

/// Initializes every parameter: backbone weights by seed, codebook by
/// k-means on location features sampled from init_images, projection by PCA
/// (or seeded random), head at zero.
Model model_init(const ModelConfig& cfg, const std::vector<Tensor>& init_images);

/// Single-image normalized descriptor; honors the configured scale set
/// (inadmissible scales skipped, none admissible is a config error).
Tensor descriptor_forward(const Model& model, const Tensor& image);

/// Head logits for one image.
Tensor class_scores(const Model& model, const Tensor& image);

/// Normalized per-tap mean-pooled bilinear descriptors (the inversion
/// bank's feature space).
std::map<std::string, Tensor> layer_bilinear_descriptors(
    const Model& model, const Tensor& image, const std::vector<std::string>& taps);

/// Graph-side single-scale descriptor; param graph nodes keyed as in
/// Model::params.
Var descriptor_graph(Tape& tape, const Model& model,
                     const std::map<std::string, Var>& pv, Var image);

/// Cross-entropy loss node for one (image, label) pair.
Var loss_graph(Tape& tape, const Model& model,
               const std::map<std::string, Var>& pv, Var image, int label);

/// Leaf nodes for every parameter; `trainable` decides requires_grad.
std::map<std::string, Var> make_param_vars(
    Tape& tape, const ParamMap& params,
    const std::function<bool(const std::string&)>& trainable);

void model_save(const Model& model, const std::filesystem::path& path,
                const TrainConfig& train_cfg = TrainConfig{});
Model model_load(const std::filesystem::path& path,
                 TrainConfig* train_out = nullptr);

}  // namespace bipool

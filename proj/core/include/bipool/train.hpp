#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bipool/model.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

/// Doubles a dataset with the horizontal mirror of every image (labels kept).
LoadedDataset augment_flip(const LoadedDataset& ds);

struct EpochLog {
  int epoch = 0;
  std::string phase;  // "head" or "finetune"
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double final_train_loss = 0.0;
  double head_phase_loss = 0.0;  // training loss at the end of phase 1
};

/// Two-step schedule: phase 1 trains only the classification head on frozen
/// descriptors; phase 2 fine-tunes the whole model at the same small
/// learning rate, monitoring validation error with early stopping. Emits a
/// `epoch<TAB>phase<TAB>train_loss<TAB>val_acc` line per epoch when log_out
/// is set. Deterministic per cfg.seed.
TrainResult train_two_step(Model& model, const LoadedDataset& train,
                           const LoadedDataset& val, const TrainConfig& cfg,
                           std::ostream* log_out = nullptr);

/// Trains the per-tap inversion bank classifiers (mean-pooled bilinear
/// descriptors at each configured layer) on the given dataset; stores
/// bank/<tap>/w and bank/<tap>/b in the model.
void train_layer_banks(Model& model, const LoadedDataset& train,
                       const TrainConfig& cfg);

/// Mean of the class scores for an image and its mirror.
Tensor predict_flip_average(const Model& model, const Tensor& image);

/// Fraction of correct argmax predictions over a dataset.
double dataset_accuracy(const Model& model, const LoadedDataset& ds,
                        bool flip_average = false);

/// Descriptors for every image, in dataset order (rows of an n x D tensor).
Tensor extract_descriptors(const Model& model, const LoadedDataset& ds);

}  // namespace bipool

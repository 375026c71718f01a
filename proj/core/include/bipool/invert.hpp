#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bipool/model.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

/// Numeric failure during optimization (non-finite objective).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InversionConfig {
  double gamma = 1e-8;  // prior weight
  double beta = 2.0;    // smoothness exponent
  std::vector<std::string> layers;  // taps with bank classifiers
  int max_iters = 300;
  size_t height = 64;
  size_t width = 64;
  uint64_t seed = 1;

  void validate() const;
};

/// Pairwise forward-difference image prior
/// sum_{i,j,c} ((x[i][j+1]-x[i][j])^2 + (x[i+1][j]-x[i][j])^2)^(beta/2);
/// out-of-range differences are zero (replicate-edge convention).
double tv_prior(const Tensor& image, double beta);

/// Per-layer target losses plus gamma * prior, as a graph node over the
/// image leaf. Bank classifiers and backbone weights are constants.
Var inversion_objective(Tape& tape, const Model& model, Var image, int target,
                        const InversionConfig& cfg);

/// Raw objective value at an image (no gradients).
double inversion_objective_value(const Model& model, const Tensor& image,
                                 int target, const InversionConfig& cfg);

struct InversionStep {
  int iter = 0;
  double objective = 0.0;
};

struct InversionResult {
  Tensor image;
  std::vector<InversionStep> trace;  // accepted objectives, non-increasing
};

/// Gradient descent with backtracking line search from seeded uniform noise
/// in [0.4, 0.6]; pixels are clamped to [0, 1] after each accepted step.
InversionResult invert_category(const Model& model, int target,
                                const InversionConfig& cfg);

/// Per-layer softmax probability of the target class at an image.
std::map<std::string, double> target_posteriors(const Model& model,
                                                const Tensor& image, int target,
                                                const std::vector<std::string>& layers);

}  // namespace bipool

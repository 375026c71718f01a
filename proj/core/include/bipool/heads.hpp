#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bipool/autodiff.hpp"
#include "bipool/tensor.hpp"

namespace bipool {

/// k-way linear classification head over a descriptor.
struct SoftmaxHead {
  Tensor w;  // D x K
  Tensor b;  // K
};

/// Negative log-likelihood of the label under softmax(W^T d + b), as a
/// graph node.
Var softmax_loss(Tape& t, Var descriptor, Var w, Var b, int label);

/// Raw logits for evaluation.
Tensor head_logits(const SoftmaxHead& head, const Tensor& descriptor);

/// One-vs-all linear SVM; calibration is folded into (w, b) so score() is
/// always the calibrated score.
struct LinearSvm {
  Tensor w;  // D
  double b = 0.0;
  double score(const Tensor& x) const;
};

struct SvmTrainOptions {
  double c_svm = 1.0;
  double tol = 1e-6;   // relative objective improvement defining convergence
  int max_iters = 2000;
};

struct OvaSvmResult {
  std::vector<LinearSvm> classifiers;  // one per class; invalid when error set
  std::vector<std::string> errors;     // empty string = trained fine
  bool ok(size_t cls) const { return errors[cls].empty(); }
};

/// L2-regularized hinge loss (average-loss formulation, lambda = 1/C_svm)
/// minimized by deterministic full-batch subgradient descent with a
/// monotone, halving step size.
OvaSvmResult svm_train_ova(const Tensor& xs, const std::vector<int>& labels,
                           size_t num_classes, const SvmTrainOptions& opt = {});

/// Single binary SVM on +-1 labels; exposed for tests.
LinearSvm svm_train_binary(const Tensor& xs, const std::vector<int>& ys,
                           const SvmTrainOptions& opt = {});

double svm_hinge_objective(const LinearSvm& svm, const Tensor& xs,
                           const std::vector<int>& ys, double c_svm);

/// Affine score map a*s + c with a = 2/(m+ - m-), c = 1 - a*m+, folded into
/// (w, b) so median positive/negative training scores land at +1/-1.
LinearSvm svm_calibrate(const LinearSvm& svm, std::vector<double> pos_scores,
                        std::vector<double> neg_scores);

/// Symmetric confusion counts c(i,j) = errors i->j plus j->i, descending,
/// ties by lexicographic pair. Pairs with zero confusion are omitted.
std::vector<std::pair<std::pair<int, int>, size_t>> confusion_top_pairs(
    const std::vector<int>& predictions, const std::vector<int>& labels,
    size_t top_n);

}  // namespace bipool

#include "bipool/heads.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bipool/ops.hpp"

namespace bipool {

Var softmax_loss(Tape& t, Var descriptor, Var w, Var b, int label) {
  return t.cross_entropy_logits(t.linear(descriptor, w, b), label);
}

Tensor head_logits(const SoftmaxHead& head, const Tensor& descriptor) {
  if (head.w.rank() != 2 || descriptor.size() != head.w.dim(0))
    throw ShapeError("head_logits: descriptor dim does not match head");
  const size_t d = head.w.dim(0), k = head.w.dim(1);
  Tensor out = head.b;
  for (size_t i = 0; i < d; ++i) {
    const double x = descriptor[i];
    for (size_t j = 0; j < k; ++j) out[j] += x * head.w.at2(i, j);
  }
  return out;
}

double LinearSvm::score(const Tensor& x) const {
  if (x.size() != w.size()) throw ShapeError("svm score: dim mismatch");
  double s = b;
  for (size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

double svm_hinge_objective(const LinearSvm& svm, const Tensor& xs,
                           const std::vector<int>& ys, double c_svm) {
  const size_t n = xs.dim(0);
  const double lambda = 1.0 / c_svm;
  double reg = 0.0;
  for (size_t i = 0; i < svm.w.size(); ++i) reg += svm.w[i] * svm.w[i];
  double hinge = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double s = svm.b;
    for (size_t j = 0; j < xs.dim(1); ++j) s += svm.w[j] * xs.at2(i, j);
    hinge += std::max(0.0, 1.0 - static_cast<double>(ys[i]) * s);
  }
  return 0.5 * lambda * reg + hinge / static_cast<double>(n);
}

LinearSvm svm_train_binary(const Tensor& xs, const std::vector<int>& ys,
                           const SvmTrainOptions& opt) {
  if (xs.rank() != 2 || xs.dim(0) != ys.size())
    throw ShapeError("svm: xs must be n x D with matching labels");
  const size_t n = xs.dim(0), d = xs.dim(1);
  const double lambda = 1.0 / opt.c_svm;

  LinearSvm svm;
  svm.w = Tensor::zeros({d});
  svm.b = 0.0;
  double fx = svm_hinge_objective(svm, xs, ys, opt.c_svm);
  double step = 0.5 / lambda;
  int stall = 0;

  Tensor gw({d});
  for (int it = 0; it < opt.max_iters; ++it) {
    for (size_t j = 0; j < d; ++j) gw[j] = lambda * svm.w[j];
    double gb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double s = svm.b;
      const double* row = xs.data() + i * d;
      for (size_t j = 0; j < d; ++j) s += svm.w[j] * row[j];
      const double y = static_cast<double>(ys[i]);
      if (y * s < 1.0) {
        const double f = -y / static_cast<double>(n);
        for (size_t j = 0; j < d; ++j) gw[j] += f * row[j];
        gb += f;
      }
    }

    // Monotone halving line search on the subgradient direction.
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      LinearSvm cand;
      cand.w = svm.w;
      for (size_t j = 0; j < d; ++j) cand.w[j] -= step * gw[j];
      cand.b = svm.b - step * gb;
      const double fc = svm_hinge_objective(cand, xs, ys, opt.c_svm);
      if (fc <= fx) {
        const double improved = fx - fc;
        svm = std::move(cand);
        fx = fc;
        accepted = true;
        stall = improved <= opt.tol * (1.0 + std::abs(fx)) ? stall + 1 : 0;
        step *= 1.25;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || stall >= 25) break;
  }
  return svm;
}

OvaSvmResult svm_train_ova(const Tensor& xs, const std::vector<int>& labels,
                           size_t num_classes, const SvmTrainOptions& opt) {
  if (xs.rank() != 2 || xs.dim(0) != labels.size())
    throw ShapeError("svm_train_ova: xs must be n x D with matching labels");
  OvaSvmResult res;
  res.classifiers.resize(num_classes);
  res.errors.resize(num_classes);
  for (size_t cls = 0; cls < num_classes; ++cls) {
    size_t pos = 0;
    std::vector<int> ys(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
      ys[i] = labels[i] == static_cast<int>(cls) ? 1 : -1;
      if (ys[i] == 1) ++pos;
    }
    if (pos == 0) {
      res.errors[cls] = "no positive examples";
      continue;
    }
    if (pos == labels.size()) {
      res.errors[cls] = "no negative examples";
      continue;
    }
    res.classifiers[cls] = svm_train_binary(xs, ys, opt);
  }
  return res;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

LinearSvm svm_calibrate(const LinearSvm& svm, std::vector<double> pos_scores,
                        std::vector<double> neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw ContractError("svm_calibrate: both score lists must be nonempty");
  const double m_pos = median(std::move(pos_scores));
  const double m_neg = median(std::move(neg_scores));
  if (m_pos == m_neg)
    throw ContractError("svm_calibrate: degenerate calibration, equal medians");
  const double a = 2.0 / (m_pos - m_neg);
  const double c = 1.0 - a * m_pos;
  LinearSvm out;
  out.w = ops::scale(svm.w, a);
  out.b = a * svm.b + c;
  return out;
}

std::vector<std::pair<std::pair<int, int>, size_t>> confusion_top_pairs(
    const std::vector<int>& predictions, const std::vector<int>& labels,
    size_t top_n) {
  if (predictions.size() != labels.size())
    throw ShapeError("confusion_top_pairs: size mismatch");
  std::map<std::pair<int, int>, size_t> counts;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) continue;
    const int a = std::min(predictions[i], labels[i]);
    const int b = std::max(predictions[i], labels[i]);
    counts[{a, b}]++;
  }
  std::vector<std::pair<std::pair<int, int>, size_t>> pairs(counts.begin(), counts.end());
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  if (pairs.size() > top_n) pairs.resize(top_n);
  return pairs;
}

}  // namespace bipool

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bipool/tensor.hpp"

namespace bipool {

struct FdOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  double denom_floor = 1e-6;  // below this magnitude errors read as absolute
  // A coordinate failing at `step` is re-checked at these; passing any of
  // them confirms the analytic gradient and marks the coarse failure as a
  // kink/truncation artifact.
  std::vector<double> retry_steps = {1e-6, 5e-8};
};

struct FdReport {
  double max_rel_err = 0.0;
  bool pass = true;
  size_t checked = 0;
  size_t skipped = 0;
  std::string note;  // set when non-smooth points were skipped
};

/// Central-difference check of a scalar function against an analytic
/// gradient. `skip` marks coordinates near non-smooth loci; such points are
/// excluded and counted.
FdReport finite_diff_check(
    const std::function<double(const Tensor&)>& f,
    const std::function<Tensor(const Tensor&)>& analytic_grad, const Tensor& x0,
    const FdOptions& opt = {},
    const std::function<bool(const Tensor&, size_t)>& skip = {});

/// Same check over several inputs at once (gradient w.r.t. each input).
FdReport finite_diff_check_multi(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::function<std::vector<Tensor>(const std::vector<Tensor>&)>& grads,
    const std::vector<Tensor>& x0, const FdOptions& opt = {},
    const std::function<bool(size_t, const Tensor&, size_t)>& skip = {});

struct GradCaseResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
  size_t checked = 0;
  size_t skipped = 0;
};

struct GradSuiteOptions {
  uint64_t seed = 1;
  int points_per_op = 10;
  // Test fixture: flips the sign of the pooled-outer-product backward so the
  // suite demonstrably catches a wrong Eq.-style gradient.
  bool inject_bilinear_sign_error = false;
};

/// Finite-difference suite over every registered differentiable operation,
/// the backbone, the image prior, and the inversion objective.
std::vector<GradCaseResult> run_gradcheck_suite(const GradSuiteOptions& opt);

}  // namespace bipool

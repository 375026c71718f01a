#include "bipool/invert.hpp"

#include <algorithm>
#include <cmath>

#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

void InversionConfig::validate() const {
  if (gamma < 0) throw ConfigError("inversion gamma must be >= 0");
  if (!(beta > 0)) throw ConfigError("inversion beta must be > 0");
  if (layers.empty()) throw ConfigError("inversion requires at least one layer");
  if (max_iters < 0) throw ConfigError("inversion max-iters must be >= 0");
  if (height == 0 || width == 0) throw ConfigError("inversion image extents must be >= 1");
}

double tv_prior(const Tensor& image, double beta) {
  if (image.rank() != 3) throw ShapeError("tv_prior: image must be HxWxC");
  const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  double total = 0.0;
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < h; ++i)
      for (size_t j = 0; j < w; ++j) {
        const double v = image.at3(i, j, ch);
        const double dh = (j + 1 < w) ? image.at3(i, j + 1, ch) - v : 0.0;
        const double dv = (i + 1 < h) ? image.at3(i + 1, j, ch) - v : 0.0;
        total += std::pow(dh * dh + dv * dv, beta / 2.0);
      }
  return total;
}

namespace {

/// Normalized mean-pooled bilinear descriptor of one tap, as a graph node.
Var layer_descriptor_graph(Tape& tape, Var fm) {
  const size_t h = fm.value().dim(0), w = fm.value().dim(1), c = fm.value().dim(2);
  Var rows = tape.reshape(fm, {h * w, c});
  Var pooled = tape.scale(tape.matmul(rows, rows, true),
                          1.0 / static_cast<double>(h * w));
  Var vec = tape.reshape(pooled, {c * c});
  return tape.l2_normalize(tape.signed_sqrt(vec));
}

}  // namespace

Var inversion_objective(Tape& tape, const Model& model, Var image, int target,
                        const InversionConfig& cfg) {
  cfg.validate();
  for (const std::string& tap : cfg.layers)
    if (!model.params.count("bank/" + tap + "/w"))
      throw ConfigError("no bank classifier for layer " + tap +
                        "; train with invert-layers including it");
  auto pv = make_param_vars(tape, model.params,
                            [](const std::string&) { return false; });
  auto taps = backbone_graph(tape, model.cfg.backbone, pv, image);
  Var loss;
  for (const std::string& tap : cfg.layers) {
    Var desc = layer_descriptor_graph(tape, taps.at(tap));
    Var nll = tape.cross_entropy_logits(
        tape.linear(desc, pv.at("bank/" + tap + "/w"), pv.at("bank/" + tap + "/b")),
        target);
    loss = loss.valid() ? tape.add(loss, nll) : nll;
  }
  if (cfg.gamma > 0)
    loss = tape.add(loss, tape.scale(tape.tv_beta(image, cfg.beta), cfg.gamma));
  return loss;
}

double inversion_objective_value(const Model& model, const Tensor& image,
                                 int target, const InversionConfig& cfg) {
  Tape tape;
  Var x = tape.constant(image);
  return inversion_objective(tape, model, x, target, cfg).value()[0];
}

InversionResult invert_category(const Model& model, int target,
                                const InversionConfig& cfg) {
  cfg.validate();
  if (target < 0 || static_cast<size_t>(target) >= model.cfg.num_classes)
    throw ConfigError("inversion target class out of range");

  Rng rng = Rng(cfg.seed).split(0x696e7672ULL);
  Tensor x = random_uniform(rng, {cfg.height, cfg.width, 3}, 0.4, 0.6);

  InversionResult result;
  double fx = inversion_objective_value(model, x, target, cfg);
  if (!std::isfinite(fx))
    throw NumericError("inversion objective non-finite at the initial image");
  result.trace.push_back({0, fx});

  double step = 1.0;
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var obj = inversion_objective(tape, model, xv, target, cfg);
    tape.backward(obj);
    const Tensor& g = xv.grad();

    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      Tensor cand = x;
      for (size_t i = 0; i < cand.size(); ++i)
        cand[i] = std::clamp(cand[i] - step * g[i], 0.0, 1.0);
      const double fc = inversion_objective_value(model, cand, target, cfg);
      if (!std::isfinite(fc))
        throw NumericError("inversion objective non-finite during line search");
      if (fc <= fx) {
        x = std::move(cand);
        fx = fc;
        accepted = true;
        step *= 2.0;  // optimistic growth, re-halved as needed
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    result.trace.push_back({iter, fx});
  }
  result.image = std::move(x);
  return result;
}

std::map<std::string, double> target_posteriors(const Model& model,
                                                const Tensor& image, int target,
                                                const std::vector<std::string>& layers) {
  auto descs = layer_bilinear_descriptors(model, image, layers);
  std::map<std::string, double> out;
  for (const std::string& tap : layers) {
    Tensor logits = head_logits(model.bank_head(tap), descs.at(tap));
    Tensor probs = ops::softmax(logits, 0);
    out[tap] = probs[static_cast<size_t>(target)];
  }
  return out;
}

}  // namespace bipool

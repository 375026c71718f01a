#include "bipool/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bipool/image.hpp"
#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

LoadedDataset augment_flip(const LoadedDataset& ds) {
  LoadedDataset out;
  out.num_classes = ds.num_classes;
  out.images.reserve(2 * ds.images.size());
  out.labels.reserve(2 * ds.labels.size());
  for (size_t i = 0; i < ds.images.size(); ++i) {
    out.images.push_back(ds.images[i]);
    out.labels.push_back(ds.labels[i]);
  }
  for (size_t i = 0; i < ds.images.size(); ++i) {
    out.images.push_back(hflip(ds.images[i]));
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

Tensor extract_descriptors(const Model& model, const LoadedDataset& ds) {
  if (ds.images.empty()) throw ConfigError("extract_descriptors: empty dataset");
  const size_t d = model.cfg.descriptor_dim();
  Tensor out({ds.images.size(), d});
  for (size_t i = 0; i < ds.images.size(); ++i) {
    Tensor desc = descriptor_forward(model, ds.images[i]);
    if (desc.size() != d) throw ShapeError("descriptor dim mismatch");
    std::copy(desc.data(), desc.data() + d, out.data() + i * d);
  }
  return out;
}

namespace {

struct Momentum {
  ParamMap velocity;

  void step(ParamMap& params, const ParamMap& grads, double lr, double m) {
    for (const auto& [name, g] : grads)
      ops::sgd_step(params.at(name), g, lr, m, velocity[name]);
  }
};

double head_accuracy(const SoftmaxHead& head, const Tensor& descs,
                     const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  size_t correct = 0;
  const size_t d = descs.dim(1);
  Tensor row({d});
  for (size_t i = 0; i < labels.size(); ++i) {
    std::copy(descs.data() + i * d, descs.data() + (i + 1) * d, row.data());
    Tensor logits = head_logits(head, row);
    size_t arg = 0;
    for (size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[arg]) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// SGD with momentum over cached descriptors; returns the final mean
/// epoch loss. Used for phase 1 and for bank heads.
double train_head_on_descriptors(Tensor& w, Tensor& b, const Tensor& descs,
                                 const std::vector<int>& labels,
                                 const TrainConfig& cfg, int epochs, Rng& rng,
                                 const Tensor* val_descs,
                                 const std::vector<int>* val_labels,
                                 std::vector<EpochLog>* log, std::ostream* log_out) {
  const size_t n = labels.size(), d = descs.dim(1);
  Momentum opt;
  double epoch_loss = 0.0;
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Tensor row({d});
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t at = 0;
    while (at < n) {
      const size_t bs = std::min(cfg.batch_size, n - at);
      Tape tape;
      Var wv = tape.leaf(w, true);
      Var bv = tape.leaf(b, true);
      Var batch_loss;
      for (size_t k = 0; k < bs; ++k) {
        const size_t idx = order[at + k];
        std::copy(descs.data() + idx * d, descs.data() + (idx + 1) * d, row.data());
        Var loss = softmax_loss(tape, tape.constant(row), wv, bv, labels[idx]);
        batch_loss = k == 0 ? loss : tape.add(batch_loss, loss);
      }
      batch_loss = tape.scale(batch_loss, 1.0 / static_cast<double>(bs));
      tape.backward(batch_loss);
      loss_sum += batch_loss.value()[0] * static_cast<double>(bs);
      ops::sgd_step(w, wv.grad(), cfg.lr_head, cfg.momentum, opt.velocity["w"]);
      ops::sgd_step(b, bv.grad(), cfg.lr_head, cfg.momentum, opt.velocity["b"]);
      at += bs;
    }
    epoch_loss = loss_sum / static_cast<double>(n);
    if (log || log_out) {
      double val_acc = 0.0;
      if (val_descs && val_labels && !val_labels->empty())
        val_acc = head_accuracy(SoftmaxHead{w, b}, *val_descs, *val_labels);
      if (log) log->push_back({epoch + 1, "head", epoch_loss, val_acc});
      if (log_out)
        *log_out << (epoch + 1) << "\thead\t" << epoch_loss << "\t" << val_acc << "\n";
    }
  }
  return epoch_loss;
}

bool param_is_trainable(const std::string& name, bool encoder_trainable) {
  if (name.rfind("bank/", 0) == 0) return false;
  if (!encoder_trainable &&
      (name.rfind("encoder/", 0) == 0 || name.rfind("proj/", 0) == 0))
    return false;
  if (name == "encoder/gamma") return false;  // untied: w,b carry the scale
  return true;
}

}  // namespace

TrainResult train_two_step(Model& model, const LoadedDataset& train,
                           const LoadedDataset& val, const TrainConfig& cfg,
                           std::ostream* log_out) {
  cfg.validate();
  if (train.images.empty()) throw ConfigError("train_two_step: empty training set");
  for (int label : train.labels)
    if (label < 0 || static_cast<size_t>(label) >= model.cfg.num_classes)
      throw ConfigError("train_two_step: label out of range");

  LoadedDataset augmented;
  const LoadedDataset* train_ptr = &train;
  if (cfg.flip_augment) {
    augmented = augment_flip(train);
    train_ptr = &augmented;
  }
  const LoadedDataset& tr = *train_ptr;

  TrainResult result;
  Rng rng = Rng(cfg.seed).split(0x74726e32ULL);

  // Phase 1: descriptors are fixed, so extract once and train the head.
  {
    Tensor descs = extract_descriptors(model, tr);
    Tensor val_descs;
    if (!val.images.empty()) val_descs = extract_descriptors(model, val);
    Tensor w = model.params.at("head/w");
    Tensor b = model.params.at("head/b");
    result.head_phase_loss = train_head_on_descriptors(
        w, b, descs, tr.labels, cfg, cfg.epochs_head, rng,
        val_descs.empty() ? nullptr : &val_descs,
        val.labels.empty() ? nullptr : &val.labels, &result.log, log_out);
    model.params["head/w"] = std::move(w);
    model.params["head/b"] = std::move(b);
    result.final_train_loss = result.head_phase_loss;
  }

  // Phase 2: unfreeze everything (minus frozen-encoder exclusions) at the
  // same small learning rate; stop when validation accuracy stalls.
  const bool enc_trainable = model.cfg.encoder_trainable;
  Momentum opt;
  std::vector<size_t> order(tr.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best_val = -1.0;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.epochs_finetune; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t at = 0;
    while (at < tr.size()) {
      const size_t bs = std::min(cfg.batch_size, tr.size() - at);
      ParamMap grad_sum;
      double batch_loss = 0.0;
      for (size_t k = 0; k < bs; ++k) {
        const size_t idx = order[at + k];
        Tape tape;
        auto pv = make_param_vars(tape, model.params, [&](const std::string& n) {
          return param_is_trainable(n, enc_trainable);
        });
        Var image = tape.constant(tr.images[idx]);
        Var loss = loss_graph(tape, model, pv, image, tr.labels[idx]);
        tape.backward(loss);
        batch_loss += loss.value()[0];
        for (const auto& [name, var] : pv) {
          if (!param_is_trainable(name, enc_trainable)) continue;
          auto it = grad_sum.find(name);
          if (it == grad_sum.end())
            grad_sum[name] = var.grad();
          else
            it->second = ops::add(it->second, var.grad());
        }
      }
      for (auto& [name, g] : grad_sum) g = ops::scale(g, 1.0 / static_cast<double>(bs));
      opt.step(model.params, grad_sum, cfg.lr, cfg.momentum);
      loss_sum += batch_loss;
      at += bs;
    }
    const double epoch_loss = loss_sum / static_cast<double>(tr.size());
    double val_acc = 0.0;
    if (!val.images.empty()) val_acc = dataset_accuracy(model, val);
    result.log.push_back({epoch + 1, "finetune", epoch_loss, val_acc});
    if (log_out)
      *log_out << (epoch + 1) << "\tfinetune\t" << epoch_loss << "\t" << val_acc << "\n";
    result.final_train_loss = epoch_loss;
    if (!val.images.empty()) {
      if (val_acc > best_val) {
        best_val = val_acc;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  return result;
}

void train_layer_banks(Model& model, const LoadedDataset& train,
                       const TrainConfig& cfg) {
  if (model.cfg.invert_layers.empty()) return;
  if (train.images.empty()) throw ConfigError("train_layer_banks: empty dataset");
  Rng rng = Rng(cfg.seed).split(0x62616e6bULL);
  // Per-tap descriptor caches, one backbone pass per image.
  std::map<std::string, Tensor> per_tap;
  const size_t n = train.images.size();
  for (size_t i = 0; i < n; ++i) {
    auto descs = layer_bilinear_descriptors(model, train.images[i],
                                            model.cfg.invert_layers);
    for (const auto& [tap, vec] : descs) {
      Tensor& table = per_tap[tap];
      if (table.empty()) table = Tensor({n, vec.size()});
      std::copy(vec.data(), vec.data() + vec.size(), table.data() + i * vec.size());
    }
  }
  for (const std::string& tap : model.cfg.invert_layers) {
    const Tensor& descs = per_tap.at(tap);
    Tensor w = Tensor::zeros({descs.dim(1), model.cfg.num_classes});
    Tensor b = Tensor::zeros({model.cfg.num_classes});
    train_head_on_descriptors(w, b, descs, train.labels, cfg, cfg.epochs_head, rng,
                              nullptr, nullptr, nullptr, nullptr);
    model.params["bank/" + tap + "/w"] = std::move(w);
    model.params["bank/" + tap + "/b"] = std::move(b);
  }
}

Tensor predict_flip_average(const Model& model, const Tensor& image) {
  Tensor a = class_scores(model, image);
  Tensor b = class_scores(model, hflip(image));
  return ops::scale(ops::add(a, b), 0.5);
}

double dataset_accuracy(const Model& model, const LoadedDataset& ds,
                        bool flip_average) {
  if (ds.images.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    Tensor scores = flip_average ? predict_flip_average(model, ds.images[i])
                                 : class_scores(model, ds.images[i]);
    size_t arg = 0;
    for (size_t j = 1; j < scores.size(); ++j)
      if (scores[j] > scores[arg]) arg = j;
    if (static_cast<int>(arg) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.images.size());
}

}  // namespace bipool

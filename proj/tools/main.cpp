// Command-line front end: dataset synthesis, training, evaluation,
// descriptor extraction, gradient checking, codebook initialization, and
// category inversion. Machine-parseable TSV goes to stdout, diagnostics to
// stderr. Exit codes: 0 success, 1 check failure, 2 config/contract error,
// 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bipool/codebook.hpp"
#include "bipool/gradcheck.hpp"
#include "bipool/heads.hpp"
#include "bipool/image.hpp"
#include "bipool/invert.hpp"
#include "bipool/io.hpp"
#include "bipool/model.hpp"
#include "bipool/ops.hpp"
#include "bipool/synth.hpp"
#include "bipool/train.hpp"

namespace {

using namespace bipool;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

void print_seed(uint64_t seed) { std::cout << "seed\t" << seed << "\n"; }

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  KvConfig kv = KvConfig::parse_file(spec_path);
  SyntheticTextureSpec spec = SyntheticTextureSpec::from_kv(kv);
  print_seed(spec.seed);
  synth_generate(spec, out_dir);
  std::cout << "generated\t" << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path) {
  RunConfig rc = RunConfig::from_kv(KvConfig::parse_file(config_path));
  print_seed(rc.model.seed);

  LoadedDataset train = load_dataset(data_dir, "train.txt");
  LoadedDataset val;
  if (std::filesystem::exists(std::filesystem::path(data_dir) / "val.txt"))
    val = load_dataset(data_dir, "val.txt", train.num_classes);
  if (train.images.empty()) throw ConfigError("training manifest is empty");
  rc.model.num_classes = train.num_classes;

  Model model = model_init(rc.model, train.images);
  TrainResult result = train_two_step(model, train, val, rc.train, &std::cout);
  if (!model.cfg.invert_layers.empty()) train_layer_banks(model, train, rc.train);
  model_save(model, out_path, rc.train);
  std::cout << "final_train_loss\t" << result.final_train_loss << "\n";
  std::cout << "checkpoint\t" << out_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, bool use_svm,
             bool flip_avg, long confusion_n) {
  TrainConfig train_cfg;
  Model model = model_load(ckpt_path, &train_cfg);
  print_seed(model.cfg.seed);
  LoadedDataset test = load_dataset(data_dir, "test.txt", model.cfg.num_classes);

  std::vector<int> predictions(test.size());
  if (use_svm) {
    // Train and validation descriptors are combined for the SVM stage.
    LoadedDataset train = load_dataset(data_dir, "train.txt", model.cfg.num_classes);
    if (std::filesystem::exists(std::filesystem::path(data_dir) / "val.txt")) {
      LoadedDataset val = load_dataset(data_dir, "val.txt", model.cfg.num_classes);
      for (size_t i = 0; i < val.size(); ++i) {
        train.images.push_back(std::move(val.images[i]));
        train.labels.push_back(val.labels[i]);
      }
    }
    if (train_cfg.flip_augment) train = augment_flip(train);
    Tensor train_descs = extract_descriptors(model, train);
    SvmTrainOptions opt;
    opt.c_svm = train_cfg.c_svm;
    opt.tol = train_cfg.svm_tol;
    OvaSvmResult ova = svm_train_ova(train_descs, train.labels,
                                     model.cfg.num_classes, opt);
    const size_t d = model.cfg.descriptor_dim();
    Tensor row({d});
    for (size_t cls = 0; cls < model.cfg.num_classes; ++cls) {
      if (!ova.ok(cls)) {
        std::cerr << "svm class " << cls << ": " << ova.errors[cls] << "\n";
        continue;
      }
      std::vector<double> pos, neg;
      for (size_t i = 0; i < train.size(); ++i) {
        std::copy(train_descs.data() + i * d, train_descs.data() + (i + 1) * d,
                  row.data());
        const double s = ova.classifiers[cls].score(row);
        (train.labels[i] == static_cast<int>(cls) ? pos : neg).push_back(s);
      }
      ova.classifiers[cls] = svm_calibrate(ova.classifiers[cls], pos, neg);
    }
    for (size_t i = 0; i < test.size(); ++i) {
      Tensor desc = descriptor_forward(model, test.images[i]);
      Tensor desc_flip;
      if (flip_avg) desc_flip = descriptor_forward(model, hflip(test.images[i]));
      double best = -1e300;
      int arg = 0;
      for (size_t cls = 0; cls < model.cfg.num_classes; ++cls) {
        if (!ova.ok(cls)) continue;
        double s = ova.classifiers[cls].score(desc);
        if (flip_avg) s = 0.5 * (s + ova.classifiers[cls].score(desc_flip));
        if (s > best) {
          best = s;
          arg = static_cast<int>(cls);
        }
      }
      predictions[i] = arg;
    }
  } else {
    for (size_t i = 0; i < test.size(); ++i) {
      Tensor scores = flip_avg ? predict_flip_average(model, test.images[i])
                               : class_scores(model, test.images[i]);
      size_t arg = 0;
      for (size_t j = 1; j < scores.size(); ++j)
        if (scores[j] > scores[arg]) arg = j;
      predictions[i] = static_cast<int>(arg);
    }
  }

  size_t correct = 0;
  for (size_t i = 0; i < test.size(); ++i)
    if (predictions[i] == test.labels[i]) ++correct;
  const double accuracy =
      test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
  std::cout << "accuracy\t" << accuracy << "\n";

  if (confusion_n > 0) {
    auto pairs = confusion_top_pairs(predictions, test.labels,
                                     static_cast<size_t>(confusion_n));
    for (const auto& [pair, count] : pairs)
      std::cout << "confusion\t" << pair.first << "\t" << pair.second << "\t"
                << count << "\n";
  }
  return kExitOk;
}

int cmd_extract(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out_path) {
  Model model = model_load(ckpt_path);
  print_seed(model.cfg.seed);
  Tensor image = ppm_load(image_path);
  Tensor desc = descriptor_forward(model, image);
  desc.set_dtype(model.cfg.dtype);
  tensor_save(desc, out_path);
  std::cout << "descriptor_dim\t" << desc.size() << "\n";
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed, bool inject_error) {
  print_seed(seed);
  GradSuiteOptions opt;
  opt.seed = seed;
  opt.inject_bilinear_sign_error = inject_error;
  bool all_pass = true;
  for (const GradCaseResult& r : run_gradcheck_suite(opt)) {
    std::printf("%s\t%.3e\t%s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "gradcheck\tpass" : "gradcheck\tFAIL") << "\n";
  return all_pass ? kExitOk : kExitCheckFailure;
}

int cmd_invert(const std::string& ckpt_path, int target, double gamma, double beta,
               int max_iters, uint64_t seed, const std::string& out_path,
               const std::string& trace_path) {
  Model model = model_load(ckpt_path);
  print_seed(seed);
  InversionConfig cfg;
  cfg.gamma = gamma;
  cfg.beta = beta;
  cfg.layers = model.cfg.invert_layers;
  cfg.max_iters = max_iters;
  cfg.seed = seed;
  if (cfg.layers.empty())
    throw ConfigError("checkpoint has no inversion bank; train with invert-layers");
  if (target < 0 || static_cast<size_t>(target) >= model.cfg.num_classes)
    throw ConfigError("class index out of range [0, " +
                      std::to_string(model.cfg.num_classes) + ")");

  InversionResult result = invert_category(model, target, cfg);
  ppm_save(result.image, out_path);

  std::ostream* trace = &std::cout;
  std::ofstream file;
  if (!trace_path.empty()) {
    file.open(trace_path);
    if (!file) throw IoError("cannot open trace file " + trace_path);
    trace = &file;
  }
  *trace << "# invert gamma=" << gamma << " beta=" << beta << " class=" << target
         << " layers=";
  for (size_t i = 0; i < cfg.layers.size(); ++i)
    *trace << (i ? "," : "") << cfg.layers[i];
  *trace << "\n";
  for (const InversionStep& step : result.trace)
    *trace << step.iter << "\t" << step.objective << "\n";
  return kExitOk;
}

int cmd_kmeans_init(const std::string& features_path, long k,
                    const std::string& out_path, uint64_t seed, int iters) {
  print_seed(seed);
  Tensor features = tensor_load(features_path);
  if (k < 1) throw ConfigError("k must be >= 1");
  Codebook cb = kmeans_init(features, static_cast<size_t>(k), seed, iters);
  std::map<std::string, Tensor> entries;
  entries["encoder/mu"] = cb.mu;
  entries["encoder/w"] = cb.w;
  entries["encoder/b"] = cb.b;
  entries["encoder/gamma"] = Tensor::scalar(cb.gamma);
  checkpoint_save(entries, out_path);
  std::cout << "codebook\t" << out_path << "\tk\t" << k << "\tgamma\t" << cb.gamma
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orderless pooling encoders: synthesis, training, inversion"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "generate the synthetic texture benchmark");
  synth->add_option("--spec", spec_path, "generator spec (key=value)")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  std::string config_path, data_dir, ckpt_path;
  auto* train = app.add_subcommand("train", "two-step training from a config");
  train->add_option("--config", config_path, "run config (key=value)")->required();
  train->add_option("--data", data_dir, "dataset directory with manifests")->required();
  train->add_option("--out", ckpt_path, "output checkpoint")->required();

  std::string eval_ckpt, eval_data;
  bool eval_svm = false, eval_flip = false;
  long confusion_n = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_flag("--svm", eval_svm, "one-vs-all calibrated SVMs over descriptors");
  eval->add_flag("--flip-avg", eval_flip, "average predictions with the mirror image");
  eval->add_option("--confusion", confusion_n, "print top-N confused class pairs");

  std::string ex_ckpt, ex_image, ex_out;
  auto* extract = app.add_subcommand("extract", "write one image descriptor");
  extract->add_option("--ckpt", ex_ckpt, "checkpoint")->required();
  extract->add_option("--image", ex_image, "input PPM")->required();
  extract->add_option("--out", ex_out, "output tensor file")->required();

  uint64_t gc_seed = 1;
  bool gc_inject = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck
      ->add_flag("--inject-bilinear-grad-error", gc_inject,
                 "fixture: flip the pooled outer-product backward sign")
      ->group("");  // hidden

  std::string inv_ckpt, inv_out, inv_trace;
  int inv_class = 0, inv_iters = 300;
  double inv_gamma = 1e-8, inv_beta = 2.0;
  uint64_t inv_seed = 1;
  auto* invert = app.add_subcommand("invert", "synthesize a category pre-image");
  invert->add_option("--ckpt", inv_ckpt, "checkpoint with bank classifiers")->required();
  invert->add_option("--class", inv_class, "target class index")->required();
  invert->add_option("--gamma", inv_gamma, "prior weight");
  invert->add_option("--beta", inv_beta, "prior exponent");
  invert->add_option("--max-iters", inv_iters, "iteration cap");
  invert->add_option("--seed", inv_seed, "init seed");
  invert->add_option("--out", inv_out, "output pre-image PPM")->required();
  invert->add_option("--trace", inv_trace, "objective trace file (default stdout)");

  std::string km_features, km_out;
  long km_k = 0;
  uint64_t km_seed = 1;
  int km_iters = 25;
  auto* kmeans = app.add_subcommand("kmeans-init", "codebook from feature vectors");
  kmeans->add_option("--features", km_features, "n x d tensor file")->required();
  kmeans->add_option("--k", km_k, "component count")->required();
  kmeans->add_option("--out", km_out, "output codebook checkpoint")->required();
  kmeans->add_option("--seed", km_seed, "seeding");
  kmeans->add_option("--iters", km_iters, "Lloyd iterations");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (train->parsed()) return cmd_train(config_path, data_dir, ckpt_path);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_svm, eval_flip, confusion_n);
    if (extract->parsed()) return cmd_extract(ex_ckpt, ex_image, ex_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_inject);
    if (invert->parsed())
      return cmd_invert(inv_ckpt, inv_class, inv_gamma, inv_beta, inv_iters, inv_seed,
                        inv_out, inv_trace);
    if (kmeans->parsed())
      return cmd_kmeans_init(km_features, km_k, km_out, km_seed, km_iters);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitCheckFailure;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitConfig;
}

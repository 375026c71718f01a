#include "bipool/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bipool/image.hpp"
#include "bipool/io.hpp"
#include "bipool/ops.hpp"
#include "bipool/rng.hpp"

namespace bipool {

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "bilinear") return EncoderKind::Bilinear;
  if (name == "netvlad") return EncoderKind::NetVlad;
  if (name == "netfv") return EncoderKind::NetFv;
  if (name == "netbovw") return EncoderKind::NetBovw;
  if (name == "fc-baseline") return EncoderKind::FcBaseline;
  throw ConfigError("unknown encoder '" + name +
                    "' (expected bilinear|netvlad|netfv|netbovw|fc-baseline)");
}

std::string encoder_kind_to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Bilinear: return "bilinear";
    case EncoderKind::NetVlad: return "netvlad";
    case EncoderKind::NetFv: return "netfv";
    case EncoderKind::NetBovw: return "netbovw";
    case EncoderKind::FcBaseline: return "fc-baseline";
  }
  throw ConfigError("bad encoder kind");
}

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (lr_head <= 0) throw ConfigError("lr-head must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
  if (epochs_head < 0 || epochs_finetune < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("batch-size must be positive");
  if (c_svm <= 0) throw ConfigError("c-svm must be positive");
  if (patience <= 0) throw ConfigError("patience must be positive");
}

void ModelConfig::validate() const {
  backbone.validate();
  backbone.stage_of_tap(tap);
  const bool codebook = encoder == EncoderKind::NetVlad ||
                        encoder == EncoderKind::NetFv ||
                        encoder == EncoderKind::NetBovw;
  if (codebook) {
    if (codebook_k == 0) throw ConfigError("encoder k must be positive");
    if (codebook_k > 4096) throw ConfigError("encoder k capped at 4096");
  }
  if (projection_rank > 0) {
    if (encoder != EncoderKind::Bilinear)
      throw ConfigError("projection-rank applies to the bilinear encoder only");
    if (projection_rank > feature_dim())
      throw ConfigError("projection-rank exceeds tap channels");
    if (projection_init != "pca" && projection_init != "random")
      throw ConfigError("projection-init must be pca or random");
  }
  if (scales.empty()) throw ConfigError("scales must be nonempty");
  for (double s : scales)
    if (!(s > 0)) throw ConfigError("scales must be positive");
  for (const auto& t : invert_layers) backbone.stage_of_tap(t);
}

size_t ModelConfig::descriptor_dim() const {
  switch (encoder) {
    case EncoderKind::Bilinear: return stream_a_dim() * feature_dim();
    case EncoderKind::NetVlad: return codebook_k * feature_dim();
    case EncoderKind::NetFv: return 2 * codebook_k * feature_dim();
    case EncoderKind::NetBovw: return codebook_k;
    case EncoderKind::FcBaseline: return feature_dim();
  }
  throw ConfigError("bad encoder kind");
}

namespace {

const std::set<std::string>& allowed_run_keys() {
  static const std::set<std::string> keys = {
      "seed",          "dtype",          "encoder",        "tap",
      "k",             "gamma-init",     "projection-rank", "projection-init",
      "encoder-trainable", "scales",     "multiscale-merge", "invert-layers",
      "backbone-channels", "backbone-pools", "num-classes", "init-checkpoint",
      "lr",            "lr-head",        "momentum",       "epochs-head",    "epochs-finetune",
      "batch-size",    "c-svm",          "flip-augment",   "patience",
      "svm-tol"};
  return keys;
}

}  // namespace

RunConfig RunConfig::from_kv(const KvConfig& kv) {
  kv.reject_unknown(allowed_run_keys());
  RunConfig rc;

  const auto channels = kv.get_double_list("backbone-channels", {16, 32, 64, 64});
  const auto pools = kv.get_double_list("backbone-pools", {1, 1, 1, 0});
  if (channels.size() != pools.size())
    throw ConfigError("backbone-channels and backbone-pools must have equal length");
  rc.model.backbone.stages.clear();
  rc.model.backbone.taps.clear();
  for (size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1 || channels[i] != std::floor(channels[i]))
      throw ConfigError("backbone-channels entries must be positive integers");
    rc.model.backbone.stages.push_back(
        {static_cast<size_t>(channels[i]), pools[i] != 0.0});
    rc.model.backbone.taps.push_back("t" + std::to_string(i + 1));
  }

  rc.model.encoder = encoder_kind_from_string(kv.get_string("encoder", "bilinear"));
  rc.model.tap = kv.get_string("tap", "t" + std::to_string(channels.size()));
  const long default_k = rc.model.encoder == EncoderKind::NetBovw ? 256 : 64;
  const long k = kv.get_int("k", default_k);
  if (k < 0) throw ConfigError("k must be nonnegative");
  rc.model.codebook_k = static_cast<size_t>(k);
  rc.model.gamma_init = kv.get_double("gamma-init", 0.0);
  const long rank = kv.get_int("projection-rank", 0);
  if (rank < 0) throw ConfigError("projection-rank must be nonnegative");
  rc.model.projection_rank = static_cast<size_t>(rank);
  rc.model.projection_init = kv.get_string("projection-init", "pca");
  rc.model.encoder_trainable = kv.get_bool("encoder-trainable", true);
  rc.model.scales = kv.get_double_list("scales", {1.0});
  const std::string ms = kv.get_string("multiscale-merge", "merge");
  if (ms != "merge" && ms != "average")
    throw ConfigError("multiscale-merge must be merge or average");
  rc.model.multiscale_merge = ms == "merge";
  rc.model.invert_layers = kv.get_string_list("invert-layers");
  rc.model.init_checkpoint = kv.get_string("init-checkpoint", "");
  const long nc = kv.get_int("num-classes", 0);
  if (nc < 0) throw ConfigError("num-classes must be nonnegative");
  rc.model.num_classes = static_cast<size_t>(nc);
  const std::string dtype = kv.get_string("dtype", "f64");
  if (dtype == "f32") rc.model.dtype = Dtype::F32;
  else if (dtype == "f64") rc.model.dtype = Dtype::F64;
  else throw ConfigError("dtype must be f32 or f64");
  const long seed = kv.get_int("seed", 1);
  if (seed < 0) throw ConfigError("seed must be nonnegative");
  rc.model.seed = static_cast<uint64_t>(seed);

  rc.train.lr = kv.get_double("lr", 0.001);
  rc.train.lr_head = kv.get_double("lr-head", 0.1);
  rc.train.momentum = kv.get_double("momentum", 0.9);
  rc.train.epochs_head = static_cast<int>(kv.get_int("epochs-head", 40));
  rc.train.epochs_finetune = static_cast<int>(kv.get_int("epochs-finetune", 10));
  const long bs = kv.get_int("batch-size", 8);
  if (bs < 1) throw ConfigError("batch-size must be positive");
  rc.train.batch_size = static_cast<size_t>(bs);
  rc.train.c_svm = kv.get_double("c-svm", 1.0);
  rc.train.flip_augment = kv.get_bool("flip-augment", false);
  rc.train.patience = static_cast<int>(kv.get_int("patience", 5));
  rc.train.svm_tol = kv.get_double("svm-tol", 1e-6);
  rc.train.seed = rc.model.seed;

  rc.model.validate();
  rc.train.validate();
  return rc;
}

KvConfig RunConfig::to_kv() const {
  KvConfig kv;
  std::ostringstream ch, pl;
  for (size_t i = 0; i < model.backbone.stages.size(); ++i) {
    if (i) {
      ch << ",";
      pl << ",";
    }
    ch << model.backbone.stages[i].out_channels;
    pl << (model.backbone.stages[i].pool_after ? 1 : 0);
  }
  kv.set("backbone-channels", ch.str());
  kv.set("backbone-pools", pl.str());
  kv.set("encoder", encoder_kind_to_string(model.encoder));
  kv.set("tap", model.tap);
  kv.set("k", std::to_string(model.codebook_k));
  {
    std::ostringstream os;
    os << model.gamma_init;
    kv.set("gamma-init", os.str());
  }
  kv.set("projection-rank", std::to_string(model.projection_rank));
  kv.set("projection-init", model.projection_init);
  kv.set("encoder-trainable", model.encoder_trainable ? "true" : "false");
  {
    std::ostringstream os;
    for (size_t i = 0; i < model.scales.size(); ++i) {
      if (i) os << ",";
      os << model.scales[i];
    }
    kv.set("scales", os.str());
  }
  kv.set("multiscale-merge", model.multiscale_merge ? "merge" : "average");
  {
    std::ostringstream os;
    for (size_t i = 0; i < model.invert_layers.size(); ++i) {
      if (i) os << ",";
      os << model.invert_layers[i];
    }
    if (!model.invert_layers.empty()) kv.set("invert-layers", os.str());
  }
  if (!model.init_checkpoint.empty()) kv.set("init-checkpoint", model.init_checkpoint);
  kv.set("num-classes", std::to_string(model.num_classes));
  kv.set("dtype", model.dtype == Dtype::F32 ? "f32" : "f64");
  kv.set("seed", std::to_string(model.seed));
  {
    std::ostringstream os;
    os << train.lr;
    kv.set("lr", os.str());
    std::ostringstream oh;
    oh << train.lr_head;
    kv.set("lr-head", oh.str());
    std::ostringstream om;
    om << train.momentum;
    kv.set("momentum", om.str());
  }
  kv.set("epochs-head", std::to_string(train.epochs_head));
  kv.set("epochs-finetune", std::to_string(train.epochs_finetune));
  kv.set("batch-size", std::to_string(train.batch_size));
  {
    std::ostringstream os;
    os << train.c_svm;
    kv.set("c-svm", os.str());
    std::ostringstream ot;
    ot << train.svm_tol;
    kv.set("svm-tol", ot.str());
  }
  kv.set("flip-augment", train.flip_augment ? "true" : "false");
  kv.set("patience", std::to_string(train.patience));
  return kv;
}

LoadedDataset load_dataset(const std::filesystem::path& dir,
                           const std::string& manifest_name,
                           size_t expected_classes) {
  Manifest manifest = manifest_load(dir / manifest_name, expected_classes);
  LoadedDataset ds;
  ds.num_classes = manifest.num_classes;
  ds.images.reserve(manifest.samples.size());
  ds.labels.reserve(manifest.samples.size());
  for (const Sample& s : manifest.samples) {
    ds.images.push_back(ppm_load(dir / s.path));
    ds.labels.push_back(s.label);
  }
  return ds;
}

bool Model::uses_codebook() const {
  return cfg.encoder == EncoderKind::NetVlad || cfg.encoder == EncoderKind::NetFv ||
         cfg.encoder == EncoderKind::NetBovw;
}

Codebook Model::codebook() const {
  Codebook cb;
  cb.k = cfg.codebook_k;
  cb.d = cfg.feature_dim();
  cb.mu = params.at("encoder/mu");
  cb.w = params.at("encoder/w");
  cb.b = params.at("encoder/b");
  cb.gamma = params.at("encoder/gamma")[0];
  cb.tied = false;
  return cb;
}

SoftmaxHead Model::head() const {
  return SoftmaxHead{params.at("head/w"), params.at("head/b")};
}

SoftmaxHead Model::bank_head(const std::string& tap) const {
  return SoftmaxHead{params.at("bank/" + tap + "/w"), params.at("bank/" + tap + "/b")};
}

namespace {

/// Location-feature sample for k-means / PCA initialization: rows gathered
/// from a few images, subsampled to a bounded count.
Tensor gather_feature_rows(const ModelConfig& cfg, const ParamMap& params,
                           const std::vector<Tensor>& images, size_t max_rows,
                           uint64_t seed) {
  std::vector<const Tensor*> sources;
  std::vector<Tensor> maps;
  const size_t use = std::min<size_t>(images.size(), 32);
  size_t total = 0, channels = 0;
  for (size_t i = 0; i < use; ++i) {
    auto taps = backbone_forward(cfg.backbone, params, images[i]);
    Tensor rows = flatten_locations(taps.at(cfg.tap)).rows;
    total += rows.dim(0);
    channels = rows.dim(1);
    maps.push_back(std::move(rows));
  }
  (void)sources;
  Tensor all({std::max<size_t>(total, 1), channels});
  size_t at = 0;
  for (const Tensor& rows : maps) {
    std::copy(rows.data(), rows.data() + rows.size(), all.data() + at * channels);
    at += rows.dim(0);
  }
  if (total <= max_rows) return all;
  Rng rng = Rng(seed).split(0x73616d70ULL);
  std::vector<size_t> idx(total);
  for (size_t i = 0; i < total; ++i) idx[i] = i;
  rng.shuffle(idx);
  Tensor out({max_rows, channels});
  std::sort(idx.begin(), idx.begin() + static_cast<long>(max_rows));
  for (size_t i = 0; i < max_rows; ++i)
    std::copy(all.data() + idx[i] * channels, all.data() + (idx[i] + 1) * channels,
              out.data() + i * channels);
  return out;
}

}  // namespace

Model model_init(const ModelConfig& cfg, const std::vector<Tensor>& init_images) {
  cfg.validate();
  if (cfg.num_classes == 0) throw ConfigError("model_init: num_classes must be set");
  Model m;
  m.cfg = cfg;
  m.params = backbone_init(cfg.backbone, cfg.seed);
  if (!cfg.init_checkpoint.empty()) {
    Model donor = model_load(cfg.init_checkpoint);
    for (auto& [name, tensor] : m.params) {
      auto it = donor.params.find(name);
      if (it == donor.params.end())
        throw ConfigError("init-checkpoint is missing parameter " + name);
      if (!it->second.same_dims(tensor))
        throw ConfigError("init-checkpoint parameter " + name +
                          " has mismatched shape " + it->second.shape_str());
      tensor = it->second;
    }
  }

  const bool needs_features = (cfg.encoder != EncoderKind::FcBaseline &&
                               cfg.encoder != EncoderKind::Bilinear) ||
                              (cfg.projection_rank > 0 && cfg.projection_init == "pca");
  Tensor rows;
  if (needs_features) {
    if (init_images.empty())
      throw ConfigError("model_init: initialization images required for this encoder");
    rows = gather_feature_rows(cfg, m.params, init_images, 8192, cfg.seed);
  }

  if (m.uses_codebook()) {
    if (rows.dim(0) < cfg.codebook_k)
      throw ConfigError("model_init: feature sample smaller than k");
    Codebook cb = kmeans_init(rows, cfg.codebook_k, cfg.seed, 25);
    if (cfg.gamma_init > 0) {
      cb.gamma = cfg.gamma_init;
      cb.sync_derived();
    }
    m.params["encoder/mu"] = cb.mu;
    m.params["encoder/w"] = cb.w;
    m.params["encoder/b"] = cb.b;
    m.params["encoder/gamma"] = Tensor::scalar(cb.gamma);
  }

  if (cfg.projection_rank > 0) {
    ProjectionMatrix pm = cfg.projection_init == "pca"
                              ? pca_projection(rows, cfg.projection_rank)
                              : random_projection(cfg.feature_dim(),
                                                  cfg.projection_rank, cfg.seed);
    m.params["proj/p"] = pm.p;
  }

  m.params["head/w"] = Tensor::zeros({cfg.descriptor_dim(), cfg.num_classes});
  m.params["head/b"] = Tensor::zeros({cfg.num_classes});
  return m;
}

namespace {

struct ScaleAccumulator {
  Tensor pooled_sum;          // merge mode: unnormalized pooled sum
  Tensor normalized_sum;      // average mode: sum of normalized descriptors
  size_t scales_used = 0;
  size_t locations = 0;       // fc baseline: merged location count
};

Tensor encode_unnormalized(const Model& model, const LocationFeatures& lf) {
  switch (model.cfg.encoder) {
    case EncoderKind::Bilinear: {
      if (model.cfg.projection_rank > 0) {
        ProjectionMatrix pm;
        pm.in_dim = model.cfg.feature_dim();
        pm.out_dim = model.cfg.projection_rank;
        pm.p = model.params.at("proj/p");
        LocationFeatures a = LocationFeatures::wrap(project_one_feature(lf, pm));
        return bilinear_pool(a, lf).flattened();
      }
      return bilinear_pool(lf, lf).flattened();
    }
    case EncoderKind::NetVlad: return netvlad_encode(lf, model.codebook()).flattened();
    case EncoderKind::NetFv: return netfv_encode(lf, model.codebook()).flattened();
    case EncoderKind::NetBovw: return netbovw_encode(lf, model.codebook());
    case EncoderKind::FcBaseline:
      return ops::reduce(lf.rows, {0}, ops::Reduce::Sum);  // divided by L later
  }
  throw ConfigError("bad encoder kind");
}

}  // namespace

Tensor descriptor_forward(const Model& model, const Tensor& image) {
  const ModelConfig& cfg = model.cfg;
  const size_t floor_extent =
      std::max(cfg.backbone.tap_receptive_field(cfg.tap), cfg.backbone.min_input_extent());

  ScaleAccumulator acc;
  for (double s : cfg.scales) {
    const size_t h = static_cast<size_t>(std::lround(static_cast<double>(image.dim(0)) * s));
    const size_t w = static_cast<size_t>(std::lround(static_cast<double>(image.dim(1)) * s));
    if (h < floor_extent || w < floor_extent) continue;  // below receptive-field floor
    if (h * w > 1024ull * 1024ull) continue;             // pixel cap
    const Tensor scaled = (h == image.dim(0) && w == image.dim(1))
                              ? image
                              : resize_bilinear(image, h, w);
    auto taps = backbone_forward(cfg.backbone, model.params, scaled);
    LocationFeatures lf = flatten_locations(taps.at(cfg.tap));
    Tensor pooled = encode_unnormalized(model, lf);
    acc.locations += lf.count();
    acc.scales_used++;
    if (cfg.multiscale_merge) {
      acc.pooled_sum = acc.pooled_sum.empty() ? pooled : ops::add(acc.pooled_sum, pooled);
    } else {
      Tensor per_scale = cfg.encoder == EncoderKind::FcBaseline
                             ? ops::scale(pooled, 1.0 / static_cast<double>(lf.count()))
                             : pooled;
      Tensor norm = normalize_descriptor(per_scale);
      acc.normalized_sum =
          acc.normalized_sum.empty() ? norm : ops::add(acc.normalized_sum, norm);
    }
  }
  if (acc.scales_used == 0)
    throw ConfigError("no admissible scale for image " + image.shape_str());

  if (cfg.multiscale_merge) {
    Tensor pooled = cfg.encoder == EncoderKind::FcBaseline
                        ? ops::scale(acc.pooled_sum,
                                     1.0 / static_cast<double>(acc.locations))
                        : acc.pooled_sum;
    return normalize_descriptor(pooled);
  }
  return ops::l2_normalize(
      ops::scale(acc.normalized_sum, 1.0 / static_cast<double>(acc.scales_used)));
}

Tensor class_scores(const Model& model, const Tensor& image) {
  return head_logits(model.head(), descriptor_forward(model, image));
}

std::map<std::string, Tensor> layer_bilinear_descriptors(
    const Model& model, const Tensor& image, const std::vector<std::string>& taps) {
  auto maps = backbone_forward(model.cfg.backbone, model.params, image);
  std::map<std::string, Tensor> out;
  for (const std::string& tap : taps) {
    LocationFeatures lf = flatten_locations(maps.at(tap));
    Tensor pooled = ops::scale(bilinear_pool(lf, lf).flattened(),
                               1.0 / static_cast<double>(lf.count()));
    out[tap] = normalize_descriptor(pooled);
  }
  return out;
}

std::map<std::string, Var> make_param_vars(
    Tape& tape, const ParamMap& params,
    const std::function<bool(const std::string&)>& trainable) {
  std::map<std::string, Var> pv;
  for (const auto& [name, tensor] : params)
    pv[name] = tape.leaf(tensor, trainable ? trainable(name) : true);
  return pv;
}

Var descriptor_graph(Tape& tape, const Model& model,
                     const std::map<std::string, Var>& pv, Var image) {
  const ModelConfig& cfg = model.cfg;
  auto taps = backbone_graph(tape, cfg.backbone, pv, image);
  Var fm = taps.at(cfg.tap);
  const size_t h = fm.value().dim(0), w = fm.value().dim(1), c = fm.value().dim(2);
  Var rows = tape.reshape(fm, {h * w, c});

  Var pooled;
  switch (cfg.encoder) {
    case EncoderKind::Bilinear: {
      if (cfg.projection_rank > 0) {
        Var a = tape.matmul(rows, pv.at("proj/p"), false);
        pooled = tape.matmul(a, rows, true);
      } else {
        pooled = tape.matmul(rows, rows, true);
      }
      pooled = tape.reshape(pooled, {pooled.value().size()});
      break;
    }
    case EncoderKind::NetVlad:
      pooled = encode_netvlad_graph(tape, rows, pv.at("encoder/w"),
                                    pv.at("encoder/b"), pv.at("encoder/mu"));
      pooled = tape.reshape(pooled, {pooled.value().size()});
      break;
    case EncoderKind::NetFv:
      pooled = encode_netfv_graph(tape, rows, pv.at("encoder/w"), pv.at("encoder/b"),
                                  pv.at("encoder/mu"));
      pooled = tape.reshape(pooled, {pooled.value().size()});
      break;
    case EncoderKind::NetBovw:
      pooled = encode_netbovw_graph(tape, rows, pv.at("encoder/w"), pv.at("encoder/b"));
      break;
    case EncoderKind::FcBaseline:
      pooled = tape.reduce_mean(rows, {0});
      break;
  }
  return tape.l2_normalize(tape.signed_sqrt(pooled));
}

Var loss_graph(Tape& tape, const Model& model,
               const std::map<std::string, Var>& pv, Var image, int label) {
  Var desc = descriptor_graph(tape, model, pv, image);
  return softmax_loss(tape, desc, pv.at("head/w"), pv.at("head/b"), label);
}

void model_save(const Model& model, const std::filesystem::path& path,
                const TrainConfig& train_cfg) {
  ParamMap entries = model.params;
  const std::string text = RunConfig{model.cfg, train_cfg}.to_kv().to_text();
  Tensor blob({std::max<size_t>(text.size(), 1)});
  for (size_t i = 0; i < text.size(); ++i)
    blob[i] = static_cast<double>(static_cast<unsigned char>(text[i]));
  entries["meta/config"] = blob;
  if (model.cfg.dtype == Dtype::F32)
    for (auto& [name, tensor] : entries)
      if (name != "meta/config") tensor.set_dtype(Dtype::F32);
  checkpoint_save(entries, path);
}

Model model_load(const std::filesystem::path& path, TrainConfig* train_out) {
  ParamMap entries = checkpoint_load(path);
  auto it = entries.find("meta/config");
  if (it == entries.end())
    throw FormatError("checkpoint missing meta/config entry: " + path.string());
  std::string text(it->second.size(), '\0');
  for (size_t i = 0; i < text.size(); ++i)
    text[i] = static_cast<char>(static_cast<unsigned char>(it->second[i]));
  entries.erase(it);
  RunConfig rc = RunConfig::from_kv(KvConfig::parse(text, path.string() + "#meta/config"));
  if (train_out) *train_out = rc.train;
  Model m;
  m.cfg = rc.model;
  m.params = std::move(entries);
  return m;
}

}  // namespace bipool

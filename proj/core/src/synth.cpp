#include "bipool/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "bipool/io.hpp"
#include "bipool/rng.hpp"

namespace bipool {

namespace {

constexpr double kPi = 3.14159265358979323846;

GratingComponent grating(double orientation, double frequency) {
  GratingComponent g;
  g.orientation_deg = orientation;
  g.frequency = frequency;
  return g;
}

DotComponent dot(double count, double radius) {
  DotComponent d;
  d.count = count;
  d.radius = radius;
  return d;
}

/// Plaid of two gratings at a fixed relative angle, base orientation
/// uniform per image.
TextureClassSpec relative_angle_class(double delta_deg, double frequency) {
  TextureClassSpec cls;
  TextureVariant variant;
  variant.gratings.push_back(grating(0.0, frequency));
  variant.gratings.push_back(grating(delta_deg, frequency));
  cls.variants.push_back(std::move(variant));
  cls.base_orientation_range_deg = 180.0;
  return cls;
}

TextureClassSpec dot_class(double count, double radius) {
  TextureClassSpec cls;
  TextureVariant variant;
  variant.dots.push_back(dot(count, radius));
  cls.variants.push_back(std::move(variant));
  return cls;
}

}  // namespace

SyntheticTextureSpec SyntheticTextureSpec::desk_default(uint64_t seed) {
  SyntheticTextureSpec spec;
  spec.seed = seed;
  spec.classes.clear();
  for (double delta : {25.0, 50.0, 75.0, 100.0, 125.0, 150.0})
    spec.classes.push_back(relative_angle_class(delta, 7.0));
  spec.classes.push_back(dot_class(100.0, 1.5));  // coverage-matched pair
  spec.classes.push_back(dot_class(25.0, 3.0));
  spec.num_classes = spec.classes.size();
  return spec;
}

SyntheticTextureSpec SyntheticTextureSpec::pretext_default(uint64_t seed) {
  SyntheticTextureSpec spec;
  spec.seed = seed;
  spec.classes.clear();
  for (double orientation : {0.0, 30.0, 60.0, 90.0, 120.0, 150.0}) {
    TextureClassSpec cls;
    for (double freq : {5.0, 10.0}) {
      TextureVariant variant;
      variant.gratings.push_back(grating(orientation, freq));
      cls.variants.push_back(std::move(variant));
    }
    spec.classes.push_back(std::move(cls));
  }
  spec.classes.push_back(dot_class(100.0, 1.5));
  spec.classes.push_back(dot_class(25.0, 3.0));
  spec.num_classes = spec.classes.size();
  return spec;
}

void SyntheticTextureSpec::validate() const {
  if (num_classes == 0) throw ConfigError("synth: classes must be >= 1");
  if (image_size < 8) throw ConfigError("synth: image-size must be >= 8");
  if (train_per_class == 0 || test_per_class == 0)
    throw ConfigError("synth: train/test per-class counts must be >= 1");
  if (noise_level < 0) throw ConfigError("synth: noise must be >= 0");
  if (brightness_jitter < 0) throw ConfigError("synth: brightness-jitter must be >= 0");
  if (classes.size() != num_classes)
    throw ConfigError("synth: class spec count does not match classes");
  for (const TextureClassSpec& c : classes)
    if (c.variants.empty()) throw ConfigError("synth: every class needs a variant");
}

SyntheticTextureSpec SyntheticTextureSpec::from_kv(const KvConfig& kv) {
  const std::string preset = kv.get_string("preset", "benchmark");
  if (preset != "benchmark" && preset != "pretext")
    throw ConfigError("synth: preset must be benchmark or pretext");
  SyntheticTextureSpec def = preset == "pretext" ? pretext_default() : desk_default();

  const long k = kv.get_int("classes", static_cast<long>(def.num_classes));
  if (k < 1) throw ConfigError("synth: classes must be >= 1");
  SyntheticTextureSpec spec;
  spec.num_classes = static_cast<size_t>(k);
  const long size = kv.get_int("image-size", 64);
  if (size < 8) throw ConfigError("synth: image-size must be >= 8");
  spec.image_size = static_cast<size_t>(size);
  spec.train_per_class = static_cast<size_t>(kv.get_int("train-per-class", 100));
  spec.val_per_class = static_cast<size_t>(kv.get_int("val-per-class", 20));
  spec.test_per_class = static_cast<size_t>(kv.get_int("test-per-class", 50));
  spec.noise_level = kv.get_double("noise", 0.06);
  spec.brightness_jitter = kv.get_double("brightness-jitter", 0.03);
  const long seed = kv.get_int("seed", 1);
  if (seed < 0) throw ConfigError("synth: seed must be nonnegative");
  spec.seed = static_cast<uint64_t>(seed);

  std::set<std::string> allowed = {"preset",        "classes",       "image-size",
                                   "train-per-class", "val-per-class",
                                   "test-per-class", "noise",
                                   "brightness-jitter", "seed"};
  spec.classes.resize(spec.num_classes);
  for (size_t i = 0; i < spec.num_classes; ++i) {
    const std::string cp = "class" + std::to_string(i) + ".";
    // Default layout cycles through the stock eight classes.
    TextureClassSpec cls = def.classes[i % def.classes.size()];
    const long variants = kv.get_int(cp + "variants", static_cast<long>(cls.variants.size()));
    allowed.insert(cp + "variants");
    cls.base_orientation_range_deg =
        kv.get_double(cp + "base-orientation-range", cls.base_orientation_range_deg);
    allowed.insert(cp + "base-orientation-range");
    if (variants < 1) throw ConfigError("synth: " + cp + "variants must be >= 1");
    cls.variants.resize(static_cast<size_t>(variants));
    for (size_t v = 0; v < cls.variants.size(); ++v) {
      const std::string vp = cp + "v" + std::to_string(v) + ".";
      TextureVariant& var = cls.variants[v];
      const long gratings = kv.get_int(vp + "gratings", static_cast<long>(var.gratings.size()));
      const long dots = kv.get_int(vp + "dots", static_cast<long>(var.dots.size()));
      allowed.insert(vp + "gratings");
      allowed.insert(vp + "dots");
      if (gratings < 0 || dots < 0)
        throw ConfigError("synth: component counts must be >= 0");
      var.gratings.resize(static_cast<size_t>(gratings));
      var.dots.resize(static_cast<size_t>(dots));
      for (size_t g = 0; g < var.gratings.size(); ++g) {
        const std::string gp = vp + "g" + std::to_string(g) + ".";
        GratingComponent& gc = var.gratings[g];
        gc.amp = kv.get_double(gp + "amp", gc.amp);
        gc.orientation_deg = kv.get_double(gp + "orientation", gc.orientation_deg);
        gc.orientation_jitter_deg =
            kv.get_double(gp + "orientation-jitter", gc.orientation_jitter_deg);
        gc.frequency = kv.get_double(gp + "frequency", gc.frequency);
        gc.frequency_jitter = kv.get_double(gp + "frequency-jitter", gc.frequency_jitter);
        for (const char* key :
             {"amp", "orientation", "orientation-jitter", "frequency", "frequency-jitter"})
          allowed.insert(gp + key);
      }
      for (size_t d = 0; d < var.dots.size(); ++d) {
        const std::string dp = vp + "d" + std::to_string(d) + ".";
        DotComponent& dc = var.dots[d];
        dc.count = kv.get_double(dp + "count", dc.count);
        dc.radius = kv.get_double(dp + "radius", dc.radius);
        dc.radius_jitter = kv.get_double(dp + "radius-jitter", dc.radius_jitter);
        dc.amp = kv.get_double(dp + "amp", dc.amp);
        for (const char* key : {"count", "radius", "radius-jitter", "amp"})
          allowed.insert(dp + key);
      }
    }
    spec.classes[i] = std::move(cls);
  }
  kv.reject_unknown(allowed);
  spec.validate();
  return spec;
}

Tensor synth_image(const SyntheticTextureSpec& spec, size_t cls, uint64_t stream) {
  if (cls >= spec.num_classes) throw ConfigError("synth_image: class out of range");
  const TextureClassSpec& c = spec.classes[cls];
  const size_t n = spec.image_size;
  Rng rng = Rng(spec.seed).split(cls + 1).split(stream);

  const TextureVariant& variant =
      c.variants[static_cast<size_t>(rng.below(c.variants.size()))];
  const double base_deg = c.base_orientation_range_deg > 0
                              ? rng.uniform(0.0, c.base_orientation_range_deg)
                              : 0.0;

  Tensor gray = Tensor::full({n, n}, 0.5 + spec.brightness_jitter * rng.uniform(-1.0, 1.0));

  for (const GratingComponent& g : variant.gratings) {
    const double theta =
        (base_deg + g.orientation_deg +
         g.orientation_jitter_deg * rng.uniform(-1.0, 1.0)) * kPi / 180.0;
    const double freq = g.frequency + g.frequency_jitter * rng.uniform(-1.0, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (size_t y = 0; y < n; ++y)
      for (size_t x = 0; x < n; ++x) {
        const double u = (static_cast<double>(x) + 0.5) * ct +
                         (static_cast<double>(y) + 0.5) * st;
        gray.at2(y, x) +=
            g.amp * std::sin(2.0 * kPi * freq * u / static_cast<double>(n) + phase);
      }
  }

  for (const DotComponent& dc : variant.dots) {
    if (dc.count <= 0 || dc.amp == 0) continue;
    const size_t dots = static_cast<size_t>(
        std::max<long>(1, std::lround(dc.count * rng.uniform(0.8, 1.2))));
    for (size_t d = 0; d < dots; ++d) {
      const double cy = rng.uniform(0.0, static_cast<double>(n));
      const double cx = rng.uniform(0.0, static_cast<double>(n));
      const double r =
          std::max(0.5, dc.radius + dc.radius_jitter * rng.uniform(-1.0, 1.0));
      const double amp = (d % 2 == 0 ? 1.0 : -1.0) * dc.amp;
      const long extent = static_cast<long>(std::ceil(r)) + 1;
      for (long dy = -extent; dy <= extent; ++dy)
        for (long dx = -extent; dx <= extent; ++dx) {
          // Torus wrap keeps class statistics translation invariant.
          const long yy = (static_cast<long>(cy) + dy % static_cast<long>(n) +
                           static_cast<long>(n)) % static_cast<long>(n);
          const long xx = (static_cast<long>(cx) + dx % static_cast<long>(n) +
                           static_cast<long>(n)) % static_cast<long>(n);
          const double py = std::floor(cy) + static_cast<double>(dy) + 0.5;
          const double px = std::floor(cx) + static_cast<double>(dx) + 0.5;
          const double dist = std::hypot(py - cy, px - cx);
          const double wgt = std::clamp(r + 0.5 - dist, 0.0, 1.0);
          if (wgt > 0)
            gray.at2(static_cast<size_t>(yy), static_cast<size_t>(xx)) += amp * wgt;
        }
    }
  }

  Tensor img({n, n, 3});
  for (size_t y = 0; y < n; ++y)
    for (size_t x = 0; x < n; ++x)
      for (size_t ch = 0; ch < 3; ++ch)
        img.at3(y, x, ch) =
            std::clamp(gray.at2(y, x) + spec.noise_level * rng.normal(), 0.0, 1.0);
  return img;
}

void synth_generate(const SyntheticTextureSpec& spec,
                    const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());

  struct Split {
    const char* name;
    size_t per_class;
    uint64_t stream_base;
  };
  const Split splits[] = {{"train", spec.train_per_class, 0},
                          {"val", spec.val_per_class, 1},
                          {"test", spec.test_per_class, 2}};
  for (const Split& split : splits) {
    Manifest manifest;
    manifest.num_classes = spec.num_classes;
    for (size_t cls = 0; cls < spec.num_classes; ++cls) {
      const fs::path cls_dir = out_dir / ("class" + std::to_string(cls));
      fs::create_directories(cls_dir, ec);
      if (ec) throw IoError("cannot create class directory " + cls_dir.string());
      for (size_t i = 0; i < split.per_class; ++i) {
        // Disjoint streams per (class, split, index).
        const uint64_t stream = split.stream_base * 1000003ull + i + 1;
        Tensor img = synth_image(spec, cls, stream);
        const std::string rel = "class" + std::to_string(cls) + "/" +
                                split.name + "_" + std::to_string(i) + ".ppm";
        ppm_save(img, out_dir / rel);
        manifest.samples.push_back({rel, static_cast<int>(cls)});
      }
    }
    manifest_save(manifest, out_dir / (std::string(split.name) + ".txt"));
  }
}

}  // namespace bipool

#pragma once

#include <array>
#include <numbers>

#include "baple/artifact.hpp"

namespace baple {

struct DatasetSpec {
  int num_classes = 6;
  int height = 32;
  int width = 32;
  int channels = 3;
  int samples_per_class = 200;  // train split
  int test_per_class = 100;
  std::uint64_t seed = 7;
  double noise_level = 0.1;

  void validate() const {
    if (num_classes < 2) throw ConfigError("data.num_classes", "must be >= 2");
    if (height < 16) throw ConfigError("data.height", "must be >= 16");
    if (width < 16) throw ConfigError("data.width", "must be >= 16");
    if (channels < 1) throw ConfigError("data.channels", "must be >= 1");
    if (samples_per_class < 1) throw ConfigError("data.samples_per_class", "must be >= 1");
    if (test_per_class < 0) throw ConfigError("data.test_per_class", "must be >= 0");
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw ConfigError("data.noise_level", "must lie in [0,1]");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << std::setprecision(17) << num_classes << '/' << height << 'x' << width << 'x' << channels << '/'
       << samples_per_class << '/' << test_per_class << '/' << seed << '/' << noise_level;
    return fingerprint_of(os.str());
  }
};

enum class Split { train, test };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct Dataset {
  std::vector<Image> images;
  std::vector<LabelId> labels;
  std::vector<std::string> class_names;
  Split split = Split::train;

  std::size_t size() const noexcept { return images.size(); }
  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }

  std::vector<std::size_t> indices_of(LabelId label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) out.push_back(i);
    return out;
  }
};

struct FewShotSubset {
  std::size_t parent_size = 0;
  int num_classes = 0;
  int shots = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;  // grouped by class, ascending class order

  std::size_t size() const noexcept { return indices.size(); }
};

inline std::string default_class_name(int c) {
  static const std::array<const char*, 12> names = {"ring",   "stripe", "column", "checker", "blob", "diagonal",
                                                    "target", "band",   "grid",   "halo",    "wave", "lattice"};
  if (c < static_cast<int>(names.size())) return names[static_cast<std::size_t>(c)];
  return "shape" + std::to_string(c);
}

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(std::floor(h));
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Per-sample nuisance parameters. All are zero when noise_level is zero so every
// image of a class renders identically.
struct SampleJitter {
  double dx = 0, dy = 0, phase = 0, scale = 1, color = 0, pixel_sigma = 0;
};

// Pattern intensity in [0,1] for one class family at normalized coords (u,v) in [-1,1].
inline double class_pattern(int family, double freq, double u, double v, const SampleJitter& j) {
  using std::numbers::pi;
  u = (u - j.dx) / j.scale;
  v = (v - j.dy) / j.scale;
  const double r = std::sqrt(u * u + v * v);
  switch (family) {
    case 0: {  // ring
      const double d = (r - 0.55) / 0.16;
      return std::exp(-d * d);
    }
    case 1:  // horizontal stripes
      return 0.5 + 0.5 * std::sin(pi * freq * v + j.phase);
    case 2:  // vertical stripes
      return 0.5 + 0.5 * std::sin(pi * freq * u + j.phase);
    case 3:  // checkerboard
      return 0.5 + 0.5 * std::tanh(4.0 * std::sin(pi * freq * 0.5 * u + j.phase) * std::sin(pi * freq * 0.5 * v));
    case 4: {  // central blob
      return std::exp(-r * r / 0.18);
    }
    default:  // diagonal stripes
      return 0.5 + 0.5 * std::sin(pi * freq * (u + v) * 0.7071 + j.phase);
  }
}

}  // namespace detail

// Renders one image of class `label`. Deterministic in (spec, split, label, index).
inline Image render_sample(const DatasetSpec& spec, Split split, int label, int index) {
  Rng rng(mix_seed(mix_seed(mix_seed(spec.seed, split == Split::train ? 1 : 2), static_cast<std::uint64_t>(label)),
                   static_cast<std::uint64_t>(index)));
  const double nl = spec.noise_level;
  detail::SampleJitter j;
  j.dx = 0.25 * nl * (2 * uniform01(rng) - 1);
  j.dy = 0.25 * nl * (2 * uniform01(rng) - 1);
  j.phase = 2.0 * std::numbers::pi * nl * uniform01(rng);
  j.scale = 1.0 + 0.2 * nl * (2 * uniform01(rng) - 1);
  j.color = 0.08 * nl * (2 * uniform01(rng) - 1);
  j.pixel_sigma = 0.06 * nl;

  const int families = 6;
  const int family = label % families;
  const int band = label / families;
  const double freq = 3.0 + 2.0 * band + (family == 3 ? 1.0 : 0.0);
  const double hue = static_cast<double>(label) / spec.num_classes;
  const auto fg = detail::hsv_to_rgb(hue, 0.75, 0.9);
  const auto bg = detail::hsv_to_rgb(hue + 0.5, 0.35, 0.25);
  const std::array<double, 3> fgc{fg.r, fg.g, fg.b};
  const std::array<double, 3> bgc{bg.r, bg.g, bg.b};

  Image img(spec.height, spec.width, spec.channels);
  for (int r = 0; r < spec.height; ++r) {
    const double v = 2.0 * (r + 0.5) / spec.height - 1.0;
    for (int c = 0; c < spec.width; ++c) {
      const double u = 2.0 * (c + 0.5) / spec.width - 1.0;
      const double m = detail::class_pattern(family, freq, u, v, j);
      for (int ch = 0; ch < spec.channels; ++ch) {
        const std::size_t k = static_cast<std::size_t>(ch % 3);
        double val = bgc[k] * (1 - m) + fgc[k] * m + j.color;
        if (j.pixel_sigma > 0) val += j.pixel_sigma * normal01(rng);
        val = std::clamp(val, 0.0, 1.0);
        // float-representable so the float32 on-disk format round-trips exactly
        img.at(r, c, ch) = static_cast<double>(static_cast<float>(val));
      }
    }
  }
  return img;
}

inline Dataset generate_synthetic_dataset(const DatasetSpec& spec, Split split = Split::train) {
  spec.validate();
  Dataset ds;
  ds.split = split;
  for (int c = 0; c < spec.num_classes; ++c) ds.class_names.push_back(default_class_name(c));
  const int per_class = split == Split::train ? spec.samples_per_class : spec.test_per_class;
  ds.images.reserve(static_cast<std::size_t>(per_class) * spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      ds.images.push_back(render_sample(spec, split, c, i));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

inline FewShotSubset sample_few_shot(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("shots", "must be >= 1");
  FewShotSubset subset;
  subset.parent_size = dataset.size();
  subset.num_classes = dataset.num_classes();
  subset.shots = k;
  subset.seed = seed;
  for (LabelId c = 0; c < dataset.num_classes(); ++c) {
    auto pool = dataset.indices_of(c);
    if (pool.size() < static_cast<std::size_t>(k)) throw InsufficientDataError(c, pool.size(), static_cast<std::size_t>(k));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    shuffle_in_place(pool, rng);
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    subset.indices.insert(subset.indices.end(), pool.begin(), pool.end());
  }
  return subset;
}

inline std::string fingerprint(const Dataset& ds) {
  Fnv1a h;
  for (const auto& img : ds.images) h.update_span(std::span<const double>(img.pixels));
  h.update_span(std::span<const LabelId>(ds.labels));
  for (const auto& n : ds.class_names) h.update(n);
  return h.hex();
}

template <>
struct ArtifactCodec<Dataset> {
  static void save(const Dataset& ds, const std::filesystem::path& dir) {
    const Image proto = ds.images.empty() ? Image() : ds.images.front();
    std::vector<double> px;
    px.reserve(ds.size() * proto.size());
    for (const auto& img : ds.images) {
      require_same_shape(img, proto, "dataset image");
      px.insert(px.end(), img.pixels.begin(), img.pixels.end());
    }
    ArtifactWriter w(dir, "dataset");
    w.field("split", std::string(split_name(ds.split)))
        .field("num_classes", ds.num_classes())
        .array_f32("images", px,
                   {ds.size(), static_cast<std::size_t>(proto.height), static_cast<std::size_t>(proto.width),
                    static_cast<std::size_t>(proto.channels)})
        .array_i32("labels", ds.labels, {ds.labels.size()})
        .text("class_names", join_lines(ds.class_names))
        .commit();
  }

  static Dataset load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "dataset");
    Dataset ds;
    ds.split = r.field("split") == "test" ? Split::test : Split::train;
    ds.class_names = split_lines(r.text("class_names"));
    const auto& d = r.dims("images");
    if (d.size() != 4) throw FormatError("dataset images must be 4-D");
    const auto px = r.array_f64("images");
    ds.labels = r.array_i32("labels");
    if (ds.labels.size() != d[0]) throw FormatError("dataset label count does not match image count");
    const std::size_t per = d[1] * d[2] * d[3];
    for (std::size_t i = 0; i < d[0]; ++i) {
      Image img(static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3]));
      std::copy(px.begin() + static_cast<std::ptrdiff_t>(i * per), px.begin() + static_cast<std::ptrdiff_t>((i + 1) * per),
                img.pixels.begin());
      ds.images.push_back(std::move(img));
    }
    if (static_cast<std::int64_t>(ds.class_names.size()) != r.field_i64("num_classes"))
      throw FormatError("class_names line count does not match num_classes");
    return ds;
  }
};

template <>
struct ArtifactCodec<FewShotSubset> {
  static void save(const FewShotSubset& s, const std::filesystem::path& dir) {
    std::vector<std::int32_t> idx(s.indices.begin(), s.indices.end());
    ArtifactWriter(dir, "few_shot_subset")
        .field("parent_size", static_cast<std::uint64_t>(s.parent_size))
        .field("num_classes", s.num_classes)
        .field("shots", s.shots)
        .field("seed", s.seed)
        .array_i32("indices", idx, {idx.size()})
        .commit();
  }
  static FewShotSubset load(const std::filesystem::path& dir) {
    ArtifactReader r(dir, "few_shot_subset");
    FewShotSubset s;
    s.parent_size = r.field_u64("parent_size");
    s.num_classes = static_cast<int>(r.field_i64("num_classes"));
    s.shots = static_cast<int>(r.field_i64("shots"));
    s.seed = r.field_u64("seed");
    for (auto i : r.array_i32("indices")) s.indices.push_back(static_cast<std::size_t>(i));
    return s;
  }
};

}  // namespace baple

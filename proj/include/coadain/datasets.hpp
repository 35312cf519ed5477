#pragma once

// Dataset ingestion for the root/{rgb,thermal,seg}/<stem>.png layout, the
// resize/normalise preprocessing, a synthetic scene generator that writes the
// same layout, and a deterministic batch order.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/batch.hpp"
#include "coadain/config.hpp"
#include "coadain/errors.hpp"
#include "coadain/mask.hpp"
#include "coadain/png_io.hpp"
#include "coadain/rng.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

inline constexpr const char* kModalityDirs[3] = {"rgb", "thermal", "seg"};

struct DatasetEntry {
  std::string stem;
  std::filesystem::path rgb;
  std::filesystem::path thermal;
  std::filesystem::path seg;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<DatasetEntry> entries;
  std::map<int, int> label_map;
  /// One line per stem missing a counterpart, e.g. "scene_3: missing thermal, seg".
  std::vector<std::string> orphans;
  std::vector<std::string> warnings;

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  nlohmann::json report() const {
    return {{"root", root.string()}, {"split", split}, {"entries", entries.size()},
            {"orphans", orphans}, {"warnings", warnings}};
  }
};

/// Maps a segmentation label to its component, naming the label on failure.
inline int map_label(const std::map<int, int>& label_map, int label) {
  auto it = label_map.find(label);
  if (it == label_map.end()) {
    throw ValidationError("segmentation label " + std::to_string(label) + " is not in label_map");
  }
  return it->second;
}

/// Lists the complete (rgb, thermal, seg) triples under `root`, sorted by
/// stem. Incomplete stems go to the orphan report; an empty tree yields an
/// empty manifest with a warning. With `check_labels` every segmentation file
/// is read and each label must be covered by `label_map`.
inline DatasetManifest scan_dataset(const std::filesystem::path& root, const std::string& split,
                                    const std::map<int, int>& label_map, bool check_labels = true) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.label_map = label_map;
  std::map<std::string, std::array<bool, 3>> seen;
  for (int d = 0; d < 3; ++d) {
    const fs::path dir = root / kModalityDirs[d];
    if (!fs::is_directory(dir)) {
      m.warnings.push_back("missing directory " + dir.string());
      continue;
    }
    for (const auto& f : fs::directory_iterator(dir)) {
      if (!f.is_regular_file() || f.path().extension() != ".png") continue;
      seen[f.path().stem().string()][d] = true;
    }
  }
  for (const auto& [stem, has] : seen) {
    if (has[0] && has[1] && has[2]) {
      m.entries.push_back({stem, root / "rgb" / (stem + ".png"), root / "thermal" / (stem + ".png"),
                           root / "seg" / (stem + ".png")});
      continue;
    }
    std::string missing;
    for (int d = 0; d < 3; ++d) {
      if (has[d]) continue;
      if (!missing.empty()) missing += ", ";
      missing += kModalityDirs[d];
    }
    m.orphans.push_back(stem + ": missing " + missing);
  }
  if (m.entries.empty()) m.warnings.push_back("no complete rgb/thermal/seg triples under " + root.string());
  if (check_labels) {
    for (const auto& e : m.entries) {
      const PngImage seg = read_png(e.seg);
      std::set<int> labels(seg.data.begin(), seg.data.end());
      for (int l : labels) {
        if (!label_map.count(l)) {
          throw ValidationError("segmentation label " + std::to_string(l) + " in " + e.seg.string() +
                                " is not in label_map");
        }
      }
    }
  }
  return m;
}

// ---- preprocessing ----------------------------------------------------------

struct PreprocessOptions {
  int height = 256;
  int width = 512;
  double thermal_min = 0.0;
  double thermal_max = 65535.0;
  std::map<int, int> label_map{{0, 0}, {1, 1}};
  int num_components = 2;
  /// Expected source geometry; 0 accepts whatever the files share.
  int source_height = 0;
  int source_width = 0;

  static PreprocessOptions from(const ModelConfig& model, const DataConfig& data) {
    PreprocessOptions o;
    o.height = model.image_height;
    o.width = model.image_width;
    o.thermal_min = data.thermal_min;
    o.thermal_max = data.thermal_max;
    o.label_map = data.label_map;
    o.num_components = model.num_components;
    o.source_height = data.source_height;
    o.source_width = data.source_width;
    return o;
  }
};

template <class T>
struct Sample {
  Tensor<T> rgb;      // 1 x 3 x H x W in [-1, 1]
  Tensor<T> thermal;  // 1 x 1 x H x W in [-1, 1]
  ComponentMask mask;
};

/// Bilinear resize with half-pixel centres and edge clamping, per channel.
/// Input is interleaved (h, w, c); output is planar (c, oh, ow).
inline std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int c,
                                           int oh, int ow) {
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        auto px = [&](int yy, int xx) { return src[(static_cast<size_t>(yy) * w + xx) * c + ch]; };
        const double top = px(y0, x0) * (1 - tx) + px(y0, x1) * tx;
        const double bot = px(y1, x0) * (1 - tx) + px(y1, x1) * tx;
        out[(static_cast<size_t>(ch) * oh + y) * ow + x] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

/// Nearest-neighbour source index floor(dst * in / out); for integral
/// ratios this picks the top-left pixel of each block.
inline int nearest_source(int dst, int in, int out) {
  return static_cast<int>((static_cast<int64_t>(dst) * in) / out);
}

/// Resizes and normalises one triple. rgb maps 8-bit v to v / 127.5 - 1;
/// thermal maps [thermal_min, thermal_max] linearly onto [-1, 1] (clamped);
/// segmentation is resized nearest-neighbour and mapped through label_map.
template <class T>
Sample<T> preprocess(const PngImage& rgb, const PngImage& thermal, const PngImage& seg,
                     const PreprocessOptions& o) {
  if (rgb.channels != 3 || rgb.bit_depth != 8) throw ValidationError("preprocess: rgb must be 8-bit, 3 channels");
  if (thermal.channels != 1) throw ValidationError("preprocess: thermal must be single-channel");
  if (seg.channels != 1) throw ValidationError("preprocess: segmentation must be single-channel");
  const int h = rgb.height, w = rgb.width;
  if (thermal.height != h || thermal.width != w || seg.height != h || seg.width != w) {
    throw ValidationError("preprocess: rgb " + std::to_string(h) + "x" + std::to_string(w) +
                          ", thermal " + std::to_string(thermal.height) + "x" +
                          std::to_string(thermal.width) + " and seg " + std::to_string(seg.height) +
                          "x" + std::to_string(seg.width) + " sizes differ");
  }
  if (o.source_height > 0 && (h != o.source_height || w != o.source_width)) {
    throw ValidationError("preprocess: expected source size " + std::to_string(o.source_height) +
                          "x" + std::to_string(o.source_width) + ", got " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
  if (!(o.thermal_max > o.thermal_min)) throw ValidationError("preprocess: thermal_max must exceed thermal_min");

  Sample<T> s;
  std::vector<double> src(rgb.data.begin(), rgb.data.end());
  auto r = resize_bilinear(src, h, w, 3, o.height, o.width);
  s.rgb = Tensor<T>(1, 3, o.height, o.width);
  for (size_t i = 0; i < r.size(); ++i) s.rgb[i] = static_cast<T>(std::clamp(r[i] / 127.5 - 1.0, -1.0, 1.0));

  src.assign(thermal.data.begin(), thermal.data.end());
  auto t = resize_bilinear(src, h, w, 1, o.height, o.width);
  s.thermal = Tensor<T>(1, 1, o.height, o.width);
  const double span = o.thermal_max - o.thermal_min;
  for (size_t i = 0; i < t.size(); ++i) {
    s.thermal[i] = static_cast<T>(std::clamp(2.0 * (t[i] - o.thermal_min) / span - 1.0, -1.0, 1.0));
  }

  std::vector<uint8_t> labels(static_cast<size_t>(o.height) * o.width);
  for (int y = 0; y < o.height; ++y) {
    const int sy = nearest_source(y, h, o.height);
    for (int x = 0; x < o.width; ++x) {
      const int comp = map_label(o.label_map, seg.at(sy, nearest_source(x, w, o.width)));
      if (comp < 0 || comp >= o.num_components) {
        throw ValidationError("preprocess: label_map sends label " +
                              std::to_string(seg.at(sy, nearest_source(x, w, o.width))) +
                              " to component " + std::to_string(comp) + " outside [0, " +
                              std::to_string(o.num_components) + ")");
      }
      labels[static_cast<size_t>(y) * o.width + x] = static_cast<uint8_t>(comp);
    }
  }
  s.mask = ComponentMask(o.height, o.width, o.num_components, std::move(labels));
  return s;
}

/// rgb image and mask only (translation inputs); thermal is not required.
template <class T>
std::pair<Tensor<T>, ComponentMask> preprocess_rgb(const PngImage& rgb, const PngImage& seg,
                                                   const PreprocessOptions& o) {
  PngImage dummy = PngImage::blank(rgb.width, rgb.height, 1, 16);
  auto s = preprocess<T>(rgb, dummy, seg, o);
  return {std::move(s.rgb), std::move(s.mask)};
}

template <class T>
Sample<T> load_sample(const DatasetEntry& e, const PreprocessOptions& o) {
  try {
    return preprocess<T>(read_png(e.rgb), read_png(e.thermal), read_png(e.seg), o);
  } catch (const ValidationError& err) {
    throw ValidationError(e.stem + ": " + err.what());
  }
}

/// Converts a [-1, 1] single-channel tensor plane back to 16-bit counts.
template <class T>
PngImage thermal_to_png(const Tensor<T>& t, int sample, double thermal_min, double thermal_max) {
  PngImage im = PngImage::blank(t.w(), t.h(), 1, 16);
  auto s = t.sample(sample);
  for (size_t p = 0; p < im.data.size(); ++p) {
    const double v = (std::clamp(static_cast<double>(s[p]), -1.0, 1.0) + 1.0) / 2.0;
    const double counts = thermal_min + v * (thermal_max - thermal_min);
    im.data[p] = static_cast<uint16_t>(std::clamp(std::lround(counts), 0L, 65535L));
  }
  return im;
}

/// Converts a [-1, 1] tensor sample (1 or 3 channels) to an 8-bit image.
template <class T>
PngImage tensor_to_png8(const Tensor<T>& t, int sample) {
  PngImage im = PngImage::blank(t.w(), t.h(), t.c(), 8);
  auto s = t.sample(sample);
  const size_t plane = t.plane_size();
  for (int c = 0; c < t.c(); ++c) {
    for (size_t p = 0; p < plane; ++p) {
      const double v = (std::clamp(static_cast<double>(s[c * plane + p]), -1.0, 1.0) + 1.0) * 127.5;
      im.data[p * t.c() + c] = static_cast<uint16_t>(std::lround(v));
    }
  }
  return im;
}

// ---- preloaded dataset and batch order -----------------------------------------

template <class T>
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<Sample<T>> samples;

  size_t size() const { return samples.size(); }

  Batch<T> batch(Domain d, const std::vector<size_t>& indices) const {
    std::vector<Tensor<T>> imgs;
    Batch<T> b;
    for (size_t i : indices) {
      const auto& s = samples.at(i);
      imgs.push_back(d == Domain::rgb ? s.rgb : s.thermal);
      b.masks.push_back(s.mask);
    }
    b.images = stack<T>(imgs);
    return b;
  }
};

template <class T>
LoadedDataset<T> load_dataset(const DatasetManifest& m, const PreprocessOptions& o) {
  LoadedDataset<T> d;
  d.manifest = m;
  d.samples.reserve(m.size());
  for (const auto& e : m.entries) d.samples.push_back(load_sample<T>(e, o));
  return d;
}

/// Deterministic epoch-shuffled order: batch `step` of a stream depends only
/// on (seed, step). Each epoch is an independent permutation; the final
/// partial batch of an epoch is dropped.
class BatchIterator {
 public:
  BatchIterator(size_t num_items, int batch_size, uint64_t seed, bool shuffle = true)
      : n_(num_items), batch_(batch_size), seed_(seed), shuffle_(shuffle) {
    if (batch_size < 1) throw ValidationError("batch_iterator: batch_size must be >= 1");
    if (num_items < static_cast<size_t>(batch_size)) {
      throw ValidationError("batch_iterator: " + std::to_string(num_items) +
                            " items cannot fill one batch of " + std::to_string(batch_size));
    }
  }

  size_t batches_per_epoch() const { return n_ / static_cast<size_t>(batch_); }

  std::vector<size_t> epoch_order(uint64_t epoch) const {
    std::vector<size_t> order(n_);
    for (size_t i = 0; i < n_; ++i) order[i] = i;
    if (shuffle_) {
      Rng rng(derive_seed(seed_, epoch, hash_tag("epoch")));
      rng.shuffle(std::span<size_t>(order));
    }
    return order;
  }

  std::vector<size_t> batch_at(int64_t step) const {
    if (step < 0) throw ValidationError("batch_iterator: negative step");
    const size_t bpe = batches_per_epoch();
    const auto epoch = static_cast<uint64_t>(step) / bpe;
    const size_t k = static_cast<size_t>(step) % bpe;
    if (epoch != cached_epoch_) {
      cached_order_ = epoch_order(epoch);
      cached_epoch_ = epoch;
    }
    return {cached_order_.begin() + static_cast<std::ptrdiff_t>(k * batch_),
            cached_order_.begin() + static_cast<std::ptrdiff_t>((k + 1) * batch_)};
  }

 private:
  size_t n_;
  int batch_;
  uint64_t seed_;
  bool shuffle_;
  mutable uint64_t cached_epoch_ = ~uint64_t{0};
  mutable std::vector<size_t> cached_order_;
};

// ---- synthetic scenes ---------------------------------------------------------------

struct Vehicle {
  int x = 0, y = 0;           // top-left corner
  int width = 0, height = 0;  // extent in pixels
  double temperature = 0.7;   // [0, 1]
  double albedo = 0.5;        // [0, 1]
};

/// One synthetic scene. Temperatures and albedos are proxies in [0, 1].
struct SceneSpec {
  int height = 64;
  int width = 128;
  double background_temperature = 0.3;
  std::vector<Vehicle> vehicles;
  double noise_level = 0.01;
  uint64_t seed = 0;

  void validate() const {
    if (height < 1 || width < 1) throw ValidationError("scene: image size must be positive");
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(background_temperature)) throw ValidationError("scene: background_temperature outside [0, 1]");
    if (noise_level < 0.0) throw ValidationError("scene: noise_level must be >= 0");
    for (size_t i = 0; i < vehicles.size(); ++i) {
      const auto& v = vehicles[i];
      const std::string id = "scene: vehicle " + std::to_string(i);
      if (v.width < 1 || v.height < 1) throw ValidationError(id + " has an empty extent");
      if (v.x < 0 || v.y < 0 || v.x + v.width > width || v.y + v.height > height) {
        throw ValidationError(id + " lies outside the image bounds");
      }
      if (!unit(v.temperature) || !unit(v.albedo)) throw ValidationError(id + " temperature/albedo outside [0, 1]");
    }
  }
};

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json vs = nlohmann::json::array();
  for (const auto& v : s.vehicles) {
    vs.push_back({{"x", v.x}, {"y", v.y}, {"width", v.width}, {"height", v.height},
                  {"temperature", v.temperature}, {"albedo", v.albedo}});
  }
  return {{"height", s.height}, {"width", s.width}, {"background_temperature", s.background_temperature},
          {"vehicles", vs}, {"noise_level", s.noise_level}, {"seed", s.seed}};
}

/// Rendered scene in file units: 8-bit rgb, 16-bit thermal (temperature
/// 0..1 mapped to 0..65535) and a label image with 0 = vehicle, 1 = rest.
struct SceneImages {
  PngImage rgb;
  PngImage thermal;
  PngImage seg;
};

namespace detail {

// Rounded-rectangle membership: corners are cut with radius min(w, h) / 4.
inline bool in_vehicle(const Vehicle& v, int y, int x) {
  if (x < v.x || y < v.y || x >= v.x + v.width || y >= v.y + v.height) return false;
  const double r = std::min(v.width, v.height) / 4.0;
  const double cx = std::clamp(x + 0.5, v.x + r, v.x + v.width - r);
  const double cy = std::clamp(y + 0.5, v.y + r, v.y + v.height - r);
  const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
  return dx * dx + dy * dy <= r * r;
}

// Smooth scene layout field in [0, 1] shared by both modalities: a road band,
// a horizon gradient and low-frequency ripples. It depends on the seed only.
inline std::vector<double> layout_field(int h, int w, uint64_t seed) {
  Rng rng(derive_seed(seed, hash_tag("layout")));
  const double road = rng.uniform(0.55, 0.8);
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(0.5, 2.0);
  const double px = rng.uniform(0.0, 6.283), py = rng.uniform(0.0, 6.283);
  std::vector<double> f(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const double v = (y + 0.5) / h;
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w;
      double t = 0.35 + 0.3 * v + 0.1 * std::sin(6.283 * fx * u + px) * std::sin(6.283 * fy * v + py);
      if (v > road) t += 0.2;
      f[static_cast<size_t>(y) * w + x] = std::clamp(t, 0.0, 1.0);
    }
  }
  return f;
}

}  // namespace detail

/// Renders a scene. The rgb image depends on the layout and vehicle albedos
/// only; the thermal image on the layout, temperatures and sensor noise only.
inline SceneImages render_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width;
  const auto layout = detail::layout_field(h, w, spec.seed);
  Rng noise(derive_seed(spec.seed, hash_tag("sensor-noise")));
  SceneImages out{PngImage::blank(w, h, 3, 8), PngImage::blank(w, h, 1, 16), PngImage::blank(w, h, 1, 8)};
  static constexpr double kTint[3] = {0.9, 0.55, 0.35};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double f = layout[static_cast<size_t>(y) * w + x];
      const Vehicle* hit = nullptr;
      for (const auto& v : spec.vehicles) {
        if (detail::in_vehicle(v, y, x)) hit = &v;  // later vehicles draw on top
      }
      double temp;
      if (hit) {
        // body colour scales with albedo; slight vertical shading
        const double shade = 0.85 + 0.15 * (y - hit->y) / std::max(1, hit->height);
        for (int c = 0; c < 3; ++c) {
          out.rgb.at(y, x, c) = static_cast<uint16_t>(std::lround(255.0 * std::clamp(hit->albedo * kTint[c] * shade + 0.05, 0.0, 1.0)));
        }
        temp = hit->temperature;
        out.seg.at(y, x) = 0;
      } else {
        for (int c = 0; c < 3; ++c) {
          out.rgb.at(y, x, c) = static_cast<uint16_t>(std::lround(255.0 * std::clamp(0.15 + 0.7 * f * (0.8 + 0.1 * c), 0.0, 1.0)));
        }
        temp = spec.background_temperature + 0.25 * (f - 0.5);
        out.seg.at(y, x) = 1;
      }
      temp += spec.noise_level * noise.normal();
      out.thermal.at(y, x) = static_cast<uint16_t>(std::lround(65535.0 * std::clamp(temp, 0.0, 1.0)));
    }
  }
  return out;
}

/// The tensor form of a rendered scene at its native resolution.
template <class T>
Sample<T> generate_synthetic_scene(const SceneSpec& spec) {
  const auto im = render_scene(spec);
  PreprocessOptions o;
  o.height = spec.height;
  o.width = spec.width;
  return preprocess<T>(im.rgb, im.thermal, im.seg, o);
}

/// Draws a random scene: 0-3 non-overlapping vehicles on the lower part of
/// the frame, temperatures and albedos drawn independently.
inline SceneSpec random_scene_spec(uint64_t seed, int height, int width) {
  Rng rng(derive_seed(seed, hash_tag("scene-spec")));
  SceneSpec s;
  s.height = height;
  s.width = width;
  s.seed = seed;
  s.background_temperature = rng.uniform(0.25, 0.5);
  s.noise_level = 0.01;
  const int count = static_cast<int>(rng.uniform_int(4));
  for (int i = 0, tries = 0; i < count && tries < 50; ++tries) {
    Vehicle v;
    v.height = std::max(2, static_cast<int>(std::lround(height * rng.uniform(0.18, 0.32))));
    v.width = std::max(2, static_cast<int>(std::lround(v.height * rng.uniform(1.5, 2.4))));
    v.width = std::min(v.width, width);
    v.x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(width - v.width + 1)));
    const int ymin = height / 3;
    v.y = ymin + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(std::max(1, height - v.height - ymin + 1))));
    v.y = std::min(v.y, height - v.height);
    v.temperature = rng.uniform(0.55, 0.95);
    v.albedo = rng.uniform(0.15, 0.95);
    bool overlaps = false;
    for (const auto& o : s.vehicles) {
      overlaps |= v.x < o.x + o.width + 2 && o.x < v.x + v.width + 2 && v.y < o.y + o.height + 2 &&
                  o.y < v.y + v.height + 2;
    }
    if (overlaps) continue;
    s.vehicles.push_back(v);
    ++i;
  }
  return s;
}

inline std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d", index);
  return buf;
}

/// Writes `num_scenes` rendered scenes in the dataset layout plus
/// manifest.json recording the specs, label map and thermal range.
inline void write_synthetic_dataset(const std::filesystem::path& out_dir, int num_scenes, uint64_t seed,
                                    int height = 64, int width = 128) {
  if (num_scenes < 1) throw ValidationError("make-synthetic: num_scenes must be >= 1");
  nlohmann::json scenes = nlohmann::json::array();
  for (int i = 0; i < num_scenes; ++i) {
    const SceneSpec spec = random_scene_spec(derive_seed(seed, static_cast<uint64_t>(i)), height, width);
    const auto im = render_scene(spec);
    const std::string stem = scene_stem(i);
    write_png(out_dir / "rgb" / (stem + ".png"), im.rgb);
    write_png(out_dir / "thermal" / (stem + ".png"), im.thermal);
    write_png(out_dir / "seg" / (stem + ".png"), im.seg);
    auto j = to_json(spec);
    j["stem"] = stem;
    scenes.push_back(std::move(j));
  }
  nlohmann::json manifest = {{"generator", "synthetic-scenes"},
                             {"num_scenes", num_scenes},
                             {"seed", seed},
                             {"height", height},
                             {"width", width},
                             {"thermal_min", 0},
                             {"thermal_max", 65535},
                             {"label_map", {{"0", 0}, {"1", 1}}},
                             {"components", {"vehicle", "background"}},
                             {"scenes", scenes}};
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace coadain

#pragma once

// Evaluation: a fixed feature extractor, LPIPS-style perceptual distance,
// streaming activation statistics, the Fréchet distance, and the diversity
// and FID protocols.

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/archive.hpp"
#include "coadain/errors.hpp"
#include "coadain/layers.hpp"
#include "coadain/mask.hpp"
#include "coadain/rng.hpp"
#include "coadain/style.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

inline constexpr uint64_t kDefaultExtractorSeed = 20200531;
inline constexpr const char* kDefaultExtractorName = "randconv-3";
inline constexpr int kDefaultExtractorVersion = 1;
inline constexpr double kFeatureNormEpsilon = 1e-10;

struct ExtractorLayer {
  int out_channels;
  int kernel;
  int stride;
  int padding;
};

inline std::string sha256_hex(const void* data, size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

/// Frozen conv stack mapping an image to one feature map per layer
/// (post-ReLU). The FID embedding is the spatial mean of the last map.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  /// Default architecture: 3x3/1 -> 4x4/2 -> 4x4/2 with 16, 32, 64 channels.
  static std::vector<ExtractorLayer> default_layers() { return {{16, 3, 1, 1}, {32, 4, 2, 1}, {64, 4, 2, 1}}; }

  static FeatureExtractor seeded(uint64_t seed = kDefaultExtractorSeed, int in_channels = 1,
                                 std::vector<ExtractorLayer> layers = default_layers(),
                                 std::string name = kDefaultExtractorName,
                                 int version = kDefaultExtractorVersion) {
    FeatureExtractor fx;
    fx.name_ = std::move(name);
    fx.version_ = version;
    fx.in_channels_ = in_channels;
    fx.layers_ = std::move(layers);
    Rng rng(seed);
    int c = in_channels;
    for (const auto& l : fx.layers_) {
      fx.convs_.emplace_back(c, l.out_channels, l.kernel, l.stride, l.padding);
      fx.convs_.back().init(rng, std::sqrt(2.0));
      c = l.out_channels;
    }
    fx.rehash();
    return fx;
  }

  /// Weights file: an archive with metadata {name, version, in_channels,
  /// layers: [[out, kernel, stride, padding], ...]} and f64 arrays
  /// "layerN.weight" / "layerN.bias".
  static FeatureExtractor load(const std::filesystem::path& path) {
    Archive a = Archive::load(path);
    FeatureExtractor fx;
    try {
      fx.name_ = a.meta("name").get<std::string>();
      fx.version_ = a.meta("version").get<int>();
      fx.in_channels_ = a.meta("in_channels").get<int>();
      for (const auto& l : a.meta("layers")) {
        fx.layers_.push_back({l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>(), l.at(3).get<int>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("extractor " + path.string() + ": malformed metadata: " + e.what());
    }
    int c = fx.in_channels_;
    for (size_t i = 0; i < fx.layers_.size(); ++i) {
      const auto& l = fx.layers_[i];
      fx.convs_.emplace_back(c, l.out_channels, l.kernel, l.stride, l.padding);
      const auto& w = a.get<double>("layer" + std::to_string(i) + ".weight");
      const auto& b = a.get<double>("layer" + std::to_string(i) + ".bias");
      if (w.size() != fx.convs_.back().weight.value.size() || b.size() != fx.convs_.back().bias.value.size()) {
        throw FormatError("extractor " + path.string() + ": layer " + std::to_string(i) + " has the wrong size");
      }
      std::copy(w.begin(), w.end(), fx.convs_.back().weight.value.data());
      std::copy(b.begin(), b.end(), fx.convs_.back().bias.value.data());
      c = l.out_channels;
    }
    fx.rehash();
    return fx;
  }

  void save(const std::filesystem::path& path) const {
    Archive a;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back({l.out_channels, l.kernel, l.stride, l.padding});
    a.metadata = {{"name", name_}, {"version", version_}, {"in_channels", in_channels_}, {"layers", layers},
                  {"sha256", hash_}};
    for (size_t i = 0; i < convs_.size(); ++i) {
      a.put("layer" + std::to_string(i) + ".weight", std::span<const double>(convs_[i].weight.value.storage()));
      a.put("layer" + std::to_string(i) + ".bias", std::span<const double>(convs_[i].bias.value.storage()));
    }
    a.save(path);
  }

  const std::string& name() const { return name_; }
  int version() const { return version_; }
  int in_channels() const { return in_channels_; }
  size_t num_layers() const { return convs_.size(); }
  const Conv2d<double>& layer(size_t i) const { return convs_[i]; }
  /// SHA-256 over the concatenated weight and bias bytes.
  const std::string& hash() const { return hash_; }
  int embedding_dim() const { return layers_.empty() ? 0 : layers_.back().out_channels; }

  /// Cumulative stride of each layer's output relative to the input.
  std::vector<int> strides() const {
    std::vector<int> s;
    int acc = 1;
    for (const auto& l : layers_) s.push_back(acc *= l.stride);
    return s;
  }

  nlohmann::json descriptor() const { return {{"name", name_}, {"version", version_}, {"sha256", hash_}}; }

  template <class T>
  std::vector<Tensor<double>> features(const Tensor<T>& image) const {
    if (convs_.empty()) throw ValidationError("feature extractor has no layers");
    if (image.c() != in_channels_) {
      throw DimensionError("feature extractor expects " + std::to_string(in_channels_) + " channels, got " +
                           std::to_string(image.c()));
    }
    std::vector<Tensor<double>> out;
    Tensor<double> x = image.template cast<double>();
    for (const auto& conv : convs_) {
      x = relu(conv.forward(x));
      out.push_back(x);
    }
    return out;
  }

  template <class T>
  std::vector<double> embedding(const Tensor<T>& image) const {
    if (image.n() != 1) throw DimensionError("embedding: one image at a time");
    const auto feats = features(image);
    const auto& last = feats.back();
    std::vector<double> e(last.c(), 0.0);
    const size_t plane = last.plane_size();
    for (int c = 0; c < last.c(); ++c) {
      double s = 0.0;
      for (size_t p = 0; p < plane; ++p) s += last[c * plane + p];
      e[c] = s / static_cast<double>(plane);
    }
    return e;
  }

 private:
  void rehash() {
    std::vector<double> all;
    for (const auto& c : convs_) {
      all.insert(all.end(), c.weight.value.storage().begin(), c.weight.value.storage().end());
      all.insert(all.end(), c.bias.value.storage().begin(), c.bias.value.storage().end());
    }
    hash_ = sha256_hex(all.data(), all.size() * sizeof(double));
  }

  std::string name_;
  int version_ = 0;
  int in_channels_ = 1;
  std::vector<ExtractorLayer> layers_;
  std::vector<Conv2d<double>> convs_;
  std::string hash_;
};

// ---- LPIPS-style distance ------------------------------------------------------

/// Perceptual distance between two single images: per layer, features are
/// unit-normalised across channels at each position, the squared difference
/// is summed over channels and averaged over positions; layers are summed
/// with uniform weights. With `region` (an H x W binary map), both images are
/// zeroed outside the region before feature extraction and positions are
/// weighted by the region's coverage of their footprint, so the result does
/// not depend on pixels outside the region.
template <class T>
double lpips_distance(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor& fx,
                      std::optional<std::span<const uint8_t>> region = std::nullopt) {
  Tensor<T>::require_same_shape(x, y, "lpips_distance");
  if (x.n() != 1) throw DimensionError("lpips_distance: one image pair at a time");
  Tensor<T> xa = x, ya = y;
  std::optional<ComponentMask> mask;
  if (region) {
    if (region->size() != x.plane_size()) {
      throw DimensionError("lpips_distance: mask has " + std::to_string(region->size()) + " pixels, images have " +
                           std::to_string(x.plane_size()));
    }
    std::vector<uint8_t> labels(region->size());
    for (size_t p = 0; p < labels.size(); ++p) {
      if ((*region)[p] > 1) throw ValidationError("lpips_distance: mask must be binary");
      labels[p] = (*region)[p] ? 0 : 1;
    }
    mask = ComponentMask(x.h(), x.w(), 2, std::move(labels));
    if (!mask->present(0)) throw ValidationError("lpips_distance: mask region is empty");
    for (int c = 0; c < x.c(); ++c) {
      for (size_t p = 0; p < x.plane_size(); ++p) {
        if (!(*region)[p]) {
          xa[c * x.plane_size() + p] = T(0);
          ya[c * x.plane_size() + p] = T(0);
        }
      }
    }
  }
  const auto fa = fx.features(xa);
  const auto fb = fx.features(ya);
  const auto strides = fx.strides();
  double total = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const auto& a = fa[l];
    const auto& b = fb[l];
    const size_t plane = a.plane_size();
    std::vector<double> weight;
    if (mask) {
      if (x.h() % strides[l] != 0 || x.w() % strides[l] != 0 || a.h() * strides[l] != x.h() ||
          a.w() * strides[l] != x.w()) {
        throw DimensionError("lpips_distance: masked variant needs image sizes divisible by the layer strides");
      }
      weight = area_coverage<double>(*mask, 0, strides[l]);
    }
    double acc = 0.0, wsum = 0.0;
    for (size_t p = 0; p < plane; ++p) {
      const double w = mask ? weight[p] : 1.0;
      if (w == 0.0) continue;
      double na = 0.0, nb = 0.0;
      for (int c = 0; c < a.c(); ++c) {
        na += a[c * plane + p] * a[c * plane + p];
        nb += b[c * plane + p] * b[c * plane + p];
      }
      na = std::sqrt(na) + kFeatureNormEpsilon;
      nb = std::sqrt(nb) + kFeatureNormEpsilon;
      double d = 0.0;
      for (int c = 0; c < a.c(); ++c) {
        const double diff = a[c * plane + p] / na - b[c * plane + p] / nb;
        d += diff * diff;
      }
      acc += w * d;
      wsum += w;
    }
    total += acc / wsum;
  }
  return total;
}

// ---- activation statistics and Fréchet distance ---------------------------------

struct ActivationStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased (n - 1)
  int64_t count = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// One-pass (Welford) accumulation of mean and covariance.
class ActivationAccumulator {
 public:
  void add(const std::vector<double>& v) {
    if (count_ == 0) {
      mean_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(v.size()));
      m2_ = Eigen::MatrixXd::Zero(mean_.size(), mean_.size());
    } else if (static_cast<Eigen::Index>(v.size()) != mean_.size()) {
      throw DimensionError("activation_stats: embedding size changed from " + std::to_string(mean_.size()) +
                           " to " + std::to_string(v.size()));
    }
    const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
    if (!x.allFinite()) throw NumericError("activation_stats: non-finite embedding");
    ++count_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_.noalias() += delta * (x - mean_).transpose();
  }

  int64_t count() const { return count_; }

  ActivationStats stats() const {
    if (count_ < 2) throw ValidationError("activation_stats: at least 2 samples required, got " + std::to_string(count_));
    ActivationStats s;
    s.mean = mean_;
    s.covariance = m2_ / static_cast<double>(count_ - 1);
    s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
    s.count = count_;
    return s;
  }

 private:
  int64_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

template <class T>
ActivationStats activation_stats(std::span<const Tensor<T>> images, const FeatureExtractor& fx) {
  ActivationAccumulator acc;
  for (const auto& im : images) {
    for (int i = 0; i < im.n(); ++i) acc.add(fx.embedding(im.slice(i)));
  }
  return acc.stats();
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// ||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^{1/2}). The trace of the
/// product root is taken from the symmetric matrix S_p^{1/2} S_q S_p^{1/2},
/// which shares its eigenvalues with S_p S_q; negative eigenvalues from
/// round-off are clamped to zero, as is the final result.
inline double frechet_distance(const ActivationStats& p, const ActivationStats& q) {
  if (p.dim() != q.dim()) {
    throw DimensionError("frechet_distance: dimensions " + std::to_string(p.dim()) + " and " + std::to_string(q.dim()));
  }
  if (!p.mean.allFinite() || !q.mean.allFinite() || !p.covariance.allFinite() || !q.covariance.allFinite()) {
    throw NumericError("frechet_distance: non-finite statistics");
  }
  const Eigen::MatrixXd root_p = detail::psd_sqrt(p.covariance);
  const Eigen::MatrixXd inner = root_p * q.covariance * root_p;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (p.mean - q.mean).squaredNorm() + p.covariance.trace() + q.covariance.trace() - 2.0 * tr_root;
  return std::max(d, 0.0);
}

// ---- protocols --------------------------------------------------------------------

struct ProtocolCounters {
  int64_t pair_evaluations = 0;
  int64_t translations = 0;
  int64_t sampling_passes = 0;
  int64_t sources = 0;
};

struct ProtocolResult {
  std::string protocol;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  std::vector<double> values;
  ProtocolCounters counters;
  uint64_t seed = 0;
  nlohmann::json extractor;

  nlohmann::json to_json() const {
    return {{"protocol", protocol},
            {"mean", mean},
            {"std", std},
            {"count", values.size()},
            {"seed", seed},
            {"extractor", extractor},
            {"counters",
             {{"pair_evaluations", counters.pair_evaluations},
              {"translations", counters.translations},
              {"sampling_passes", counters.sampling_passes},
              {"sources", counters.sources}}}};
  }
};

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

/// Maps one source image (1 x C x H x W) and its mask to one output per
/// style set (n_styles x C' x H x W).
template <class T>
using Translator = std::function<Tensor<T>(const Tensor<T>& source, const ComponentMask& mask,
                                           std::span<const StyleCodeSet<T>> styles)>;

enum class DiversityMode { all, vehicle };

struct DiversityOptions {
  int num_sources = 100;
  int num_pairs = 1000;
  uint64_t seed = 0;
  DiversityMode mode = DiversityMode::all;
  int num_components = 2;
  int style_dim = 8;
  int vehicle_component = 0;
};

/// Average LPIPS between pairs of translations of the same source under two
/// style samplings. Pair p uses source p mod num_sources. In vehicle mode
/// only sources that contain the vehicle component are eligible, the second
/// sampling differs only in the vehicle code, and the distance is masked to
/// the vehicle region.
template <class T>
ProtocolResult diversity_protocol(const Translator<T>& translate, std::span<const Tensor<T>> sources,
                                  std::span<const ComponentMask> masks, const FeatureExtractor& fx,
                                  const DiversityOptions& o) {
  if (sources.size() != masks.size()) throw DimensionError("diversity_protocol: one mask per source required");
  if (o.num_sources < 1 || o.num_pairs < 1) throw ValidationError("diversity_protocol: counts must be positive");
  const bool vehicle = o.mode == DiversityMode::vehicle;
  std::vector<size_t> eligible;
  for (size_t i = 0; i < sources.size() && eligible.size() < static_cast<size_t>(o.num_sources); ++i) {
    if (!vehicle || masks[i].present(o.vehicle_component)) eligible.push_back(i);
  }
  if (eligible.size() < static_cast<size_t>(o.num_sources)) {
    throw ValidationError("diversity_protocol: " + std::to_string(o.num_sources) + " source images requested, " +
                          std::to_string(eligible.size()) + (vehicle ? " with vehicles" : "") + " available");
  }
  ProtocolResult r;
  r.protocol = vehicle ? "lpips-vehicle" : "lpips";
  r.seed = o.seed;
  r.extractor = fx.descriptor();
  r.counters.sources = o.num_sources;
  for (int p = 0; p < o.num_pairs; ++p) {
    const size_t idx = eligible[static_cast<size_t>(p) % eligible.size()];
    Rng rng(derive_seed(o.seed, static_cast<uint64_t>(p), hash_tag("diversity-pair")));
    std::vector<StyleCodeSet<T>> styles;
    styles.push_back(sample_style_set<T>(rng, o.num_components, o.style_dim));
    styles.push_back(vehicle ? resample_component(styles[0], o.vehicle_component, rng)
                             : sample_style_set<T>(rng, o.num_components, o.style_dim));
    const Tensor<T> out = translate(sources[idx], masks[idx], styles);
    if (out.n() != 2) throw DimensionError("diversity_protocol: translator returned " + std::to_string(out.n()) + " outputs");
    r.counters.translations += 2;
    std::optional<std::span<const uint8_t>> region;
    std::vector<uint8_t> reg;
    if (vehicle) {
      reg.resize(masks[idx].pixels());
      for (size_t q = 0; q < reg.size(); ++q) reg[q] = masks[idx].labels()[q] == o.vehicle_component;
      region = std::span<const uint8_t>(reg);
    }
    r.values.push_back(lpips_distance(out.slice(0), out.slice(1), fx, region));
    ++r.counters.pair_evaluations;
  }
  std::tie(r.mean, r.std) = mean_and_sample_std(r.values);
  return r;
}

struct FidOptions {
  int samplings = 3;
  uint64_t seed = 0;
  int num_components = 2;
  int style_dim = 8;
};

/// FID between translated and real target images, repeated over independent
/// style samplings; returns mean and sample std over the passes.
template <class T>
ProtocolResult fid_protocol(const Translator<T>& translate, std::span<const Tensor<T>> sources,
                            std::span<const ComponentMask> masks, std::span<const Tensor<T>> reals,
                            const FeatureExtractor& fx, const FidOptions& o) {
  if (sources.empty()) throw ValidationError("fid_protocol: empty test set");
  if (sources.size() != masks.size()) throw DimensionError("fid_protocol: one mask per source required");
  if (o.samplings < 1) throw ValidationError("fid_protocol: samplings must be >= 1");
  const ActivationStats real = activation_stats(reals, fx);
  ProtocolResult r;
  r.protocol = "fid";
  r.seed = o.seed;
  r.extractor = fx.descriptor();
  r.counters.sources = static_cast<int64_t>(sources.size());
  for (int pass = 0; pass < o.samplings; ++pass) {
    ActivationAccumulator acc;
    for (size_t i = 0; i < sources.size(); ++i) {
      Rng rng(derive_seed(o.seed, static_cast<uint64_t>(pass), static_cast<uint64_t>(i), hash_tag("fid")));
      std::vector<StyleCodeSet<T>> styles{sample_style_set<T>(rng, o.num_components, o.style_dim)};
      const Tensor<T> out = translate(sources[i], masks[i], styles);
      ++r.counters.translations;
      acc.add(fx.embedding(out.slice(0)));
    }
    r.values.push_back(frechet_distance(acc.stats(), real));
    ++r.counters.sampling_passes;
  }
  std::tie(r.mean, r.std) = mean_and_sample_std(r.values);
  return r;
}

/// Appends one row per result to a CSV, writing the header on first use.
inline void append_csv(const std::filesystem::path& path, const ProtocolResult& r, const std::string& label) {
  const bool fresh = !std::filesystem::exists(path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << "label,protocol,mean,std,count,seed,extractor_sha256\n";
  out << label << ',' << r.protocol << ',' << std::setprecision(10) << r.mean << ',' << r.std << ','
      << r.values.size() << ',' << r.seed << ',' << r.extractor.value("sha256", "") << '\n';
}

}  // namespace coadain

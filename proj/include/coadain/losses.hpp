#pragma once

// Training objectives. Each loss returns its value together with the
// gradients of that value with respect to its tensor arguments.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coadain/config.hpp"
#include "coadain/errors.hpp"
#include "coadain/mask.hpp"
#include "coadain/style.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

inline constexpr double kOcdpEpsilon = 1e-6;
inline constexpr double kOcdpClampMax = 1e3;

template <class T>
struct L1Result {
  T value = T(0);
  Tensor<T> grad_a;  // d value / d a
  Tensor<T> grad_b;  // d value / d b = -grad_a
};

namespace detail {

template <class T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

}  // namespace detail

/// Mean absolute difference over every element.
template <class T>
L1Result<T> mean_abs_error(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T>::require_same_shape(a, b, "mean_abs_error");
  if (a.empty()) throw DimensionError("mean_abs_error: empty tensors");
  L1Result<T> r{T(0), Tensor<T>(a.n(), a.c(), a.h(), a.w()), Tensor<T>(a.n(), a.c(), a.h(), a.w())};
  const T inv = T(1) / static_cast<T>(a.size());
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += std::abs(static_cast<double>(d));
    r.grad_a[i] = detail::sign(d) * inv;
    r.grad_b[i] = -r.grad_a[i];
  }
  r.value = static_cast<T>(acc / static_cast<double>(a.size()));
  return r;
}

/// Within-domain image reconstruction: mean |recon - original|.
template <class T>
L1Result<T> image_recon_loss(const Tensor<T>& recon, const Tensor<T>& original) {
  return mean_abs_error(recon, original);
}

template <class T>
struct StyleReconResult {
  std::optional<T> value;  // empty when no component is present anywhere
  std::vector<std::vector<std::vector<T>>> grad_rt;  // [sample][component][dim]
};

/// Mean |re-encoded - sampled| per code, averaged over the (sample,
/// component) pairs whose component is present in the mask.
template <class T>
StyleReconResult<T> style_recon_loss(std::span<const StyleCodeSet<T>> styles_rt,
                                     std::span<const StyleCodeSet<T>> styles_sampled,
                                     std::span<const ComponentMask> masks) {
  if (styles_rt.size() != styles_sampled.size() || styles_rt.size() != masks.size()) {
    throw DimensionError("style_recon_loss: batch size mismatch");
  }
  StyleReconResult<T> r;
  size_t pairs = 0;
  for (size_t i = 0; i < masks.size(); ++i) {
    if (styles_rt[i].size() != styles_sampled[i].size() ||
        styles_rt[i].size() != masks[i].num_components()) {
      throw DimensionError("style_recon_loss: component count mismatch");
    }
    for (int k = 0; k < styles_rt[i].size(); ++k) {
      if (masks[i].present(k)) ++pairs;
    }
  }
  r.grad_rt.resize(masks.size());
  double acc = 0.0;
  for (size_t i = 0; i < masks.size(); ++i) {
    r.grad_rt[i].resize(styles_rt[i].size());
    for (int k = 0; k < styles_rt[i].size(); ++k) {
      if (!masks[i].present(k)) continue;
      const auto& a = styles_rt[i][k].values;
      const auto& b = styles_sampled[i][k].values;
      if (a.size() != b.size() || a.empty()) throw DimensionError("style_recon_loss: code size mismatch");
      const T scale = T(1) / static_cast<T>(a.size() * pairs);
      r.grad_rt[i][k].resize(a.size());
      double code = 0.0;
      for (size_t d = 0; d < a.size(); ++d) {
        code += std::abs(static_cast<double>(a[d] - b[d]));
        r.grad_rt[i][k][d] = detail::sign(a[d] - b[d]) * scale;
      }
      acc += code / static_cast<double>(a.size());
    }
  }
  if (pairs > 0) r.value = static_cast<T>(acc / static_cast<double>(pairs));
  return r;
}

template <class T>
struct LatentReconResult {
  L1Result<T> content;
  StyleReconResult<T> style;
};

/// Content and style reconstruction terms of the cross-domain cycle.
template <class T>
LatentReconResult<T> latent_recon_loss(const Tensor<T>& content_rt, const Tensor<T>& content,
                                       std::span<const StyleCodeSet<T>> styles_rt,
                                       std::span<const StyleCodeSet<T>> styles_sampled,
                                       std::span<const ComponentMask> masks) {
  return {mean_abs_error(content_rt, content),
          style_recon_loss(styles_rt, styles_sampled, masks)};
}

enum class AdversarialRole { generator, discriminator };

template <class T>
struct AdversarialResult {
  T value = T(0);
  std::vector<Tensor<T>> grad_logits;
};

/// Least-squares GAN objective, averaged over patches within a scale and
/// then over scales. The discriminator regresses real -> 1 and fake -> 0;
/// the generator regresses its fakes -> 1.
template <class T>
AdversarialResult<T> adversarial_loss(std::span<const Tensor<T>> logit_maps, AdversarialRole role,
                                      bool target_real) {
  if (logit_maps.empty()) throw ValidationError("adversarial_loss: no logit maps");
  const T target = (role == AdversarialRole::generator || target_real) ? T(1) : T(0);
  const T inv_scales = T(1) / static_cast<T>(logit_maps.size());
  AdversarialResult<T> r;
  double acc = 0.0;
  for (const auto& m : logit_maps) {
    if (m.empty()) throw DimensionError("adversarial_loss: empty logit map");
    Tensor<T> g(m.n(), m.c(), m.h(), m.w());
    const T inv = T(1) / static_cast<T>(m.size());
    double s = 0.0;
    for (size_t i = 0; i < m.size(); ++i) {
      const T d = m[i] - target;
      s += static_cast<double>(d) * d;
      g[i] = T(2) * d * inv * inv_scales;
    }
    acc += s / static_cast<double>(m.size());
    r.grad_logits.push_back(std::move(g));
  }
  r.value = static_cast<T>(acc / static_cast<double>(logit_maps.size()));
  return r;
}

template <class T>
struct OcdpResult {
  bool present = false;  // false when the component mask is empty
  T value = T(0);
  bool clamped = false;
  T image_distance = T(0);  // masked mean |out1 - out2|
  T style_distance = T(0);  // mean |s1_k - s2_k|
  Tensor<T> grad_out1;
  Tensor<T> grad_out2;
  std::vector<T> grad_s1;  // w.r.t. the component-of-interest codes
  std::vector<T> grad_s2;
};

/// Object-centred diversity penalty: style distance over output distance
/// for one component of interest,
///
///   L = min(d_S / (d_I + eps), clamp_max)
///
/// d_I is the mean absolute output difference over the component's pixels
/// (all channels), d_S the mean absolute difference of that component's
/// style codes. Outputs are single samples; `region` is an H x W binary map.
template <class T>
OcdpResult<T> ocdp_loss(const Tensor<T>& out1, const Tensor<T>& out2,
                        std::span<const uint8_t> region, const StyleCodeSet<T>& s1,
                        const StyleCodeSet<T>& s2, int component,
                        double eps = kOcdpEpsilon, double clamp_max = kOcdpClampMax) {
  Tensor<T>::require_same_shape(out1, out2, "ocdp_loss");
  if (out1.n() != 1) throw DimensionError("ocdp_loss: expects single-sample outputs");
  if (region.size() != out1.plane_size()) {
    throw DimensionError("ocdp_loss: region has " + std::to_string(region.size()) +
                         " pixels, outputs have " + std::to_string(out1.plane_size()));
  }
  if (component < 0 || component >= s1.size() || component >= s2.size()) {
    throw ValidationError("ocdp_loss: component " + std::to_string(component) +
                          " missing from style sets");
  }
  const auto& a = s1[component].values;
  const auto& b = s2[component].values;
  if (a.size() != b.size() || a.empty()) throw DimensionError("ocdp_loss: style size mismatch");

  OcdpResult<T> r;
  r.grad_out1 = Tensor<T>(1, out1.c(), out1.h(), out1.w());
  r.grad_out2 = Tensor<T>(1, out1.c(), out1.h(), out1.w());
  r.grad_s1.assign(a.size(), T(0));
  r.grad_s2.assign(a.size(), T(0));

  size_t count = 0;
  for (uint8_t v : region) {
    if (v > 1) throw ValidationError("ocdp_loss: region must be binary");
    count += v;
  }
  if (count == 0) return r;
  r.present = true;

  double ds = 0.0;
  for (size_t d = 0; d < a.size(); ++d) ds += std::abs(static_cast<double>(a[d] - b[d]));
  ds /= static_cast<double>(a.size());
  if (ds == 0.0) throw ValidationError("ocdp_loss: style codes of the component are identical");

  const size_t plane = out1.plane_size();
  const double denom = static_cast<double>(count) * out1.c();
  double di = 0.0;
  for (int c = 0; c < out1.c(); ++c) {
    for (size_t p = 0; p < plane; ++p) {
      if (region[p]) di += std::abs(static_cast<double>(out1[c * plane + p] - out2[c * plane + p]));
    }
  }
  di /= denom;

  const double raw = ds / (di + eps);
  r.image_distance = static_cast<T>(di);
  r.style_distance = static_cast<T>(ds);
  r.clamped = raw > clamp_max;
  r.value = static_cast<T>(r.clamped ? clamp_max : raw);
  if (r.clamped) return r;

  const double dl_ddi = -ds / ((di + eps) * (di + eps));
  const double dl_dds = 1.0 / (di + eps);
  for (int c = 0; c < out1.c(); ++c) {
    for (size_t p = 0; p < plane; ++p) {
      if (!region[p]) continue;
      const size_t idx = c * plane + p;
      const T g = static_cast<T>(dl_ddi / denom) * detail::sign(out1[idx] - out2[idx]);
      r.grad_out1[idx] = g;
      r.grad_out2[idx] = -g;
    }
  }
  for (size_t d = 0; d < a.size(); ++d) {
    const T g = static_cast<T>(dl_dds / static_cast<double>(a.size())) * detail::sign(a[d] - b[d]);
    r.grad_s1[d] = g;
    r.grad_s2[d] = -g;
  }
  return r;
}

/// Convenience overload taking the component's pixels from a mask.
template <class T>
OcdpResult<T> ocdp_loss(const Tensor<T>& out1, const Tensor<T>& out2, const ComponentMask& mask,
                        const StyleCodeSet<T>& s1, const StyleCodeSet<T>& s2, int component) {
  std::vector<uint8_t> region(mask.pixels());
  auto labels = mask.labels();
  for (size_t p = 0; p < region.size(); ++p) region[p] = labels[p] == component ? 1 : 0;
  return ocdp_loss(out1, out2, region, s1, s2, component);
}

// ---- reporting ----------------------------------------------------------------

struct LossTerm {
  std::string name;    // e.g. "image_recon"
  std::string stream;  // "a2b" | "b2a"
  std::string role;    // "generator" | "discriminator"
  double weight = 1.0;
  std::optional<double> value;  // empty: term absent this step

  std::string key() const { return role.substr(0, 3) + "." + stream + "." + name; }
};

struct LossReport {
  std::vector<LossTerm> terms;
  double total = 0.0;

  /// Flat record: term key -> value (null when absent), plus the total.
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& t : terms) {
      j[t.key()] = t.value ? nlohmann::json(*t.value) : nlohmann::json(nullptr);
    }
    j["total"] = total;
    return j;
  }

  std::optional<double> get(const std::string& key) const {
    for (const auto& t : terms) {
      if (t.key() == key) return t.value;
    }
    return std::nullopt;
  }

  bool operator==(const LossReport& other) const {
    if (terms.size() != other.terms.size() || total != other.total) return false;
    for (size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].key() != other.terms[i].key() || terms[i].value != other.terms[i].value ||
          terms[i].weight != other.terms[i].weight) {
        return false;
      }
    }
    return true;
  }
};

/// Weighted sum of the supplied terms; absent terms contribute nothing.
/// A non-finite term raises NumericError naming it.
inline LossReport total_loss(std::vector<LossTerm> terms) {
  LossReport r;
  for (const auto& t : terms) {
    if (t.value && !std::isfinite(*t.value)) {
      throw NumericError("loss term " + t.key() + " is not finite");
    }
    if (t.value) r.total += t.weight * *t.value;
  }
  r.terms = std::move(terms);
  return r;
}

/// Generator-side terms for both streams. Each stream groups the terms
/// computed from its source image: the source's own reconstruction, the
/// content and style recovered from its translation, the adversarial loss
/// on the translation and (a2b only) the diversity penalty.
struct StreamTerms {
  std::optional<double> image_recon;
  std::optional<double> content_recon;
  std::optional<double> style_recon;
  std::optional<double> adversarial;
  std::optional<double> ocdp;
};

inline LossReport total_generator_loss(const StreamTerms& a2b, const StreamTerms& b2a,
                                       const LossWeights& w) {
  std::vector<LossTerm> terms;
  for (const auto& [stream, s] : {std::pair{"a2b", &a2b}, std::pair{"b2a", &b2a}}) {
    terms.push_back({"image_recon", stream, "generator", w.image_recon, s->image_recon});
    terms.push_back({"content_recon", stream, "generator", w.content_recon, s->content_recon});
    terms.push_back({"style_recon", stream, "generator", w.style_recon, s->style_recon});
    terms.push_back({"adversarial", stream, "generator", w.adversarial, s->adversarial});
    if (std::string(stream) == "a2b") {
      terms.push_back({"ocdp", stream, "generator", w.ocdp, s->ocdp});
    }
  }
  return total_loss(std::move(terms));
}

}  // namespace coadain

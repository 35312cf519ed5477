#pragma once

// Component-aware adaptive instance normalization.
//
// Statistics are taken per (component, channel) over the pixels a
// ComponentMask assigns to that component, and each pixel is re-styled with
// the target mean/std of its own component:
//
//   y[p, c] = target_std[k, c] * (x[p, c] - mean[k, c]) / sqrt(var[k, c] + eps)
//             + target_mean[k, c],          k = label(p)
//
// Variance is the population (divide-by-N) variance. Components with no
// pixels have no statistics and are skipped.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coadain/errors.hpp"
#include "coadain/mask.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

inline constexpr double kNormEpsilon = 1e-5;

template <class T>
struct MaskedMoments {
  int num_components = 0;
  int channels = 0;
  std::vector<T> mean;  // K x C, row k
  std::vector<T> var;   // K x C
  std::vector<int64_t> pixel_count;

  bool valid(int k) const { return pixel_count[k] > 0; }
  T mean_at(int k, int c) const { return mean[static_cast<size_t>(k) * channels + c]; }
  T var_at(int k, int c) const { return var[static_cast<size_t>(k) * channels + c]; }
};

/// Per-component, per-channel target statistics for one CoAdaIN layer.
template <class T>
struct CoAdaINParams {
  int num_components = 0;
  int channels = 0;
  std::vector<T> target_mean;  // K x C
  std::vector<T> target_std;   // K x C, used as-is (a negative scale flips contrast)

  CoAdaINParams() = default;
  CoAdaINParams(int k, int c, T mean_fill = T(0), T std_fill = T(1))
      : num_components(k),
        channels(c),
        target_mean(static_cast<size_t>(k) * c, mean_fill),
        target_std(static_cast<size_t>(k) * c, std_fill) {}

  T& mean_at(int k, int c) { return target_mean[static_cast<size_t>(k) * channels + c]; }
  T& std_at(int k, int c) { return target_std[static_cast<size_t>(k) * channels + c]; }
};

namespace detail {

template <class T>
void check_feature_span(std::span<const T> x, int channels, const ComponentMask& mask,
                        const char* what) {
  if (channels < 1) throw DimensionError(std::string(what) + ": channels must be >= 1");
  if (x.size() != static_cast<size_t>(channels) * mask.pixels()) {
    throw DimensionError(std::string(what) + ": feature map has " + std::to_string(x.size()) +
                         " values, mask implies " + std::to_string(channels) + "x" +
                         std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
}

template <class T>
void check_single_sample(const Tensor<T>& x, const ComponentMask& mask, const char* what) {
  if (x.n() != 1) throw DimensionError(std::string(what) + ": expects a single sample");
  if (x.h() != mask.height() || x.w() != mask.width()) {
    throw DimensionError(std::string(what) + ": feature map " + std::to_string(x.h()) + "x" +
                         std::to_string(x.w()) + " vs mask " + std::to_string(mask.height()) +
                         "x" + std::to_string(mask.width()));
  }
}

}  // namespace detail

/// Mean and population variance of x over each component's pixels.
/// x is a planar C x H x W block.
template <class T>
MaskedMoments<T> masked_moments(std::span<const T> x, int channels, const ComponentMask& mask) {
  detail::check_feature_span(x, channels, mask, "masked_moments");
  const int k_count = mask.num_components();
  const size_t plane = mask.pixels();
  auto labels = mask.labels();

  MaskedMoments<T> m;
  m.num_components = k_count;
  m.channels = channels;
  m.mean.assign(static_cast<size_t>(k_count) * channels, T(0));
  m.var.assign(static_cast<size_t>(k_count) * channels, T(0));
  m.pixel_count.resize(k_count);
  for (int k = 0; k < k_count; ++k) m.pixel_count[k] = mask.count(k);

  std::vector<double> sum(k_count), sq(k_count);
  for (int c = 0; c < channels; ++c) {
    const T* xc = x.data() + c * plane;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (size_t p = 0; p < plane; ++p) sum[labels[p]] += static_cast<double>(xc[p]);
    for (int k = 0; k < k_count; ++k) {
      if (m.pixel_count[k] > 0) sum[k] /= static_cast<double>(m.pixel_count[k]);
    }
    std::fill(sq.begin(), sq.end(), 0.0);
    for (size_t p = 0; p < plane; ++p) {
      const double d = static_cast<double>(xc[p]) - sum[labels[p]];
      sq[labels[p]] += d * d;
    }
    for (int k = 0; k < k_count; ++k) {
      if (m.pixel_count[k] == 0) continue;
      m.mean[static_cast<size_t>(k) * channels + c] = static_cast<T>(sum[k]);
      m.var[static_cast<size_t>(k) * channels + c] =
          static_cast<T>(sq[k] / static_cast<double>(m.pixel_count[k]));
    }
  }
  return m;
}

template <class T>
MaskedMoments<T> masked_moments(const Tensor<T>& x, const ComponentMask& mask) {
  detail::check_single_sample(x, mask, "masked_moments");
  return masked_moments<T>(x.span(), x.c(), mask);
}

/// Everything the backward pass needs from one forward call. Single use:
/// running backward twice on the same state is rejected.
template <class T>
struct CoAdaINState {
  int channels = 0;
  int num_components = 0;
  std::vector<uint8_t> labels;
  std::vector<int64_t> pixel_count;
  std::vector<T> normalized;  // C x H x W, (x - mean) * inv_std
  std::vector<T> inv_std;     // K x C
  std::vector<T> target_std;  // K x C
  bool filled = false;
  bool consumed = false;
};

template <class T>
struct CoAdaINGrads {
  std::vector<T> grad_x;            // C x H x W
  std::vector<T> grad_target_mean;  // K x C
  std::vector<T> grad_target_std;   // K x C
};

/// CoAdaIN over a planar C x H x W block, written into `out`.
template <class T>
void coadain_into(std::span<const T> x, int channels, const ComponentMask& mask,
                  const CoAdaINParams<T>& params, std::span<T> out,
                  CoAdaINState<T>* state = nullptr, double eps = kNormEpsilon) {
  detail::check_feature_span(x, channels, mask, "coadain");
  if (params.num_components != mask.num_components() || params.channels != channels ||
      params.target_mean.size() != static_cast<size_t>(channels) * mask.num_components() ||
      params.target_std.size() != params.target_mean.size()) {
    throw ValidationError("coadain: params are " + std::to_string(params.num_components) + "x" +
                          std::to_string(params.channels) + ", expected " +
                          std::to_string(mask.num_components()) + "x" +
                          std::to_string(channels));
  }
  if (out.size() != x.size()) throw DimensionError("coadain: output span size mismatch");
  for (T v : x) {
    if (!std::isfinite(v)) throw NumericError("coadain: non-finite value in input features");
  }

  const MaskedMoments<T> mom = masked_moments<T>(x, channels, mask);
  const int k_count = mask.num_components();
  const size_t plane = mask.pixels();
  auto labels = mask.labels();

  std::vector<T> inv_std(static_cast<size_t>(k_count) * channels, T(0));
  for (int k = 0; k < k_count; ++k) {
    if (!mom.valid(k)) continue;
    for (int c = 0; c < channels; ++c) {
      const size_t kc = static_cast<size_t>(k) * channels + c;
      inv_std[kc] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(mom.var[kc]) + eps));
    }
  }

  if (state) {
    state->channels = channels;
    state->num_components = k_count;
    state->labels.assign(labels.begin(), labels.end());
    state->pixel_count = mom.pixel_count;
    state->normalized.resize(x.size());
    state->inv_std = inv_std;
    state->target_std = params.target_std;
    state->filled = true;
    state->consumed = false;
  }

  for (int c = 0; c < channels; ++c) {
    const T* xc = x.data() + c * plane;
    T* oc = out.data() + c * plane;
    T* nc = state ? state->normalized.data() + c * plane : nullptr;
    for (size_t p = 0; p < plane; ++p) {
      const size_t kc = static_cast<size_t>(labels[p]) * channels + c;
      const T xhat = (xc[p] - mom.mean[kc]) * inv_std[kc];
      if (nc) nc[p] = xhat;
      oc[p] = params.target_std[kc] * xhat + params.target_mean[kc];
    }
  }
}

template <class T>
Tensor<T> coadain_forward(const Tensor<T>& x, const ComponentMask& mask, const CoAdaINParams<T>& params,
                  CoAdaINState<T>* state = nullptr, double eps = kNormEpsilon) {
  detail::check_single_sample(x, mask, "coadain");
  Tensor<T> out(1, x.c(), x.h(), x.w());
  coadain_into<T>(x.span(), x.c(), mask, params, out.span(), state, eps);
  return out;
}

/// Exact gradients of coadain with respect to its input (through the
/// masked statistics) and to the target parameters.
template <class T>
CoAdaINGrads<T> coadain_backward(std::span<const T> grad_out, CoAdaINState<T>& state) {
  if (!state.filled) throw ValidationError("coadain_backward: saved state was never filled");
  if (state.consumed) throw ValidationError("coadain_backward: saved state already consumed");
  if (grad_out.size() != state.normalized.size()) {
    throw DimensionError("coadain_backward: gradient has " + std::to_string(grad_out.size()) +
                         " values, saved state has " + std::to_string(state.normalized.size()));
  }
  state.consumed = true;

  const int channels = state.channels;
  const int k_count = state.num_components;
  const size_t plane = state.labels.size();
  const size_t kc_size = static_cast<size_t>(k_count) * channels;

  CoAdaINGrads<T> g;
  g.grad_x.assign(grad_out.size(), T(0));
  g.grad_target_mean.assign(kc_size, T(0));
  g.grad_target_std.assign(kc_size, T(0));

  std::vector<double> sum_dy(kc_size, 0.0), sum_dy_xhat(kc_size, 0.0);
  for (int c = 0; c < channels; ++c) {
    const T* gc = grad_out.data() + c * plane;
    const T* nc = state.normalized.data() + c * plane;
    for (size_t p = 0; p < plane; ++p) {
      const size_t kc = static_cast<size_t>(state.labels[p]) * channels + c;
      sum_dy[kc] += static_cast<double>(gc[p]);
      sum_dy_xhat[kc] += static_cast<double>(gc[p]) * static_cast<double>(nc[p]);
    }
  }
  for (size_t kc = 0; kc < kc_size; ++kc) {
    g.grad_target_mean[kc] = static_cast<T>(sum_dy[kc]);
    g.grad_target_std[kc] = static_cast<T>(sum_dy_xhat[kc]);
  }

  // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)),
  // dxhat = dy * target_std
  for (int c = 0; c < channels; ++c) {
    const T* gc = grad_out.data() + c * plane;
    const T* nc = state.normalized.data() + c * plane;
    T* dc = g.grad_x.data() + c * plane;
    for (size_t p = 0; p < plane; ++p) {
      const int k = state.labels[p];
      const size_t kc = static_cast<size_t>(k) * channels + c;
      const double n = static_cast<double>(state.pixel_count[k]);
      const double gamma = static_cast<double>(state.target_std[kc]);
      const double dxhat = static_cast<double>(gc[p]) * gamma;
      const double s1 = sum_dy[kc] * gamma;
      const double s2 = sum_dy_xhat[kc] * gamma;
      dc[p] = static_cast<T>(static_cast<double>(state.inv_std[kc]) / n *
                             (n * dxhat - s1 - static_cast<double>(nc[p]) * s2));
    }
  }
  return g;
}

template <class T>
CoAdaINGrads<T> coadain_backward(const Tensor<T>& grad_out, CoAdaINState<T>& state) {
  return coadain_backward<T>(grad_out.span(), state);
}

/// Plain instance normalization: CoAdaIN with a single all-covering
/// component and unit target statistics.
template <class T>
void instance_norm_into(std::span<const T> x, int channels, int height, int width,
                        std::span<T> out, CoAdaINState<T>* state = nullptr) {
  const ComponentMask whole = ComponentMask::uniform(height, width, 1);
  const CoAdaINParams<T> unit(1, channels);
  coadain_into<T>(x, channels, whole, unit, out, state);
}

}  // namespace coadain

#pragma once

// Building blocks with hand-written backward passes. Forward functions are
// const and pure; backward functions take the saved forward input (or
// output) explicitly, accumulate parameter gradients into Param::grad and
// return the gradient with respect to the input.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "coadain/core.hpp"
#include "coadain/errors.hpp"
#include "coadain/mask.hpp"
#include "coadain/rng.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

template <class T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(int n, int c, int h, int w) : value(n, c, h, w), grad(n, c, h, w) {}

  void zero_grad() { grad.fill(T(0)); }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void uniform_fill(Tensor<T>& t, Rng& rng, double bound) {
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

/// 2-D convolution with zero padding.
///
/// When `restrict_to` masks are supplied (stride 1, same-size output only),
/// each output pixel only reads input pixels carrying its own component
/// label, so features never cross component boundaries.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding)
      : weight(out_channels, in_channels, kernel, kernel),
        bias(1, out_channels, 1, 1),
        in_(in_channels),
        out_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(padding) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || padding < 0) {
      throw ValidationError("Conv2d: invalid geometry");
    }
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  /// Uniform init with bound gain * sqrt(6 / fan_in); zero bias.
  void init(Rng& rng, double gain = 1.0) {
    const double fan_in = static_cast<double>(in_) * k_ * k_;
    detail::uniform_fill(weight.value, rng, gain * std::sqrt(6.0 / fan_in));
    bias.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, std::span<const ComponentMask> restrict_to = {}) const {
    check_input(x, restrict_to);
    const int ho = out_size(x.h());
    const int wo = out_size(x.w());
    Tensor<T> y(x.n(), out_, ho, wo);
    const int rows = in_ * k_ * k_;
    const int cols = ho * wo;
    Eigen::Map<const detail::RowMat<T>> wmat(weight.value.data(), out_, rows);
    AlignedVector<T>& col = scratch(0);
    for (int i = 0; i < x.n(); ++i) {
      const T* src = x.sample(i).data();
      if (!pointwise()) {
        im2col(src, x.h(), x.w(), ho, wo, restrict_to.empty() ? nullptr : &restrict_to[i], col);
        src = col.data();
      }
      Eigen::Map<const detail::RowMat<T>> cmat(src, rows, cols);
      Eigen::Map<detail::RowMat<T>> ymat(y.sample(i).data(), out_, cols);
      ymat.noalias() = wmat * cmat;
      for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias.value[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& grad_out,
                     std::span<const ComponentMask> restrict_to = {}) {
    check_input(x, restrict_to);
    const int ho = out_size(x.h());
    const int wo = out_size(x.w());
    if (grad_out.n() != x.n() || grad_out.c() != out_ || grad_out.h() != ho ||
        grad_out.w() != wo) {
      throw DimensionError("Conv2d::backward: gradient shape " + grad_out.shape_string());
    }
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    const int rows = in_ * k_ * k_;
    const int cols = ho * wo;
    Eigen::Map<const detail::RowMat<T>> wmat(weight.value.data(), out_, rows);
    Eigen::Map<detail::RowMat<T>> gwmat(weight.grad.data(), out_, rows);
    AlignedVector<T>& col = scratch(0);
    AlignedVector<T>& gcol_buf = scratch(1);
    if (!pointwise()) gcol_buf.resize(static_cast<size_t>(rows) * cols);
    Eigen::Map<detail::RowMat<T>> gcol(gcol_buf.data(), rows, cols);
    for (int i = 0; i < x.n(); ++i) {
      const ComponentMask* restrict_mask = restrict_to.empty() ? nullptr : &restrict_to[i];
      const T* src = x.sample(i).data();
      if (!pointwise()) {
        im2col(src, x.h(), x.w(), ho, wo, restrict_mask, col);
        src = col.data();
      }
      Eigen::Map<const detail::RowMat<T>> cmat(src, rows, cols);
      Eigen::Map<const detail::RowMat<T>> gymat(grad_out.sample(i).data(), out_, cols);
      gwmat.noalias() += gymat * cmat.transpose();
      for (int o = 0; o < out_; ++o) bias.grad[o] += gymat.row(o).sum();
      if (pointwise()) {
        Eigen::Map<detail::RowMat<T>> gxmat(gx.sample(i).data(), rows, cols);
        gxmat.noalias() = wmat.transpose() * gymat;
      } else {
        gcol.noalias() = wmat.transpose() * gymat;
        col2im(gcol.data(), x.h(), x.w(), ho, wo, restrict_mask, gx.sample(i).data());
      }
    }
    return gx;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  // Column buffers are reused across calls; allocating and zeroing
  // multi-megabyte buffers per call dominated the step time.
  static AlignedVector<T>& scratch(int which) {
    thread_local AlignedVector<T> buffers[2];
    return buffers[which];
  }

  void check_input(const Tensor<T>& x, std::span<const ComponentMask> restrict_to) const {
    if (x.c() != in_) {
      throw DimensionError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                           std::to_string(x.c()));
    }
    if (x.h() + 2 * pad_ < k_ || x.w() + 2 * pad_ < k_) {
      throw DimensionError("Conv2d: input " + x.shape_string() + " smaller than kernel");
    }
    if (!restrict_to.empty()) {
      if (stride_ != 1 || out_size(x.h()) != x.h() || out_size(x.w()) != x.w()) {
        throw ValidationError("Conv2d: component restriction needs a same-size convolution");
      }
      if (restrict_to.size() != static_cast<size_t>(x.n())) {
        throw DimensionError("Conv2d: one restriction mask per sample required");
      }
      for (const auto& m : restrict_to) {
        if (m.height() != x.h() || m.width() != x.w()) {
          throw DimensionError("Conv2d: restriction mask resolution mismatch");
        }
      }
    }
  }

  // Output columns [lo, hi) whose input column ox * stride - pad + kx lies
  // inside [0, w).
  void valid_columns(int kx, int w, int wo, int& lo, int& hi) const {
    lo = 0;
    while (lo < wo && lo * stride_ - pad_ + kx < 0) ++lo;
    hi = wo;
    while (hi > lo && (hi - 1) * stride_ - pad_ + kx >= w) --hi;
  }

  void im2col(const T* x, int h, int w, int ho, int wo, const ComponentMask* mask,
              AlignedVector<T>& col) const {
    const size_t cols = static_cast<size_t>(ho) * wo;
    col.resize(static_cast<size_t>(in_) * k_ * k_ * cols);
    size_t r = 0;
    for (int c = 0; c < in_; ++c) {
      const T* xc = x + static_cast<size_t>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          T* row = col.data() + r * cols;
          int lo, hi;
          valid_columns(kx, w, wo, lo, hi);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* dst = row + static_cast<size_t>(oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            std::fill(dst, dst + lo, T(0));
            std::fill(dst + hi, dst + wo, T(0));
            const T* src = xc + static_cast<size_t>(iy) * w;
            if (mask) {
              for (int ox = lo; ox < hi; ++ox) {
                const int ix = ox * stride_ - pad_ + kx;
                dst[ox] = mask->label(iy, ix) == mask->label(oy, ox) ? src[ix] : T(0);
              }
            } else if (stride_ == 1) {
              std::copy(src + lo - pad_ + kx, src + hi - pad_ + kx, dst + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride_ - pad_ + kx];
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, int h, int w, int ho, int wo, const ComponentMask* mask,
              T* gx) const {
    const size_t cols = static_cast<size_t>(ho) * wo;
    size_t r = 0;
    for (int c = 0; c < in_; ++c) {
      T* gc = gx + static_cast<size_t>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++r) {
          const T* row = col + r * cols;
          int lo, hi;
          valid_columns(kx, w, wo, lo, hi);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            T* dst = gc + static_cast<size_t>(iy) * w;
            const T* src = row + static_cast<size_t>(oy) * wo;
            if (mask) {
              for (int ox = lo; ox < hi; ++ox) {
                const int ix = ox * stride_ - pad_ + kx;
                if (mask->label(iy, ix) == mask->label(oy, ox)) dst[ix] += src[ox];
              }
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * stride_ - pad_ + kx] += src[ox];
            }
          }
        }
      }
    }
  }


  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

/// Fully connected layer acting on single vectors.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features)
      : weight(1, 1, out_features, in_features),
        bias(1, out_features, 1, 1),
        in_(in_features),
        out_(out_features) {
    if (in_features < 1 || out_features < 1) throw ValidationError("Linear: invalid size");
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  void init(Rng& rng, double gain = 1.0) {
    detail::uniform_fill(weight.value, rng, gain * std::sqrt(6.0 / in_));
    bias.value.fill(T(0));
  }

  std::vector<T> forward(std::span<const T> x) const {
    if (x.size() != static_cast<size_t>(in_)) {
      throw DimensionError("Linear: expected " + std::to_string(in_) + " inputs, got " +
                           std::to_string(x.size()));
    }
    std::vector<T> y(out_);
    for (int o = 0; o < out_; ++o) {
      double acc = static_cast<double>(bias.value[o]);
      const T* wrow = weight.value.data() + static_cast<size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) acc += static_cast<double>(wrow[i]) * x[i];
      y[o] = static_cast<T>(acc);
    }
    return y;
  }

  std::vector<T> backward(std::span<const T> x, std::span<const T> grad_out) {
    if (x.size() != static_cast<size_t>(in_) || grad_out.size() != static_cast<size_t>(out_)) {
      throw DimensionError("Linear::backward: size mismatch");
    }
    std::vector<double> gx(in_, 0.0);
    for (int o = 0; o < out_; ++o) {
      const T g = grad_out[o];
      bias.grad[o] += g;
      T* gw = weight.grad.data() + static_cast<size_t>(o) * in_;
      const T* wrow = weight.value.data() + static_cast<size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) {
        gw[i] += g * x[i];
        gx[i] += static_cast<double>(wrow[i]) * g;
      }
    }
    return std::vector<T>(gx.begin(), gx.end());
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0, out_ = 0;
};

/// Multilayer perceptron with ReLU between layers (none after the last).
template <class T>
class Mlp {
 public:
  struct Trace {
    std::vector<std::vector<T>> inputs;  // input of each layer
  };

  Mlp() = default;
  explicit Mlp(std::vector<int> dims) {
    if (dims.size() < 2) throw ValidationError("Mlp: needs at least input and output size");
    for (size_t i = 0; i + 1 < dims.size(); ++i) layers_.emplace_back(dims[i], dims[i + 1]);
  }

  int in_features() const { return layers_.front().in_features(); }
  int out_features() const { return layers_.back().out_features(); }
  size_t depth() const { return layers_.size(); }
  Linear<T>& layer(size_t i) { return layers_[i]; }
  const Linear<T>& layer(size_t i) const { return layers_[i]; }

  void init(Rng& rng) {
    for (auto& l : layers_) l.init(rng);
  }

  std::vector<T> forward(std::span<const T> x, Trace* trace = nullptr) const {
    std::vector<T> h(x.begin(), x.end());
    if (trace) trace->inputs.clear();
    for (size_t i = 0; i < layers_.size(); ++i) {
      if (trace) trace->inputs.push_back(h);
      h = layers_[i].forward(h);
      if (i + 1 < layers_.size()) {
        for (auto& v : h) v = v > T(0) ? v : T(0);
      }
    }
    return h;
  }

  std::vector<T> backward(const Trace& trace, std::span<const T> grad_out) {
    std::vector<T> g(grad_out.begin(), grad_out.end());
    for (size_t i = layers_.size(); i-- > 0;) {
      if (i + 1 < layers_.size()) {
        // relu: the next layer's input is this layer's activated output
        const auto& act = trace.inputs[i + 1];
        for (size_t j = 0; j < g.size(); ++j) {
          if (!(act[j] > T(0))) g[j] = T(0);
        }
      }
      g = layers_[i].backward(trace.inputs[i], g);
    }
    return g;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].visit(prefix + ".fc" + std::to_string(i), f);
  }

 private:
  std::vector<Linear<T>> layers_;
};

// ---- parameter-free ops ---------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
  return y;
}

/// Gradient of relu given its output.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> grad) {
  for (size_t i = 0; i < grad.size(); ++i) {
    if (!(y[i] > T(0))) grad[i] = T(0);
  }
  return grad;
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = v > T(0) ? v : v * slope;
  return y;
}

/// Gradient of leaky relu given its output (sign is preserved for slope > 0).
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& y, Tensor<T> grad, T slope) {
  for (size_t i = 0; i < grad.size(); ++i) {
    if (!(y[i] > T(0))) grad[i] *= slope;
  }
  return grad;
}

template <class T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.storage()) v = std::tanh(v);
  return y;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, Tensor<T> grad) {
  for (size_t i = 0; i < grad.size(); ++i) grad[i] *= T(1) - y[i] * y[i];
  return grad;
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx) y(i, c, yy, xx) = x(i, c, yy / 2, xx / 2);
  return y;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad) {
  Tensor<T> gx(grad.n(), grad.c(), grad.h() / 2, grad.w() / 2);
  for (int i = 0; i < grad.n(); ++i)
    for (int c = 0; c < grad.c(); ++c)
      for (int yy = 0; yy < grad.h(); ++yy)
        for (int xx = 0; xx < grad.w(); ++xx) gx(i, c, yy / 2, xx / 2) += grad(i, c, yy, xx);
  return gx;
}

/// 2x2 average pooling with stride 2 (H and W must be even).
template <class T>
Tensor<T> avgpool2x(const Tensor<T>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw DimensionError("avgpool2x: odd spatial size " + x.shape_string());
  }
  Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  for (int i = 0; i < x.n(); ++i)
    for (int c = 0; c < x.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx)
          y(i, c, yy, xx) = (x(i, c, 2 * yy, 2 * xx) + x(i, c, 2 * yy, 2 * xx + 1) +
                             x(i, c, 2 * yy + 1, 2 * xx) + x(i, c, 2 * yy + 1, 2 * xx + 1)) /
                            T(4);
  return y;
}

template <class T>
Tensor<T> avgpool2x_backward(const Tensor<T>& grad) {
  Tensor<T> gx(grad.n(), grad.c(), grad.h() * 2, grad.w() * 2);
  for (int i = 0; i < gx.n(); ++i)
    for (int c = 0; c < gx.c(); ++c)
      for (int yy = 0; yy < gx.h(); ++yy)
        for (int xx = 0; xx < gx.w(); ++xx) gx(i, c, yy, xx) = grad(i, c, yy / 2, xx / 2) / T(4);
  return gx;
}

template <class T>
struct InstanceNormTrace {
  std::vector<CoAdaINState<T>> states;
};

/// Instance normalization over every (sample, channel) plane, no affine.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, InstanceNormTrace<T>* trace = nullptr) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  if (trace) trace->states.assign(x.n(), {});
  for (int i = 0; i < x.n(); ++i) {
    instance_norm_into<T>(x.sample(i), x.c(), x.h(), x.w(), y.sample(i),
                          trace ? &trace->states[i] : nullptr);
  }
  return y;
}

template <class T>
Tensor<T> instance_norm_backward(const Tensor<T>& grad, InstanceNormTrace<T>& trace) {
  if (trace.states.size() != static_cast<size_t>(grad.n())) {
    throw ValidationError("instance_norm_backward: trace does not match batch");
  }
  Tensor<T> gx(grad.n(), grad.c(), grad.h(), grad.w());
  for (int i = 0; i < grad.n(); ++i) {
    auto g = coadain_backward<T>(grad.sample(i), trace.states[i]);
    std::copy(g.grad_x.begin(), g.grad_x.end(), gx.sample(i).begin());
  }
  return gx;
}

}  // namespace coadain

#pragma once

// Encoders, generators and discriminators of the two-domain translation
// model. Every network has a const forward pass that optionally records a
// Trace, and a backward pass that consumes that Trace, accumulates
// parameter gradients and returns the gradient for its input.

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coadain/config.hpp"
#include "coadain/core.hpp"
#include "coadain/layers.hpp"
#include "coadain/mask.hpp"
#include "coadain/rng.hpp"
#include "coadain/style.hpp"

namespace coadain {

inline constexpr int kUpsampleKernel = 5;
inline constexpr double kLeakySlope = 0.2;

namespace detail {

inline void check_masks(std::span<const ComponentMask> masks, int n, int h, int w, int k,
                        const char* what) {
  if (masks.size() != static_cast<size_t>(n)) {
    throw DimensionError(std::string(what) + ": " + std::to_string(masks.size()) +
                         " masks for a batch of " + std::to_string(n));
  }
  for (const auto& m : masks) {
    if (m.height() != h || m.width() != w) {
      throw DimensionError(std::string(what) + ": mask " + std::to_string(m.height()) + "x" +
                           std::to_string(m.width()) + " does not match image " +
                           std::to_string(h) + "x" + std::to_string(w));
    }
    if (m.num_components() != k) {
      throw ValidationError(std::string(what) + ": mask has " +
                            std::to_string(m.num_components()) + " components, model expects " +
                            std::to_string(k));
    }
  }
}

inline std::vector<ComponentMask> downsample_all(std::span<const ComponentMask> masks, int h,
                                                 int w) {
  std::vector<ComponentMask> out;
  out.reserve(masks.size());
  for (const auto& m : masks) out.push_back(downsample_mask(m, h, w));
  return out;
}

template <class T>
Tensor<T> mask_multiply(const Tensor<T>& x, std::span<const ComponentMask> masks, int component) {
  Tensor<T> y = x;
  const size_t plane = x.plane_size();
  for (int i = 0; i < x.n(); ++i) {
    auto labels = masks[i].labels();
    auto s = y.sample(i);
    for (int c = 0; c < x.c(); ++c) {
      for (size_t p = 0; p < plane; ++p) {
        if (labels[p] != component) s[c * plane + p] = T(0);
      }
    }
  }
  return y;
}

inline uint64_t net_seed(uint64_t root, const std::string& name) {
  return derive_seed(root, hash_tag(name));
}

}  // namespace detail

/// Content encoder: (image ⊕ one-hot mask) -> stem conv, strided
/// downsampling convs, residual blocks; instance norm + ReLU throughout.
template <class T>
class ContentEncoder {
 public:
  struct StageTrace {
    Tensor<T> input;
    InstanceNormTrace<T> norm;
    Tensor<T> output;
  };
  struct BlockTrace {
    Tensor<T> input;
    InstanceNormTrace<T> norm1;
    Tensor<T> hidden;
    InstanceNormTrace<T> norm2;
  };
  struct Trace {
    std::vector<StageTrace> stages;
    std::vector<BlockTrace> blocks;
  };

  ContentEncoder() = default;
  ContentEncoder(const ModelConfig& cfg, int image_channels)
      : image_channels_(image_channels), num_components_(cfg.num_components) {
    stages_.emplace_back(image_channels + cfg.num_components, cfg.stage_channels(0), 7, 1, 3);
    for (int j = 1; j <= cfg.num_downsamples; ++j) {
      stages_.emplace_back(cfg.stage_channels(j - 1), cfg.stage_channels(j), 4, 2, 1);
    }
    const int c = cfg.content_channels;
    for (int r = 0; r < cfg.num_res_blocks; ++r) {
      blocks_.push_back({Conv2d<T>(c, c, 3, 1, 1), Conv2d<T>(c, c, 3, 1, 1)});
    }
  }

  int image_channels() const { return image_channels_; }

  void init(Rng& rng) {
    for (auto& s : stages_) s.init(rng);
    for (auto& b : blocks_) {
      b[0].init(rng);
      b[1].init(rng);
    }
  }

  Tensor<T> forward(const Tensor<T>& image, std::span<const ComponentMask> masks,
                    Trace* trace = nullptr) const {
    if (image.c() != image_channels_) {
      throw ValidationError("encode_content: image has " + std::to_string(image.c()) +
                            " channels, encoder expects " + std::to_string(image_channels_));
    }
    detail::check_masks(masks, image.n(), image.h(), image.w(), num_components_,
                        "encode_content");
    if (trace) {
      trace->stages.assign(stages_.size(), {});
      trace->blocks.assign(blocks_.size(), {});
    }
    Tensor<T> x = concat_channels(image, one_hot_batch<T>(masks));
    for (size_t s = 0; s < stages_.size(); ++s) {
      auto* st = trace ? &trace->stages[s] : nullptr;
      Tensor<T> y = relu(instance_norm(stages_[s].forward(x), st ? &st->norm : nullptr));
      if (st) {
        st->input = std::move(x);
        st->output = y;
      }
      x = std::move(y);
    }
    for (size_t b = 0; b < blocks_.size(); ++b) {
      auto* bt = trace ? &trace->blocks[b] : nullptr;
      Tensor<T> h = relu(instance_norm(blocks_[b][0].forward(x), bt ? &bt->norm1 : nullptr));
      Tensor<T> y = instance_norm(blocks_[b][1].forward(h), bt ? &bt->norm2 : nullptr);
      y += x;
      if (bt) {
        bt->input = std::move(x);
        bt->hidden = std::move(h);
      }
      x = std::move(y);
    }
    return x;
  }

  /// Returns the gradient with respect to the image (mask channels dropped).
  Tensor<T> backward(Trace& trace, Tensor<T> grad) {
    for (size_t b = blocks_.size(); b-- > 0;) {
      auto& bt = trace.blocks[b];
      Tensor<T> g = instance_norm_backward(grad, bt.norm2);
      g = blocks_[b][1].backward(bt.hidden, g);
      g = instance_norm_backward(relu_backward(bt.hidden, std::move(g)), bt.norm1);
      grad += blocks_[b][0].backward(bt.input, g);
    }
    for (size_t s = stages_.size(); s-- > 0;) {
      auto& st = trace.stages[s];
      Tensor<T> g = instance_norm_backward(relu_backward(st.output, std::move(grad)), st.norm);
      grad = stages_[s].backward(st.input, g);
    }
    return leading_channels(grad, image_channels_);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t s = 0; s < stages_.size(); ++s) stages_[s].visit(prefix + ".stage" + std::to_string(s), f);
    for (size_t b = 0; b < blocks_.size(); ++b) {
      blocks_[b][0].visit(prefix + ".res" + std::to_string(b) + ".conv0", f);
      blocks_[b][1].visit(prefix + ".res" + std::to_string(b) + ".conv1", f);
    }
  }

 private:
  int image_channels_ = 0;
  int num_components_ = 0;
  std::vector<Conv2d<T>> stages_;
  std::vector<std::array<Conv2d<T>, 2>> blocks_;
};

/// Style encoder for one component. The image is zeroed outside the
/// component before the conv stack and the final features are averaged with
/// weights equal to the component's area coverage of each feature cell, so
/// the code only depends on pixels inside the component.
template <class T>
class StyleEncoder {
 public:
  struct Trace {
    std::vector<Tensor<T>> inputs;   // input of each conv
    std::vector<Tensor<T>> outputs;  // relu output of each conv
    std::vector<std::vector<T>> weights;
    std::vector<T> weight_sums;
    std::vector<std::vector<T>> pooled;
    std::vector<ComponentMask> masks;
  };

  StyleEncoder() = default;
  StyleEncoder(const ModelConfig& cfg, int image_channels, int component)
      : image_channels_(image_channels),
        num_components_(cfg.num_components),
        component_(component),
        style_dim_(cfg.style_dim),
        factor_(1 << cfg.num_downsamples) {
    convs_.emplace_back(image_channels, cfg.stage_channels(0), 7, 1, 3);
    for (int j = 1; j <= cfg.num_downsamples; ++j) {
      convs_.emplace_back(cfg.stage_channels(j - 1), cfg.stage_channels(j), 4, 2, 1);
    }
    proj_ = Linear<T>(cfg.content_channels, cfg.style_dim);
  }

  int component() const { return component_; }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init(rng);
    proj_.init(rng);
  }

  std::vector<StyleCode<T>> forward(const Tensor<T>& image, std::span<const ComponentMask> masks,
                                    Trace* trace = nullptr) const {
    if (image.c() != image_channels_) {
      throw ValidationError("encode_style: image has " + std::to_string(image.c()) +
                            " channels, encoder expects " + std::to_string(image_channels_));
    }
    detail::check_masks(masks, image.n(), image.h(), image.w(), num_components_, "encode_style");
    if (trace) {
      trace->inputs.clear();
      trace->outputs.clear();
      trace->masks.assign(masks.begin(), masks.end());
      trace->weights.assign(image.n(), {});
      trace->weight_sums.assign(image.n(), T(0));
      trace->pooled.assign(image.n(), {});
    }
    Tensor<T> x = detail::mask_multiply(image, masks, component_);
    for (const auto& conv : convs_) {
      Tensor<T> y = relu(conv.forward(x));
      if (trace) {
        trace->inputs.push_back(std::move(x));
        trace->outputs.push_back(y);
      }
      x = std::move(y);
    }
    std::vector<StyleCode<T>> codes;
    const size_t plane = x.plane_size();
    for (int i = 0; i < x.n(); ++i) {
      if (!masks[i].present(component_)) {
        codes.push_back(StyleCode<T>::absent(component_, style_dim_));
        continue;
      }
      std::vector<T> w = area_coverage<T>(masks[i], component_, factor_);
      double wsum = 0.0;
      for (T v : w) wsum += v;
      std::vector<T> pooled(x.c(), T(0));
      auto s = x.sample(i);
      for (int c = 0; c < x.c(); ++c) {
        double acc = 0.0;
        for (size_t p = 0; p < plane; ++p) acc += static_cast<double>(w[p]) * s[c * plane + p];
        pooled[c] = static_cast<T>(acc / wsum);
      }
      codes.push_back(StyleCode<T>{proj_.forward(pooled), component_, true});
      if (trace) {
        trace->weights[i] = std::move(w);
        trace->weight_sums[i] = static_cast<T>(wsum);
        trace->pooled[i] = std::move(pooled);
      }
    }
    return codes;
  }

  /// grad_codes[i] may be empty for samples whose code is absent or unused.
  Tensor<T> backward(Trace& trace, const std::vector<std::vector<T>>& grad_codes) {
    const Tensor<T>& last = trace.outputs.back();
    Tensor<T> g(last.n(), last.c(), last.h(), last.w());
    const size_t plane = last.plane_size();
    for (int i = 0; i < last.n(); ++i) {
      if (grad_codes[i].empty() || trace.pooled[i].empty()) continue;
      std::vector<T> gp = proj_.backward(trace.pooled[i], grad_codes[i]);
      auto gs = g.sample(i);
      const auto& w = trace.weights[i];
      for (int c = 0; c < last.c(); ++c) {
        for (size_t p = 0; p < plane; ++p) {
          gs[c * plane + p] = gp[c] * w[p] / trace.weight_sums[i];
        }
      }
    }
    for (size_t l = convs_.size(); l-- > 0;) {
      g = convs_[l].backward(trace.inputs[l], relu_backward(trace.outputs[l], std::move(g)));
    }
    return detail::mask_multiply(g, std::span<const ComponentMask>(trace.masks), component_);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t l = 0; l < convs_.size(); ++l) convs_[l].visit(prefix + ".conv" + std::to_string(l), f);
    proj_.visit(prefix + ".proj", f);
  }

 private:
  int image_channels_ = 0;
  int num_components_ = 0;
  int component_ = 0;
  int style_dim_ = 0;
  int factor_ = 1;
  std::vector<Conv2d<T>> convs_;
  Linear<T> proj_;
};

/// Generator: (content ⊕ feature-resolution mask) -> projection conv,
/// residual blocks normalized by CoAdaIN, nearest-upsample + conv stages,
/// tanh output. The convolutions inside the residual blocks are restricted
/// to their own component, so a component's style only ever reaches that
/// component's pixels before upsampling.
template <class T>
class Generator {
 public:
  using CoAdaINHook = std::function<void(int layer, const Tensor<T>& output)>;

  struct BlockTrace {
    Tensor<T> input;
    std::vector<CoAdaINState<T>> norm1;
    Tensor<T> hidden;
    std::vector<CoAdaINState<T>> norm2;
  };
  struct UpTrace {
    Tensor<T> input;
    Tensor<T> output;
  };
  struct Trace {
    std::vector<ComponentMask> feature_masks;
    Tensor<T> proj_input;
    Tensor<T> proj_output;
    std::vector<BlockTrace> blocks;
    std::vector<UpTrace> ups;
    Tensor<T> final_input;
    Tensor<T> output;
    // [sample][layer][component]
    std::vector<std::vector<std::vector<typename Mlp<T>::Trace>>> heads;
    std::vector<std::vector<std::vector<char>>> head_used;
  };
  struct Grads {
    Tensor<T> content;
    std::vector<std::vector<std::vector<T>>> styles;  // [sample][component][dim]
  };

  Generator() = default;
  Generator(const ModelConfig& cfg, int out_channels)
      : num_components_(cfg.num_components),
        style_dim_(cfg.style_dim),
        content_channels_(cfg.content_channels),
        out_channels_(out_channels) {
    const int c = cfg.content_channels;
    proj_ = Conv2d<T>(c + cfg.num_components, c, 3, 1, 1);
    for (int r = 0; r < cfg.num_res_blocks; ++r) {
      blocks_.push_back({Conv2d<T>(c, c, 3, 1, 1), Conv2d<T>(c, c, 3, 1, 1)});
    }
    const int pad = kUpsampleKernel / 2;
    for (int j = cfg.num_downsamples; j >= 1; --j) {
      ups_.emplace_back(cfg.stage_channels(j), cfg.stage_channels(j - 1), kUpsampleKernel, 1, pad);
    }
    final_ = Conv2d<T>(cfg.stage_channels(0), out_channels, 7, 1, 3);
    const int layers = 2 * cfg.num_res_blocks;
    heads_.resize(layers);
    for (int l = 0; l < layers; ++l) {
      for (int k = 0; k < cfg.num_components; ++k) {
        heads_[l].emplace_back(k, cfg.style_dim, c, std::vector<int>{cfg.mlp_hidden});
      }
    }
  }

  int num_coadain_layers() const { return static_cast<int>(heads_.size()); }
  int out_channels() const { return out_channels_; }
  ParamHead<T>& head(int layer, int component) { return heads_[layer][component]; }

  void init(Rng& rng) {
    proj_.init(rng);
    for (auto& b : blocks_) {
      b[0].init(rng);
      b[1].init(rng);
    }
    for (auto& u : ups_) u.init(rng);
    final_.init(rng);
    for (auto& layer : heads_)
      for (auto& h : layer) h.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& content, std::span<const ComponentMask> masks,
                    std::span<const StyleCodeSet<T>> styles, Trace* trace = nullptr,
                    const CoAdaINHook& hook = {}) const {
    const int n = content.n();
    if (content.c() != content_channels_) {
      throw DimensionError("decode: content has " + std::to_string(content.c()) +
                           " channels, expected " + std::to_string(content_channels_));
    }
    const int scale = 1 << ups_.size();
    detail::check_masks(masks, n, content.h() * scale, content.w() * scale, num_components_,
                        "decode");
    if (styles.size() != static_cast<size_t>(n)) {
      throw DimensionError("decode: " + std::to_string(styles.size()) +
                           " style sets for a batch of " + std::to_string(n));
    }
    for (int i = 0; i < n; ++i) {
      styles[i].validate(num_components_, style_dim_);
      for (int k = 0; k < num_components_; ++k) {
        if (!styles[i][k].present && masks[i].present(k)) {
          throw ValidationError("decode: style code for component " + std::to_string(k) +
                                " is absent but the component is present in the mask");
        }
      }
    }

    std::vector<ComponentMask> fmasks = detail::downsample_all(masks, content.h(), content.w());
    const int layers = num_coadain_layers();
    // per sample, per layer CoAdaIN params
    std::vector<std::vector<CoAdaINParams<T>>> params(n);
    if (trace) {
      trace->heads.assign(n, std::vector<std::vector<typename Mlp<T>::Trace>>(
                                 layers, std::vector<typename Mlp<T>::Trace>(num_components_)));
      trace->head_used.assign(n, std::vector<std::vector<char>>(
                                     layers, std::vector<char>(num_components_, 0)));
    }
    for (int i = 0; i < n; ++i) {
      params[i].assign(layers, CoAdaINParams<T>(num_components_, content_channels_, T(0), T(0)));
      for (int l = 0; l < layers; ++l) {
        for (int k = 0; k < num_components_; ++k) {
          if (!styles[i][k].present) continue;
          auto* ht = trace ? &trace->heads[i][l][k] : nullptr;
          auto out = style_to_params(styles[i][k], heads_[l][k], ht);
          if (trace) trace->head_used[i][l][k] = 1;
          std::copy(out.target_mean.begin(), out.target_mean.end(),
                    params[i][l].target_mean.begin() + static_cast<size_t>(k) * content_channels_);
          std::copy(out.target_std.begin(), out.target_std.end(),
                    params[i][l].target_std.begin() + static_cast<size_t>(k) * content_channels_);
        }
      }
    }

    Tensor<T> in = concat_channels(content, one_hot_batch<T>(fmasks));
    Tensor<T> x = relu(proj_.forward(in));
    if (trace) {
      trace->proj_input = std::move(in);
      trace->proj_output = x;
      trace->blocks.assign(blocks_.size(), {});
      trace->ups.assign(ups_.size(), {});
    }

    auto apply_coadain = [&](const Tensor<T>& z, int layer, std::vector<CoAdaINState<T>>* states) {
      Tensor<T> out(z.n(), z.c(), z.h(), z.w());
      if (states) states->assign(z.n(), {});
      for (int i = 0; i < z.n(); ++i) {
        coadain_into<T>(z.sample(i), z.c(), fmasks[i], params[i][layer], out.sample(i),
                        states ? &(*states)[i] : nullptr);
      }
      if (hook) hook(layer, out);
      return out;
    };

    for (size_t b = 0; b < blocks_.size(); ++b) {
      auto* bt = trace ? &trace->blocks[b] : nullptr;
      Tensor<T> h = relu(apply_coadain(blocks_[b][0].forward(x, fmasks), static_cast<int>(2 * b),
                                       bt ? &bt->norm1 : nullptr));
      Tensor<T> y = apply_coadain(blocks_[b][1].forward(h, fmasks), static_cast<int>(2 * b + 1),
                                  bt ? &bt->norm2 : nullptr);
      y += x;
      if (bt) {
        bt->input = std::move(x);
        bt->hidden = std::move(h);
      }
      x = std::move(y);
    }
    for (size_t u = 0; u < ups_.size(); ++u) {
      Tensor<T> up = upsample2x(x);
      Tensor<T> y = relu(ups_[u].forward(up));
      if (trace) {
        trace->ups[u].input = std::move(up);
        trace->ups[u].output = y;
      }
      x = std::move(y);
    }
    Tensor<T> out = tanh_act(final_.forward(x));
    if (trace) {
      trace->final_input = std::move(x);
      trace->output = out;
      trace->feature_masks = std::move(fmasks);
    }
    return out;
  }

  Grads backward(Trace& trace, const Tensor<T>& grad_image) {
    const int n = grad_image.n();
    const int layers = num_coadain_layers();
    // [sample][layer] gradients of the CoAdaIN targets, mean then std
    std::vector<std::vector<std::pair<std::vector<T>, std::vector<T>>>> gparams(
        n, std::vector<std::pair<std::vector<T>, std::vector<T>>>(layers));

    Tensor<T> g = tanh_backward(trace.output, grad_image);
    g = final_.backward(trace.final_input, g);
    for (size_t u = ups_.size(); u-- > 0;) {
      g = relu_backward(trace.ups[u].output, std::move(g));
      g = upsample2x_backward(ups_[u].backward(trace.ups[u].input, g));
    }
    const std::span<const ComponentMask> fmasks(trace.feature_masks);
    auto coadain_back = [&](const Tensor<T>& grad, int layer, std::vector<CoAdaINState<T>>& states) {
      Tensor<T> gx(grad.n(), grad.c(), grad.h(), grad.w());
      for (int i = 0; i < grad.n(); ++i) {
        auto r = coadain_backward<T>(grad.sample(i), states[i]);
        std::copy(r.grad_x.begin(), r.grad_x.end(), gx.sample(i).begin());
        gparams[i][layer] = {std::move(r.grad_target_mean), std::move(r.grad_target_std)};
      }
      return gx;
    };
    for (size_t b = blocks_.size(); b-- > 0;) {
      auto& bt = trace.blocks[b];
      Tensor<T> gz = coadain_back(g, static_cast<int>(2 * b + 1), bt.norm2);
      Tensor<T> gh = blocks_[b][1].backward(bt.hidden, gz, fmasks);
      gz = coadain_back(relu_backward(bt.hidden, std::move(gh)), static_cast<int>(2 * b), bt.norm1);
      g += blocks_[b][0].backward(bt.input, gz, fmasks);
    }
    g = relu_backward(trace.proj_output, std::move(g));
    g = proj_.backward(trace.proj_input, g);

    Grads out;
    out.content = leading_channels(g, content_channels_);
    out.styles.assign(n, std::vector<std::vector<T>>(num_components_, std::vector<T>(style_dim_, T(0))));
    const size_t c = static_cast<size_t>(content_channels_);
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < layers; ++l) {
        for (int k = 0; k < num_components_; ++k) {
          if (!trace.head_used[i][l][k]) continue;
          std::vector<T> gout(2 * c);
          const auto& [gm, gs] = gparams[i][l];
          std::copy(gm.begin() + k * c, gm.begin() + (k + 1) * c, gout.begin());
          std::copy(gs.begin() + k * c, gs.begin() + (k + 1) * c, gout.begin() + c);
          auto gstyle = heads_[l][k].mlp().backward(trace.heads[i][l][k], gout);
          for (int d = 0; d < style_dim_; ++d) out.styles[i][k][d] += gstyle[d];
        }
      }
    }
    return out;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    proj_.visit(prefix + ".proj", f);
    for (size_t b = 0; b < blocks_.size(); ++b) {
      blocks_[b][0].visit(prefix + ".res" + std::to_string(b) + ".conv0", f);
      blocks_[b][1].visit(prefix + ".res" + std::to_string(b) + ".conv1", f);
    }
    for (size_t u = 0; u < ups_.size(); ++u) ups_[u].visit(prefix + ".up" + std::to_string(u), f);
    final_.visit(prefix + ".final", f);
    for (size_t l = 0; l < heads_.size(); ++l) {
      for (size_t k = 0; k < heads_[l].size(); ++k) {
        heads_[l][k].visit(prefix + ".head" + std::to_string(l) + "_" + std::to_string(k), f);
      }
    }
  }

 private:
  int num_components_ = 0;
  int style_dim_ = 0;
  int content_channels_ = 0;
  int out_channels_ = 0;
  Conv2d<T> proj_;
  std::vector<std::array<Conv2d<T>, 2>> blocks_;
  std::vector<Conv2d<T>> ups_;
  Conv2d<T> final_;
  std::vector<std::vector<ParamHead<T>>> heads_;
};

/// Multi-scale patch discriminator: per scale three stride-2 4x4 convs with
/// leaky ReLU and a 1x1 logit conv; the input is 2x average-pooled between
/// scales, giving logit maps at strides 8, 16, 32, ...
template <class T>
class Discriminator {
 public:
  struct ScaleTrace {
    Tensor<T> input;
    std::array<Tensor<T>, 3> acts;
  };
  struct Trace {
    std::vector<ScaleTrace> scales;
  };

  Discriminator() = default;
  Discriminator(const ModelConfig& cfg, int image_channels) : image_channels_(image_channels) {
    const int f = cfg.discriminator_filters;
    for (int s = 0; s < cfg.discriminator_scales; ++s) {
      scales_.push_back({Conv2d<T>(image_channels, f, 4, 2, 1), Conv2d<T>(f, 2 * f, 4, 2, 1),
                         Conv2d<T>(2 * f, 4 * f, 4, 2, 1), Conv2d<T>(4 * f, 1, 1, 1, 0)});
    }
  }

  int num_scales() const { return static_cast<int>(scales_.size()); }

  void init(Rng& rng) {
    for (auto& s : scales_)
      for (auto& c : s) c.init(rng);
  }

  std::vector<Tensor<T>> forward(const Tensor<T>& image, Trace* trace = nullptr) const {
    if (image.c() != image_channels_) {
      throw ValidationError("discriminate: image has " + std::to_string(image.c()) +
                            " channels, discriminator expects " + std::to_string(image_channels_));
    }
    const T slope = static_cast<T>(kLeakySlope);
    std::vector<Tensor<T>> logits;
    if (trace) trace->scales.assign(scales_.size(), {});
    Tensor<T> x = image;
    for (size_t s = 0; s < scales_.size(); ++s) {
      if (s > 0) x = avgpool2x(x);
      Tensor<T> h = x;
      for (int l = 0; l < 3; ++l) {
        h = leaky_relu(scales_[s][l].forward(h), slope);
        if (trace) trace->scales[s].acts[l] = h;
      }
      logits.push_back(scales_[s][3].forward(h));
      if (trace) trace->scales[s].input = x;
    }
    return logits;
  }

  Tensor<T> backward(Trace& trace, std::span<const Tensor<T>> grad_logits) {
    if (grad_logits.size() != scales_.size()) {
      throw DimensionError("Discriminator::backward: one gradient per scale required");
    }
    const T slope = static_cast<T>(kLeakySlope);
    Tensor<T> carry;  // gradient arriving at scale s's input from coarser scales
    for (size_t s = scales_.size(); s-- > 0;) {
      auto& st = trace.scales[s];
      Tensor<T> g = scales_[s][3].backward(st.acts[2], grad_logits[s]);
      for (int l = 2; l >= 0; --l) {
        g = leaky_relu_backward(st.acts[l], std::move(g), slope);
        const Tensor<T>& in = l == 0 ? st.input : st.acts[l - 1];
        g = scales_[s][l].backward(in, g);
      }
      if (!carry.empty()) g += carry;
      carry = s > 0 ? avgpool2x_backward(g) : std::move(g);
    }
    return carry;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t s = 0; s < scales_.size(); ++s) {
      for (size_t l = 0; l < 4; ++l) {
        scales_[s][l].visit(prefix + ".scale" + std::to_string(s) + ".conv" + std::to_string(l), f);
      }
    }
  }

 private:
  int image_channels_ = 0;
  std::vector<std::array<Conv2d<T>, 4>> scales_;
};

/// All networks of one domain.
template <class T>
struct DomainNets {
  ContentEncoder<T> content;
  std::vector<StyleEncoder<T>> style;
  Generator<T> generator;
  Discriminator<T> discriminator;
};

/// The two-domain model: domain a (rgb) and domain b (thermal), each with a
/// content encoder, a bank of K style encoders, a generator and a
/// discriminator.
template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (Domain d : {Domain::rgb, Domain::thermal}) {
      auto& n = nets(d);
      const int ch = cfg_.channels(d);
      n.content = ContentEncoder<T>(cfg_, ch);
      for (int k = 0; k < cfg_.num_components; ++k) n.style.emplace_back(cfg_, ch, k);
      n.generator = Generator<T>(cfg_, ch);
      n.discriminator = Discriminator<T>(cfg_, ch);
    }
    initialize(cfg_.seed);
  }

  const ModelConfig& config() const { return cfg_; }
  DomainNets<T>& nets(Domain d) { return domains_[static_cast<int>(d)]; }
  const DomainNets<T>& nets(Domain d) const { return domains_[static_cast<int>(d)]; }

  void initialize(uint64_t seed) {
    for (Domain d : {Domain::rgb, Domain::thermal}) {
      const std::string p = domain_name(d);
      auto& n = nets(d);
      Rng r_content(detail::net_seed(seed, p + ".content"));
      n.content.init(r_content);
      for (int k = 0; k < cfg_.num_components; ++k) {
        Rng r(detail::net_seed(seed, p + ".style" + std::to_string(k)));
        n.style[k].init(r);
      }
      Rng r_gen(detail::net_seed(seed, p + ".gen"));
      n.generator.init(r_gen);
      Rng r_dis(detail::net_seed(seed, p + ".dis"));
      n.discriminator.init(r_dis);
    }
  }

  /// Encoders and generators of both domains.
  template <class F>
  void visit_generator(F&& f) {
    for (Domain d : {Domain::rgb, Domain::thermal}) {
      const std::string p = domain_name(d);
      auto& n = nets(d);
      n.content.visit(p + ".content", f);
      for (int k = 0; k < cfg_.num_components; ++k) n.style[k].visit(p + ".style" + std::to_string(k), f);
      n.generator.visit(p + ".gen", f);
    }
  }

  template <class F>
  void visit_discriminator(F&& f) {
    for (Domain d : {Domain::rgb, Domain::thermal}) {
      nets(d).discriminator.visit(std::string(domain_name(d)) + ".dis", f);
    }
  }

  template <class F>
  void visit_all(F&& f) {
    visit_generator(f);
    visit_discriminator(f);
  }

  // ---- inference-only conveniences (no traces) ------------------------------

  Tensor<T> encode_content(const Tensor<T>& image, std::span<const ComponentMask> masks,
                           Domain d) const {
    return nets(d).content.forward(image, masks);
  }

  std::vector<StyleCode<T>> encode_style(const Tensor<T>& image,
                                         std::span<const ComponentMask> masks, int component,
                                         Domain d) const {
    if (component < 0 || component >= cfg_.num_components) {
      throw ValidationError("encode_style: component " + std::to_string(component) +
                            " outside [0, " + std::to_string(cfg_.num_components) + ")");
    }
    return nets(d).style[component].forward(image, masks);
  }

  std::vector<StyleCodeSet<T>> encode_styles(const Tensor<T>& image,
                                             std::span<const ComponentMask> masks,
                                             Domain d) const {
    std::vector<StyleCodeSet<T>> sets(image.n());
    for (int k = 0; k < cfg_.num_components; ++k) {
      auto codes = encode_style(image, masks, k, d);
      for (int i = 0; i < image.n(); ++i) sets[i].codes.push_back(std::move(codes[i]));
    }
    return sets;
  }

  Tensor<T> decode(const Tensor<T>& content, std::span<const ComponentMask> masks,
                   std::span<const StyleCodeSet<T>> styles, Domain d,
                   const typename Generator<T>::CoAdaINHook& hook = {}) const {
    return nets(d).generator.forward(content, masks, styles, nullptr, hook);
  }

  std::vector<Tensor<T>> discriminate(const Tensor<T>& image, Domain d) const {
    return nets(d).discriminator.forward(image);
  }

  /// Cross-domain translation from `from` into the other domain.
  Tensor<T> translate(const Tensor<T>& image, std::span<const ComponentMask> masks,
                      std::span<const StyleCodeSet<T>> target_styles, Domain from = Domain::rgb,
                      const typename Generator<T>::CoAdaINHook& hook = {}) const {
    return decode(encode_content(image, masks, from), masks, target_styles, other(from), hook);
  }

  /// Within-domain reconstruction from the image's own content and styles.
  Tensor<T> reconstruct(const Tensor<T>& image, std::span<const ComponentMask> masks,
                        Domain d) const {
    auto styles = encode_styles(image, masks, d);
    return decode(encode_content(image, masks, d), masks, styles, d);
  }

 private:
  ModelConfig cfg_;
  std::array<DomainNets<T>, 2> domains_;
};

}  // namespace coadain

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coadain/errors.hpp"
#include "coadain/layers.hpp"
#include "coadain/rng.hpp"

namespace coadain {

/// Style vector of one component. `present == false` marks a component the
/// encoder could not see (no pixels in its region).
template <class T>
struct StyleCode {
  std::vector<T> values;
  int component_index = 0;
  bool present = true;

  static StyleCode absent(int component, int dim) {
    return StyleCode{std::vector<T>(dim, T(0)), component, false};
  }
};

/// One style code per component, indexed by component.
template <class T>
struct StyleCodeSet {
  std::vector<StyleCode<T>> codes;

  int size() const { return static_cast<int>(codes.size()); }
  const StyleCode<T>& operator[](int k) const { return codes[k]; }
  StyleCode<T>& operator[](int k) { return codes[k]; }

  void validate(int num_components, int style_dim) const {
    if (size() != num_components) {
      throw ValidationError("style set has " + std::to_string(size()) + " codes, expected " +
                            std::to_string(num_components));
    }
    for (int k = 0; k < size(); ++k) {
      if (codes[k].component_index != k) {
        throw ValidationError("style set: code " + std::to_string(k) + " is tagged component " +
                              std::to_string(codes[k].component_index));
      }
      if (codes[k].values.size() != static_cast<size_t>(style_dim)) {
        throw DimensionError("style set: code " + std::to_string(k) + " has dimension " +
                             std::to_string(codes[k].values.size()));
      }
      for (T v : codes[k].values) {
        if (!std::isfinite(v)) throw NumericError("style set: non-finite code entry");
      }
    }
  }
};

template <class T>
StyleCode<T> sample_style_code(Rng& rng, int component, int dim) {
  StyleCode<T> s{std::vector<T>(dim), component, true};
  for (auto& v : s.values) v = static_cast<T>(rng.normal());
  return s;
}

/// Draws every component's code from N(0, I).
template <class T>
StyleCodeSet<T> sample_style_set(Rng& rng, int num_components, int dim) {
  StyleCodeSet<T> set;
  for (int k = 0; k < num_components; ++k) set.codes.push_back(sample_style_code<T>(rng, k, dim));
  return set;
}

/// Copy of `set` with only component k redrawn.
template <class T>
StyleCodeSet<T> resample_component(const StyleCodeSet<T>& set, int component, Rng& rng) {
  StyleCodeSet<T> out = set;
  out.codes.at(component) =
      sample_style_code<T>(rng, component, static_cast<int>(set.codes.at(component).values.size()));
  return out;
}

/// MLP mapping one component's style code to that component's CoAdaIN
/// target statistics for one layer: output[0, C) is the target mean,
/// output[C, 2C) the target std.
template <class T>
class ParamHead {
 public:
  ParamHead() = default;
  ParamHead(int component, int style_dim, int channels, std::vector<int> hidden = {})
      : component_(component), channels_(channels) {
    std::vector<int> dims{style_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(2 * channels);
    mlp_ = Mlp<T>(std::move(dims));
  }

  int component() const { return component_; }
  int channels() const { return channels_; }
  int style_dim() const { return mlp_.in_features(); }
  Mlp<T>& mlp() { return mlp_; }
  const Mlp<T>& mlp() const { return mlp_; }

  /// Random weights; the std half of the output bias starts at 1 so a fresh
  /// head passes features through at unit scale.
  void init(Rng& rng) {
    mlp_.init(rng);
    auto& last = mlp_.layer(mlp_.depth() - 1);
    for (int c = 0; c < channels_; ++c) last.bias.value[channels_ + c] = T(1);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    mlp_.visit(prefix, f);
  }

 private:
  int component_ = 0;
  int channels_ = 0;
  Mlp<T> mlp_;
};

template <class T>
struct HeadOutput {
  std::vector<T> target_mean;
  std::vector<T> target_std;
};

/// Feed-forward evaluation of the head for `style.component_index`.
template <class T>
HeadOutput<T> style_to_params(const StyleCode<T>& style, const ParamHead<T>& head,
                              typename Mlp<T>::Trace* trace = nullptr) {
  if (style.component_index != head.component()) {
    throw ValidationError("style_to_params: style for component " +
                          std::to_string(style.component_index) + " given to head of component " +
                          std::to_string(head.component()));
  }
  if (!style.present) {
    throw ValidationError("style_to_params: style code for component " +
                          std::to_string(style.component_index) + " is absent");
  }
  auto out = head.mlp().forward(style.values, trace);
  const auto c = static_cast<size_t>(head.channels());
  return {std::vector<T>(out.begin(), out.begin() + c), std::vector<T>(out.begin() + c, out.end())};
}

}  // namespace coadain

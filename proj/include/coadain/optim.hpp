#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "coadain/errors.hpp"
#include "coadain/layers.hpp"

namespace coadain {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

/// Adam over a fixed, named set of parameters. Moments are kept in double
/// regardless of the parameter type.
template <class T>
class Adam {
 public:
  struct Slot {
    std::string name;
    Param<T>* param = nullptr;
    std::vector<double> m;
    std::vector<double> v;
  };

  Adam() = default;
  explicit Adam(AdamOptions opts) : opts_(opts) {}

  /// Registers every parameter reported by `visit(f)`.
  template <class Visit>
  void bind(Visit&& visit) {
    slots_.clear();
    visit([&](const std::string& name, Param<T>& p) {
      slots_.push_back({name, &p, std::vector<double>(p.value.size(), 0.0),
                        std::vector<double>(p.value.size(), 0.0)});
    });
  }

  const AdamOptions& options() const { return opts_; }
  int64_t step_count() const { return step_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

  void zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
  }

  void step() {
    ++step_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (auto& s : slots_) {
      auto& value = s.param->value;
      const auto& grad = s.param->grad;
      for (size_t i = 0; i < value.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        if (opts_.weight_decay != 0.0) g += opts_.weight_decay * static_cast<double>(value[i]);
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        value[i] = static_cast<T>(static_cast<double>(value[i]) -
                                  opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

  /// Restores moments and the step counter; every bound slot must be present.
  void load_state(int64_t step, const std::map<std::string, std::vector<double>>& m,
                  const std::map<std::string, std::vector<double>>& v) {
    for (auto& s : slots_) {
      auto im = m.find(s.name);
      auto iv = v.find(s.name);
      if (im == m.end() || iv == v.end()) {
        throw FormatError("optimizer state missing for parameter '" + s.name + "'");
      }
      if (im->second.size() != s.m.size() || iv->second.size() != s.v.size()) {
        throw FormatError("optimizer state for '" + s.name + "' has the wrong size");
      }
      s.m = im->second;
      s.v = iv->second;
    }
    step_ = step;
  }

 private:
  AdamOptions opts_;
  std::vector<Slot> slots_;
  int64_t step_ = 0;
};

}  // namespace coadain

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coadain/errors.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

/// Pixel-level partition of an H x W image into K components.
///
/// Stored as a label image; the one-hot view is produced on demand. Every
/// constructor validates the partition, so a live ComponentMask always
/// satisfies "exactly one component per pixel".
class ComponentMask {
 public:
  static constexpr int kMaxComponents = 255;

  ComponentMask() = default;

  ComponentMask(int height, int width, int num_components, std::vector<uint8_t> labels)
      : height_(height), width_(width), k_(num_components), labels_(std::move(labels)) {
    if (height < 1 || width < 1) throw DimensionError("mask: spatial dims must be >= 1");
    if (num_components < 1 || num_components > kMaxComponents) {
      throw ValidationError("mask: num_components must be in [1, 255], got " +
                            std::to_string(num_components));
    }
    if (labels_.size() != static_cast<size_t>(height) * width) {
      throw DimensionError("mask: label count " + std::to_string(labels_.size()) +
                           " does not match " + std::to_string(height) + "x" +
                           std::to_string(width));
    }
    counts_.assign(k_, 0);
    for (uint8_t l : labels_) {
      if (l >= k_) {
        throw ValidationError("mask: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(k_) + ")");
      }
      ++counts_[l];
    }
  }

  /// Single-component fill.
  static ComponentMask uniform(int height, int width, int num_components, int label = 0) {
    return ComponentMask(height, width, num_components,
                         std::vector<uint8_t>(static_cast<size_t>(height) * width,
                                              static_cast<uint8_t>(label)));
  }

  /// Builds a mask from a planar K x H x W one-hot array. Entries must be
  /// exactly 0 or 1 and sum to 1 at every pixel.
  template <class T>
  static ComponentMask from_one_hot(std::span<const T> data, int num_components, int height,
                                    int width) {
    const size_t plane = static_cast<size_t>(height) * width;
    if (data.size() != plane * num_components) {
      throw DimensionError("mask: one-hot array has " + std::to_string(data.size()) +
                           " entries, expected " + std::to_string(plane * num_components));
    }
    std::vector<uint8_t> labels(plane, 0);
    for (size_t p = 0; p < plane; ++p) {
      int hot = -1;
      for (int k = 0; k < num_components; ++k) {
        const T v = data[k * plane + p];
        if (v == T(1)) {
          if (hot >= 0) {
            throw ValidationError("mask: pixel " + std::to_string(p) +
                                  " belongs to more than one component");
          }
          hot = k;
        } else if (v != T(0)) {
          throw ValidationError("mask: non-binary entry at pixel " + std::to_string(p));
        }
      }
      if (hot < 0) {
        throw ValidationError("mask: pixel " + std::to_string(p) + " belongs to no component");
      }
      labels[p] = static_cast<uint8_t>(hot);
    }
    return ComponentMask(height, width, num_components, std::move(labels));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int num_components() const { return k_; }
  size_t pixels() const { return labels_.size(); }

  int label(int y, int x) const { return labels_[static_cast<size_t>(y) * width_ + x]; }
  std::span<const uint8_t> labels() const { return labels_; }

  int64_t count(int component) const { return counts_.at(component); }
  bool present(int component) const { return count(component) > 0; }

  bool same_geometry(const ComponentMask& other) const {
    return height_ == other.height_ && width_ == other.width_ && k_ == other.k_;
  }

  bool operator==(const ComponentMask& other) const {
    return same_geometry(other) && labels_ == other.labels_;
  }

  /// (1, K, H, W) one-hot tensor.
  template <class T>
  Tensor<T> one_hot() const {
    Tensor<T> out(1, k_, height_, width_);
    const size_t plane = labels_.size();
    for (size_t p = 0; p < plane; ++p) out[labels_[p] * plane + p] = T(1);
    return out;
  }

  /// (1, 1, H, W) binary indicator of one component.
  template <class T>
  Tensor<T> indicator(int component) const {
    Tensor<T> out(1, 1, height_, width_);
    for (size_t p = 0; p < labels_.size(); ++p) out[p] = labels_[p] == component ? T(1) : T(0);
    return out;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int k_ = 0;
  std::vector<uint8_t> labels_;
  std::vector<int64_t> counts_;
};

/// Nearest-neighbour downsampling of the label image: output pixel (y, x)
/// takes the label at (y * H / H', x * W / W'), the top-left pixel of its
/// block. Ratios must be integral so blocks tile the input exactly.
inline ComponentMask downsample_mask(const ComponentMask& mask, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1 || target_h > mask.height() || target_w > mask.width()) {
    throw ValidationError("downsample_mask: target " + std::to_string(target_h) + "x" +
                          std::to_string(target_w) + " not within " +
                          std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
  if (mask.height() % target_h != 0 || mask.width() % target_w != 0) {
    throw ValidationError("downsample_mask: non-integral ratio " +
                          std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                          " -> " + std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  const int fy = mask.height() / target_h;
  const int fx = mask.width() / target_w;
  if (fy == 1 && fx == 1) return mask;
  std::vector<uint8_t> labels(static_cast<size_t>(target_h) * target_w);
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      labels[static_cast<size_t>(y) * target_w + x] =
          static_cast<uint8_t>(mask.label(y * fy, x * fx));
    }
  }
  return ComponentMask(target_h, target_w, mask.num_components(), std::move(labels));
}

/// Fraction of each factor x factor block covered by `component`.
template <class T>
std::vector<T> area_coverage(const ComponentMask& mask, int component, int factor) {
  if (factor < 1 || mask.height() % factor != 0 || mask.width() % factor != 0) {
    throw ValidationError("area_coverage: factor " + std::to_string(factor) +
                          " does not tile the mask");
  }
  const int h = mask.height() / factor;
  const int w = mask.width() / factor;
  std::vector<T> out(static_cast<size_t>(h) * w, T(0));
  const T unit = T(1) / static_cast<T>(factor * factor);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.label(y, x) == component) {
        out[static_cast<size_t>(y / factor) * w + x / factor] += unit;
      }
    }
  }
  return out;
}

/// Binary indicator of `component` grown by a square structuring element of
/// the given radius (Chebyshev distance).
inline std::vector<uint8_t> dilate_component(const ComponentMask& mask, int component,
                                             int radius) {
  const int h = mask.height();
  const int w = mask.width();
  // separable max filter: rows then columns
  std::vector<uint8_t> rows(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.label(y, x) != component) continue;
      const int x0 = std::max(0, x - radius);
      const int x1 = std::min(w - 1, x + radius);
      for (int xx = x0; xx <= x1; ++xx) rows[static_cast<size_t>(y) * w + xx] = 1;
    }
  }
  std::vector<uint8_t> out(rows.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!rows[static_cast<size_t>(y) * w + x]) continue;
      const int y0 = std::max(0, y - radius);
      const int y1 = std::min(h - 1, y + radius);
      for (int yy = y0; yy <= y1; ++yy) out[static_cast<size_t>(yy) * w + x] = 1;
    }
  }
  return out;
}

/// (N, K, H, W) one-hot stack of a batch of masks with equal geometry.
template <class T>
Tensor<T> one_hot_batch(std::span<const ComponentMask> masks) {
  if (masks.empty()) throw DimensionError("one_hot_batch: empty batch");
  const auto& m0 = masks.front();
  Tensor<T> out(static_cast<int>(masks.size()), m0.num_components(), m0.height(), m0.width());
  const size_t plane = m0.pixels();
  for (size_t i = 0; i < masks.size(); ++i) {
    if (!masks[i].same_geometry(m0)) throw DimensionError("one_hot_batch: mixed geometry");
    auto dst = out.sample(static_cast<int>(i));
    auto labels = masks[i].labels();
    for (size_t p = 0; p < plane; ++p) dst[labels[p] * plane + p] = T(1);
  }
  return out;
}

}  // namespace coadain

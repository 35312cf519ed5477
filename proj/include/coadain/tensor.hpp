#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "coadain/errors.hpp"

namespace coadain {

/// Allocator with a fixed 64-byte base alignment. Vectorised reductions peel
/// leading elements up to the first aligned address, so with AVX2/AVX-512 a
/// malloc-aligned buffer could be summed in a different order from one run
/// to the next. A fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{alignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{alignment}); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense N x C x H x W array in row-major (NCHW) order.
///
/// Images, feature maps, convolution weights and parameter vectors all use
/// this one container; vectors are stored as (1, n, 1, 1).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape_{n, c, h, w}, data_(checked_size(n, c, h, w), fill) {}

  static Tensor vector(int n, T fill = T(0)) { return Tensor(1, n, 1, 1, fill); }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Elements per sample.
  size_t sample_size() const { return static_cast<size_t>(c()) * h() * w(); }
  size_t plane_size() const { return static_cast<size_t>(h()) * w(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  std::span<T> sample(int i) {
    return {data_.data() + i * sample_size(), sample_size()};
  }
  std::span<const T> sample(int i) const {
    return {data_.data() + i * sample_size(), sample_size()};
  }

  T& operator()(int i, int ch, int y, int x) { return data_[index(i, ch, y, x)]; }
  const T& operator()(int i, int ch, int y, int x) const {
    return data_[index(i, ch, y, x)];
  }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  size_t index(int i, int ch, int y, int x) const {
    return ((static_cast<size_t>(i) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(*this, other, "tensor add");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  /// Copy of sample i as a single-sample tensor.
  Tensor slice(int i) const {
    Tensor out(1, c(), h(), w());
    auto src = sample(i);
    std::copy(src.begin(), src.end(), out.data());
    return out;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(n(), c(), h(), w());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "(" << shape_[0] << "," << shape_[1] << "," << shape_[2] << "," << shape_[3] << ")";
    return os.str();
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
      throw DimensionError(std::string(what) + ": shape " + a.shape_string() +
                           " does not match " + b.shape_string());
    }
  }

 private:
  static size_t checked_size(int n, int c, int h, int w) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw DimensionError("negative tensor dimension");
    return static_cast<size_t>(n) * c * h * w;
  }

  std::array<int, 4> shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

/// Stacks single-sample tensors of equal shape along the batch axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw DimensionError("stack: no tensors");
  const auto& first = items.front();
  Tensor<T> out(static_cast<int>(items.size()), first.c(), first.h(), first.w());
  for (size_t i = 0; i < items.size(); ++i) {
    if (items[i].n() != 1 || items[i].c() != first.c() || items[i].h() != first.h() ||
        items[i].w() != first.w()) {
      throw DimensionError("stack: tensor " + std::to_string(i) + " has shape " +
                           items[i].shape_string());
    }
    std::copy(items[i].data(), items[i].data() + items[i].size(),
              out.data() + i * first.size());
  }
  return out;
}

/// Channel-wise concatenation of two tensors with equal N, H, W.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw DimensionError("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    auto sa = a.sample(i);
    auto sb = b.sample(i);
    auto dst = out.sample(i);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + sa.size());
  }
  return out;
}

/// Keeps the first `channels` channels of every sample.
template <class T>
Tensor<T> leading_channels(const Tensor<T>& x, int channels) {
  Tensor<T> out(x.n(), channels, x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) {
    auto src = x.sample(i);
    std::copy(src.begin(), src.begin() + out.sample_size(), out.sample(i).begin());
  }
  return out;
}

}  // namespace coadain

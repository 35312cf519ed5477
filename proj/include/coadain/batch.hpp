#pragma once

#include <vector>

#include "coadain/mask.hpp"
#include "coadain/tensor.hpp"

namespace coadain {

/// Images of one domain with their component masks, one mask per sample.
template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<ComponentMask> masks;

  int size() const { return images.n(); }
};

}  // namespace coadain

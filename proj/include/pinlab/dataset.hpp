#pragma once

#include "pinlab/tensor.hpp"

#include <cstdint>

namespace pinlab {

// Procedural "faces": a centered ellipse with two eye dots on a textured
// background. Position, scale and colors are jittered per image.
struct DatasetSpec {
  Index resolution = 32;
  Index n_images = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

// Image `index` of the dataset, [3, R, R], values in [-1, 1].
Tensor<float> dataset_image(const DatasetSpec& spec, Index index);

}  // namespace pinlab

#include "pinlab/dataset.hpp"

#include "pinlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace pinlab {

void DatasetSpec::validate() const {
  if (resolution < 8) throw std::invalid_argument("dataset resolution must be >= 8");
  if (n_images < 1) throw std::invalid_argument("dataset needs at least one image");
}

Tensor<float> dataset_image(const DatasetSpec& spec, Index index) {
  spec.validate();
  if (index < 0 || index >= spec.n_images) throw std::out_of_range("dataset index out of range");
  std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const Index r = spec.resolution;
  const double rd = static_cast<double>(r);
  double bg[3], skin[3], eye[3];
  for (int c = 0; c < 3; ++c) bg[c] = uni(-0.9, -0.2);
  const double tone = uni(0.2, 0.8);
  skin[0] = tone;
  skin[1] = tone - uni(0.1, 0.3);
  skin[2] = tone - uni(0.2, 0.5);
  for (int c = 0; c < 3; ++c) eye[c] = uni(-1.0, -0.7);

  // low-frequency stripes plus per-pixel grain
  const double fx = uni(1.0, 3.0) * 2.0 * std::numbers::pi / rd;
  const double fy = uni(1.0, 3.0) * 2.0 * std::numbers::pi / rd;
  const double phase = uni(0.0, 2.0 * std::numbers::pi);
  const double amp = uni(0.05, 0.2);

  const double cy = rd / 2.0 + uni(-rd / 10.0, rd / 10.0);
  const double cx = rd / 2.0 + uni(-rd / 10.0, rd / 10.0);
  const double ry = rd * uni(0.28, 0.38), rx = rd * uni(0.22, 0.32);
  const double eye_y = cy - 0.25 * ry, eye_dx = 0.4 * rx, eye_r = std::max(1.0, rd / 16.0);

  Tensor<float> img({3, r, r});
  std::normal_distribution<double> grain(0.0, 0.03);
  for (Index y = 0; y < r; ++y)
    for (Index x = 0; x < r; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      const double tex = amp * std::sin(fx * px + fy * py + phase);
      const double e = std::pow((py - cy) / ry, 2) + std::pow((px - cx) / rx, 2);
      const bool in_eye = std::hypot(py - eye_y, px - (cx - eye_dx)) <= eye_r ||
                          std::hypot(py - eye_y, px - (cx + eye_dx)) <= eye_r;
      const double g = grain(rng);
      for (int c = 0; c < 3; ++c) {
        double v = in_eye ? eye[c] : e <= 1.0 ? skin[c] + 0.5 * g : bg[c] + tex + g;
        img(c, y, x) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  return img;
}

}  // namespace pinlab

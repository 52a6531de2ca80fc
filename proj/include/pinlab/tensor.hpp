#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Index shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of rank 1-4. Element (c,h,w) of a rank-3 tensor lives
// at c*H*W + h*W + w.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Storage::Constant(shape_volume(shape_), fill)) {
    validate_rank();
  }

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_rank();
    if (data_.size() != shape_volume(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Storage(Eigen::Map<const Storage>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }

  // Rank-3 accessors.
  Index channels() const { return dim(0); }
  Index height() const { return dim(1); }
  Index width() const { return dim(2); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index c, Index h, Index w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  Scalar operator()(Index c, Index h, Index w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  Scalar& operator()(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar operator()(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  void validate_rank() const {
    if (shape_.empty() || shape_.size() > 4)
      throw DimensionError("tensor rank must be 1-4, got " + std::to_string(shape_.size()));
    for (Index d : shape_)
      if (d < 1) throw DimensionError("tensor dims must be positive: " + shape_string(shape_));
  }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace pinlab

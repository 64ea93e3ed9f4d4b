#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "snn/errors.hpp"

namespace snn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major N-d array. The flat storage is an Eigen column vector so
/// elementwise math composes as ordinary Eigen expressions on data().
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = VectorX<Scalar>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    data_ = Vector::Zero(shape_size(shape_));
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor full(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  // (c, h, w) access for rank-3 tensors.
  Scalar& operator()(Index c, Index h, Index w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
  Scalar operator()(Index c, Index h, Index w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (Index d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace snn

#ifndef MMFA_TENSOR_HPP_
#define MMFA_TENSOR_HPP_

#include <cstddef>
#include <string>
#include <vector>

namespace mmfa {

/// Dense n-dimensional array of 64-bit floats in row-major order.
///
/// Shape dims must be strictly positive and product(shape) always equals
/// values.size(). 64-bit is the reference precision everywhere gradients
/// are involved; dataset files store 32-bit (see data.hpp).
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& other);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const;

  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 2-D accessors (row-major).
  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  double scalar_value() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Throws std::runtime_error naming `context` if any value is NaN/Inf.
  void require_finite(const std::string& context) const;

  void fill(double v);

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace mmfa

#endif  // MMFA_TENSOR_HPP_

#include "mmfa/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmfa {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const std::vector<std::size_t>& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor shape dims must be positive");
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  values_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  validate_shape(shape_);
  if (shape_product(shape_) != values_.size()) {
    std::ostringstream msg;
    msg << "tensor shape " << shape_string() << " does not match value count "
        << values_.size();
    throw std::invalid_argument(msg.str());
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::invalid_argument("tensor axis out of range");
  return shape_[axis];
}

double& Tensor::at(std::size_t row, std::size_t col) {
  return values_[row * shape_[1] + col];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return values_[row * shape_[1] + col];
}

double Tensor::scalar_value() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("expected scalar tensor, got shape " + shape_string());
  }
  return values_[0];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const std::string& context) const {
  if (!all_finite()) {
    throw std::runtime_error("non-finite value in " + context);
  }
}

void Tensor::fill(double v) { values_.assign(values_.size(), v); }

std::string Tensor::shape_string() const {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out << ", ";
    out << shape_[i];
  }
  out << "]";
  return out.str();
}

}  // namespace mmfa

#include "rndf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rndf {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {
void check_shape(const Shape& s) {
  if (s.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : s) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
  }
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("value count " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) throw DimensionError("dimension index out of range");
  return shape_[i];
}

double Tensor::item() const {
  if (!is_scalar()) throw ContractError("item() requires a size-1 tensor, got " + shape_str(shape_));
  return data_[0];
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows() requires a 2-D tensor, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols() requires a 2-D tensor, got " + shape_str(shape_));
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  if (ndim() != 2 || r >= shape_[0] || c >= shape_[1]) {
    throw DimensionError("index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") out of range for " + shape_str(shape_));
  }
  return data_[r * shape_[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return const_cast<Tensor*>(this)->at(r, c);
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace rndf

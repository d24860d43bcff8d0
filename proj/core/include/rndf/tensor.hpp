#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rndf/errors.hpp"

namespace rndf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Dense row-major f64 tensor. Plain value type; the differentiable ops in
/// tape.hpp attach results to a Tape when an operand requires gradients.
/// A tensor handed out by a Tape carries its node id so gradients can be
/// looked up after backward().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }
  double item() const;

  // 2-D accessors; most of the model works on batch-major matrices.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool tracked() const { return tape_ != nullptr; }
  bool requires_grad() const { return requires_grad_; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape link.
  Tensor detached() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;

  friend class Tape;
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace rndf

#pragma once

#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "rndf/tensor.hpp"

namespace rndf {

/// Routing probabilities are kept away from {0, 1} because the forest
/// gradient divides by s and 1-s.
inline constexpr double kSigmoidEps = 1e-6;

/// Numerically stable sigmoid, clamped to [kSigmoidEps, 1 - kSigmoidEps].
double sigmoid_value(double x);
/// Derivative of the raw (pre-clamp) sigmoid.
double sigmoid_slope(double x);

/// Reverse-mode tape. Records one node per differentiable op in execution
/// order (inputs always precede their consumers), rebuilt on every forward
/// pass. A tape and the tensors linked to it are confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers an input tensor. With requires_grad the returned tensor gets
  /// a node so gradients can flow to it; otherwise it is returned untracked
  /// and ops on it stay outside the tape.
  Tensor leaf(Tensor value, bool requires_grad = false);

  /// Reverse sweep seeded with d(loss)/d(loss) = 1. Requires a scalar loss.
  void backward(const Tensor& loss);
  /// Reverse sweep from an arbitrary recorded tensor with a caller-provided
  /// seed gradient of the same shape.
  void backward_from(const Tensor& output, const Tensor& seed);

  bool has_grad(const Tensor& t) const;
  const Tensor& grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

  // --- op-implementation interface ---
  using BackwardFn =
      std::function<void(const Tensor& out_grad, std::span<const int> inputs, Tape&)>;
  Tensor record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn);
  /// Adds g to the gradient slot of a node; no-op for node < 0.
  void accumulate(int node, const Tensor& g);

 private:
  struct Node {
    BackwardFn backward;  // empty for leaves
    std::vector<int> inputs;
    Shape shape;
  };
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;

  void run_backward(int root, Tensor seed);
};

// --- differentiable operations -------------------------------------------
//
// Each takes plain or tracked tensors; the result is tracked iff at least
// one input is tracked. Binary elementwise ops require equal shapes or one
// size-1 operand.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
/// Forward value clamped to [kSigmoidEps, 1 - kSigmoidEps]; backward uses the
/// pre-clamp slope so saturated scores keep a (tiny) gradient.
Tensor sigmoid(const Tensor& a);
Tensor scale_by(const Tensor& a, double c);
/// a: m x n, bias: 1 x n (or length-n vector), added to every row.
Tensor bias_add(const Tensor& a, const Tensor& bias);
/// Reduction to a {1} scalar, or along one axis (kept as size 1).
Tensor sum(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
/// Columns [begin, begin+count) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate; the
/// verification oracle for backward().
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double h = 1e-5);

}  // namespace rndf

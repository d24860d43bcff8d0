#include "rndf/tape.hpp"

#include <cassert>
#include <cmath>
#include <string>

namespace rndf {

double sigmoid_value(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    double e = std::exp(x);
    s = e / (1.0 + e);
  }
  if (s < kSigmoidEps) s = kSigmoidEps;
  if (s > 1.0 - kSigmoidEps) s = 1.0 - kSigmoidEps;
  return s;
}

double sigmoid_slope(double x) {
  double e = std::exp(-std::abs(x));
  double d = 1.0 + e;
  return e / (d * d);
}

namespace {

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

/// Tape the result should be recorded on, or nullptr when every operand is
/// untracked. Mixing tapes is a contract violation.
Tape* op_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw ContractError("operands belong to different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

/// Collapses a gradient onto a (possibly size-1 broadcast) operand shape.
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (shape_size(target) != 1) {
    throw DimensionError("cannot reduce gradient " + shape_str(g.shape()) + " to " +
                         shape_str(target));
  }
  double total = 0.0;
  for (double v : g.data()) total += v;
  return Tensor(target, {total});
}

}  // namespace

// --- Tape ------------------------------------------------------------------

Tensor Tape::leaf(Tensor value, bool requires_grad) {
  if (!requires_grad) {
    value.tape_ = nullptr;
    value.node_ = -1;
    value.requires_grad_ = false;
    return value;
  }
  Node n;
  n.shape = value.shape();
  nodes_.push_back(std::move(n));
  value.tape_ = this;
  value.node_ = static_cast<int>(nodes_.size()) - 1;
  value.requires_grad_ = true;
  return value;
}

Tensor Tape::record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Node n;
  n.shape = value.shape();
  n.backward = std::move(fn);
  for (const Tensor* t : inputs) {
    n.inputs.push_back(t->tracked() ? t->node_ : -1);
  }
  nodes_.push_back(std::move(n));
  value.tape_ = this;
  value.node_ = static_cast<int>(nodes_.size()) - 1;
  value.requires_grad_ = true;
  return value;
}

void Tape::accumulate(int node, const Tensor& g) {
  if (node < 0) return;
  auto& slot = grads_[static_cast<std::size_t>(node)];
  if (!slot) {
    if (g.shape() != nodes_[static_cast<std::size_t>(node)].shape) {
      throw ContractError("gradient shape " + shape_str(g.shape()) + " does not match node shape " +
                          shape_str(nodes_[static_cast<std::size_t>(node)].shape));
    }
    slot = g.detached();
    return;
  }
  auto& acc = slot->data();
  const auto& add = g.data();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
}

void Tape::run_backward(int root, Tensor seed) {
  grads_.assign(nodes_.size(), std::nullopt);
  accumulate(root, seed);
  for (int id = root; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!grads_[static_cast<std::size_t>(id)] || !node.backward) continue;
    node.backward(*grads_[static_cast<std::size_t>(id)],
                  std::span<const int>(node.inputs.data(), node.inputs.size()), *this);
  }
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked() || loss.tape() != this) throw ContractError("loss is not on this tape");
  if (!loss.is_scalar()) {
    throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  run_backward(loss.node_, Tensor::full(loss.shape(), 1.0));
}

void Tape::backward_from(const Tensor& output, const Tensor& seed) {
  if (!output.tracked() || output.tape() != this) throw ContractError("output is not on this tape");
  if (seed.shape() != output.shape()) {
    throw ContractError("seed shape " + shape_str(seed.shape()) + " does not match output " +
                        shape_str(output.shape()));
  }
  run_backward(output.node_, seed.detached());
}

bool Tape::has_grad(const Tensor& t) const {
  return t.tracked() && t.tape() == this && t.node_ >= 0 &&
         static_cast<std::size_t>(t.node_) < grads_.size() &&
         grads_[static_cast<std::size_t>(t.node_)].has_value();
}

const Tensor& Tape::grad(const Tensor& t) const {
  if (!t.tracked() || t.tape() != this) throw ContractError("tensor is not on this tape");
  if (!has_grad(t)) throw ContractError("no gradient recorded for this tensor");
  return *grads_[static_cast<std::size_t>(t.node_)];
}

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw DimensionError("matmul expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[kk * n + j];
    }
  }
  debug_check_finite(out, "matmul");
  Tape* tape = op_tape({&a, &b});
  if (!tape) return out;
  return tape->record(
      std::move(out), {&a, &b},
      [av = a.detached(), bv = b.detached(), m, k, n](const Tensor& g, std::span<const int> in,
                                                      Tape& t) {
        if (in[0] >= 0) {
          Tensor ga({m, k});
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = g[i * n + j];
              for (std::size_t kk = 0; kk < k; ++kk) ga[i * k + kk] += gv * bv[kk * n + j];
            }
          t.accumulate(in[0], ga);
        }
        if (in[1] >= 0) {
          Tensor gb({k, n});
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av2 = av[i * k + kk];
              for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += av2 * g[i * n + j];
            }
          t.accumulate(in[1], gb);
        }
      });
}

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_ew(BinOp op, const Tensor& a, const Tensor& b, const char* name) {
  const bool a_scalar = a.is_scalar();
  const bool b_scalar = b.is_scalar();
  if (!same_shape(a, b) && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match and neither is scalar");
  }
  const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[a_scalar ? 0 : i];
    const double y = b[b_scalar ? 0 : i];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
    }
  }
  debug_check_finite(out, name);
  Tape* tape = op_tape({&a, &b});
  if (!tape) return out;
  return tape->record(std::move(out), {&a, &b},
                      [op, av = a.detached(), bv = b.detached(), a_scalar, b_scalar, n](
                          const Tensor& g, std::span<const int> in, Tape& t) {
                        if (in[0] >= 0) {
                          Tensor ga(g.shape());
                          for (std::size_t i = 0; i < n; ++i) {
                            switch (op) {
                              case BinOp::Add:
                              case BinOp::Sub: ga[i] = g[i]; break;
                              case BinOp::Mul: ga[i] = g[i] * bv[b_scalar ? 0 : i]; break;
                            }
                          }
                          t.accumulate(in[0], reduce_to_shape(ga, av.shape()));
                        }
                        if (in[1] >= 0) {
                          Tensor gb(g.shape());
                          for (std::size_t i = 0; i < n; ++i) {
                            switch (op) {
                              case BinOp::Add: gb[i] = g[i]; break;
                              case BinOp::Sub: gb[i] = -g[i]; break;
                              case BinOp::Mul: gb[i] = g[i] * av[a_scalar ? 0 : i]; break;
                            }
                          }
                          t.accumulate(in[1], reduce_to_shape(gb, bv.shape()));
                        }
                      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_ew(BinOp::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_ew(BinOp::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew(BinOp::Mul, a, b, "mul"); }

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  debug_check_finite(out, "relu");
  Tape* tape = op_tape({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {&a},
                      [av = a.detached()](const Tensor& g, std::span<const int> in, Tape& t) {
                        Tensor ga(g.shape());
                        for (std::size_t i = 0; i < ga.size(); ++i)
                          ga[i] = av[i] > 0.0 ? g[i] : 0.0;
                        t.accumulate(in[0], ga);
                      });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out(a.shape());
  Tensor slope(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = sigmoid_value(a[i]);
    slope[i] = sigmoid_slope(a[i]);
  }
  debug_check_finite(out, "sigmoid");
  Tape* tape = op_tape({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {&a},
                      [sl = std::move(slope)](const Tensor& g, std::span<const int> in, Tape& t) {
                        Tensor ga(g.shape());
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * sl[i];
                        t.accumulate(in[0], ga);
                      });
}

Tensor scale_by(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  debug_check_finite(out, "scale");
  Tape* tape = op_tape({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {&a},
                      [c](const Tensor& g, std::span<const int> in, Tape& t) {
                        Tensor ga(g.shape());
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * c;
                        t.accumulate(in[0], ga);
                      });
}

Tensor bias_add(const Tensor& a, const Tensor& bias) {
  if (a.ndim() != 2) throw DimensionError("bias_add expects a 2-D left operand");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.size() != n || bias.ndim() > 2 ||
      (bias.ndim() == 2 && bias.dim(0) != 1)) {
    throw DimensionError("bias shape " + shape_str(bias.shape()) + " incompatible with " +
                         shape_str(a.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  debug_check_finite(out, "bias_add");
  Tape* tape = op_tape({&a, &bias});
  if (!tape) return out;
  return tape->record(std::move(out), {&a, &bias},
                      [m, n, bshape = bias.shape()](const Tensor& g, std::span<const int> in,
                                                    Tape& t) {
                        if (in[0] >= 0) t.accumulate(in[0], g);
                        if (in[1] >= 0) {
                          Tensor gb(bshape);
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                          t.accumulate(in[1], gb);
                        }
                      });
}

namespace {

/// Splits a shape into (outer, axis length, inner) around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

Tensor reduce_impl(const Tensor& a, std::optional<std::size_t> axis, bool take_mean) {
  const char* name = take_mean ? "mean" : "sum";
  if (!axis) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    const double denom = take_mean ? static_cast<double>(a.size()) : 1.0;
    Tensor out = Tensor::scalar(total / denom);
    Tape* tape = op_tape({&a});
    if (!tape) return out;
    return tape->record(std::move(out), {&a},
                        [shape = a.shape(), denom](const Tensor& g, std::span<const int> in,
                                                   Tape& t) {
                          t.accumulate(in[0], Tensor::full(shape, g.item() / denom));
                        });
  }
  const AxisSplit sp = split_axis(a.shape(), *axis);
  Shape out_shape = a.shape();
  out_shape[*axis] = 1;
  Tensor out(out_shape);
  const double denom = take_mean ? static_cast<double>(sp.len) : 1.0;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += a[(o * sp.len + l) * sp.inner + i] / denom;
  debug_check_finite(out, name);
  Tape* tape = op_tape({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {&a},
                      [shape = a.shape(), sp, denom](const Tensor& g, std::span<const int> in,
                                                     Tape& t) {
                        Tensor ga(shape);
                        for (std::size_t o = 0; o < sp.outer; ++o)
                          for (std::size_t l = 0; l < sp.len; ++l)
                            for (std::size_t i = 0; i < sp.inner; ++i)
                              ga[(o * sp.len + l) * sp.inner + i] = g[o * sp.inner + i] / denom;
                        t.accumulate(in[0], ga);
                      });
}

}  // namespace

Tensor sum(const Tensor& a, std::optional<std::size_t> axis) { return reduce_impl(a, axis, false); }
Tensor mean(const Tensor& a, std::optional<std::size_t> axis) { return reduce_impl(a, axis, true); }

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.ndim() != 2) throw DimensionError("slice_cols expects a 2-D tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (count == 0 || begin + count > n) {
    throw DimensionError("column range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of bounds for " +
                         shape_str(a.shape()));
  }
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + begin + j];
  Tape* tape = op_tape({&a});
  if (!tape) return out;
  return tape->record(std::move(out), {&a},
                      [m, n, begin, count](const Tensor& g, std::span<const int> in, Tape& t) {
                        Tensor ga({m, n});
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < count; ++j)
                            ga[i * n + begin + j] = g[i * count + j];
                        t.accumulate(in[0], ga);
                      });
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_gradient requires h > 0");
  Tensor probe = x.detached();
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace rndf

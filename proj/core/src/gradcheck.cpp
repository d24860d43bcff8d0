#include "rndf/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "rndf/rng.hpp"

namespace rndf {

double gradcheck_rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Nudges values away from the relu kink so finite differences stay clean.
Tensor random_tensor_off_kink(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 1e-2) t[i] += t[i] >= 0.0 ? 2e-2 : -2e-2;
  }
  return t;
}

using UnaryBuilder = std::function<Tensor(const Tensor&)>;

double max_err_unary(Rng& rng, const UnaryBuilder& op, bool off_kink, std::size_t instances) {
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(5);
    const Tensor x = off_kink ? random_tensor_off_kink(rng, {r, c}) : random_tensor(rng, {r, c});
    Tape tape;
    const Tensor xt = tape.leaf(x.detached(), true);
    tape.backward(sum(op(xt)));
    const Tensor& analytic = tape.grad(xt);
    const Tensor fd = finite_diff_gradient([&op](const Tensor& p) { return sum(op(p)).item(); }, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, gradcheck_rel_err(analytic[i], fd[i]));
    }
  }
  return worst;
}

double max_err_matmul(Rng& rng, std::size_t instances, bool corrupt) {
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
    const Tensor a = random_tensor(rng, {m, k});
    const Tensor b = random_tensor(rng, {k, n});
    Tape tape;
    const Tensor at = tape.leaf(a.detached(), true);
    const Tensor bt = tape.leaf(b.detached(), true);
    tape.backward(sum(matmul(at, bt)));
    Tensor ga = tape.grad(at).detached();
    const Tensor& gb = tape.grad(bt);
    if (corrupt && it == 0) ga[0] += 1e-3;  // negative control for the checker
    const Tensor fd_a = finite_diff_gradient(
        [&b](const Tensor& p) { return sum(matmul(p, b)).item(); }, a);
    const Tensor fd_b = finite_diff_gradient(
        [&a](const Tensor& p) { return sum(matmul(a, p)).item(); }, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, gradcheck_rel_err(ga[i], fd_a[i]));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      worst = std::max(worst, gradcheck_rel_err(gb[i], fd_b[i]));
    }
  }
  return worst;
}

double max_err_binary_mul(Rng& rng, std::size_t instances) {
  double worst = 0.0;
  for (std::size_t it = 0; it < instances; ++it) {
    const std::size_t r = 1 + rng.below(4), c = 1 + rng.below(4);
    const Tensor a = random_tensor(rng, {r, c});
    const Tensor b = random_tensor(rng, {r, c});
    Tape tape;
    const Tensor at = tape.leaf(a.detached(), true);
    const Tensor bt = tape.leaf(b.detached(), true);
    tape.backward(sum(mul(add(at, bt), sub(at, bt))));
    const Tensor& ga = tape.grad(at);
    const Tensor fd_a = finite_diff_gradient(
        [&b](const Tensor& p) { return sum(mul(add(p, b), sub(p, b))).item(); }, a);
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, gradcheck_rel_err(ga[i], fd_a[i]));
    }
  }
  return worst;
}

struct ForestInstance {
  ForestConfig cfg;
  LeafParams leaves;
  Tensor scores;   // batch x total_splits
  Tensor targets;  // batch x k
};

ForestInstance random_forest_instance(Rng& rng, std::size_t max_trees, std::size_t max_depth,
                                      std::size_t max_k, std::size_t max_batch) {
  ForestInstance fi;
  fi.cfg.num_trees = 1 + rng.below(max_trees);
  fi.cfg.depth = 1 + rng.below(max_depth);
  fi.cfg.prediction_dim = 1 + rng.below(max_k);
  const std::size_t batch = 1 + rng.below(max_batch);
  fi.leaves.num_leaves = fi.cfg.total_leaves();
  fi.leaves.dim = fi.cfg.prediction_dim;
  fi.leaves.predictions = random_tensor(rng, {fi.leaves.num_leaves, fi.leaves.dim});
  for (std::size_t j = 0; j < fi.leaves.num_leaves; ++j) {
    Tensor cov({fi.leaves.dim, fi.leaves.dim});
    for (std::size_t dd = 0; dd < fi.leaves.dim; ++dd) {
      cov[dd * fi.leaves.dim + dd] = rng.uniform(0.5, 1.5);
    }
    fi.leaves.covariances.push_back(std::move(cov));
  }
  fi.scores = random_tensor(rng, {batch, fi.cfg.total_splits()}, 0.05, 0.95);
  fi.targets = random_tensor(rng, {batch, fi.cfg.prediction_dim}, -3.0, 3.0);
  return fi;
}

double forest_instance_max_err(const ForestInstance& fi) {
  const Tensor weights = leaf_weights(fi.cfg, fi.scores);
  const Tensor prediction = forest_predict(fi.cfg, weights, fi.leaves);
  const Tensor analytic =
      grad_scores(fi.cfg, prediction, fi.targets, weights, fi.leaves, fi.scores);
  const Tensor fd = finite_diff_gradient(
      [&fi](const Tensor& s) {
        const Tensor w = leaf_weights(fi.cfg, s);
        return squared_loss(forest_predict(fi.cfg, w, fi.leaves), fi.targets);
      },
      fi.scores, 1e-6);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, gradcheck_rel_err(analytic[i], fd[i]));
  }
  return worst;
}

Model random_tiny_model(Rng& rng, std::size_t input_dim, std::size_t embed, std::size_t blocks,
                        std::size_t hidden, std::size_t trees, std::size_t depth, std::size_t k) {
  Model m;
  m.forest_cfg = {trees, depth, k};
  m.backbone_cfg.input_dim = input_dim;
  m.backbone_cfg.embed_dim = embed;
  m.backbone_cfg.num_blocks = blocks;
  m.backbone_cfg.hidden_dim = hidden;
  m.backbone_cfg.num_split_outputs = m.forest_cfg.total_splits();
  m.backbone_cfg.seed = rng.next_u64();
  m.backbone = backbone_init(m.backbone_cfg);
  m.leaves.num_leaves = m.forest_cfg.total_leaves();
  m.leaves.dim = k;
  m.leaves.predictions = random_tensor(rng, {m.leaves.num_leaves, k});
  for (std::size_t j = 0; j < m.leaves.num_leaves; ++j) {
    Tensor cov({k, k});
    for (std::size_t dd = 0; dd < k; ++dd) cov[dd * k + dd] = rng.uniform(0.5, 1.5);
    m.leaves.covariances.push_back(std::move(cov));
  }
  m.label_offset = Tensor({1, k});
  m.label_scale = Tensor::full({1, k}, 1.0);
  m.validate();
  return m;
}

}  // namespace

double composite_loss(const Model& m, const Tensor& x, const Tensor& y_std) {
  return squared_loss(m.predict_standardized(x), y_std);
}

std::vector<Tensor> composite_gradients_injected(const Model& m, const Tensor& x,
                                                 const Tensor& y_std) {
  Tape tape;
  BoundBackbone bb = bind_backbone(tape, m.backbone_cfg, m.backbone, /*requires_grad=*/true);
  const Tensor xt = tape.leaf(x.detached(), false);
  const Tensor logits = backbone_forward(bb, xt);
  const RoutingState rs = route(m.forest_cfg, logits);
  const Tensor prediction = forest_predict(m.forest_cfg, rs.leaf_weights, m.leaves);
  const Tensor g_scores =
      grad_scores(m.forest_cfg, prediction, y_std, rs.leaf_weights, m.leaves, rs.scores);
  Tensor seed(logits.shape());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    seed[i] = g_scores[i] * sigmoid_slope(logits[i]);
  }
  tape.backward_from(logits, seed);
  std::vector<Tensor> grads;
  for (const Tensor* v : bb.vars.all()) {
    grads.push_back(tape.has_grad(*v) ? tape.grad(*v).detached() : Tensor(v->shape()));
  }
  return grads;
}

std::vector<Tensor> composite_gradients_tape(const Model& m, const Tensor& x,
                                             const Tensor& y_std) {
  Tape tape;
  BoundBackbone bb = bind_backbone(tape, m.backbone_cfg, m.backbone, /*requires_grad=*/true);
  const Tensor xt = tape.leaf(x.detached(), false);
  const Tensor logits = backbone_forward(bb, xt);
  const Tensor loss = forest_loss_on_tape(m.forest_cfg, logits, m.leaves, y_std);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (const Tensor* v : bb.vars.all()) {
    grads.push_back(tape.has_grad(*v) ? tape.grad(*v).detached() : Tensor(v->shape()));
  }
  return grads;
}

std::vector<GradCheckReport> run_gradient_checks(std::uint64_t seed, bool corrupt_one) {
  Rng rng(mix_seed(seed, 0x6C43));
  std::vector<GradCheckReport> reports;
  auto add = [&reports](std::string name, double err, double tol) {
    reports.push_back({std::move(name), err, tol, err < tol});
  };

  add("matmul", max_err_matmul(rng, 20, corrupt_one), 1e-5);
  add("add_sub_mul", max_err_binary_mul(rng, 20), 1e-5);
  add("relu", max_err_unary(rng, [](const Tensor& t) { return relu(t); }, true, 20), 1e-5);
  add("sigmoid", max_err_unary(rng, [](const Tensor& t) { return sigmoid(t); }, false, 20), 1e-5);
  add("scale", max_err_unary(rng, [](const Tensor& t) { return scale_by(t, -1.7); }, false, 20),
      1e-5);
  add("bias_add",
      max_err_unary(rng,
                    [](const Tensor& t) {
                      Tensor b({1, t.dim(1)});
                      for (std::size_t j = 0; j < b.size(); ++j) {
                        b[j] = 0.3 * static_cast<double>(j + 1);
                      }
                      return bias_add(t, b);
                    },
                    false, 20),
      1e-5);
  add("reduce_mean_axis",
      max_err_unary(rng, [](const Tensor& t) { return mean(mul(t, t), 1); }, false, 20), 1e-5);
  add("slice_cols",
      max_err_unary(rng,
                    [](const Tensor& t) {
                      const std::size_t half = (t.dim(1) + 1) / 2;
                      return mul(slice_cols(t, 0, half), slice_cols(t, 0, half));
                    },
                    false, 20),
      1e-5);

  double forest_err = 0.0;
  for (std::size_t it = 0; it < 20; ++it) {
    forest_err = std::max(forest_err, forest_instance_max_err(
                                          random_forest_instance(rng, 3, 4, 3, 8)));
  }
  add("forest_grad_scores", forest_err, 1e-6);

  {
    const Model m = random_tiny_model(rng, 6, 5, 1, 4, 2, 2, 1);
    const Tensor x = random_tensor(rng, {3, 6}, 0.0, 1.0);
    const Tensor y = random_tensor(rng, {3, 1}, -2.0, 2.0);
    const auto grads = composite_gradients_injected(m, x, y);
    Model probe = m;
    auto probe_params = probe.backbone.all();
    double worst = 0.0;
    for (std::size_t pi = 0; pi < probe_params.size(); ++pi) {
      Tensor& pt = *probe_params[pi];
      for (std::size_t i = 0; i < pt.size(); ++i) {
        const double orig = pt[i];
        const double h = 1e-5;
        pt[i] = orig + h;
        const double fp = composite_loss(probe, x, y);
        pt[i] = orig - h;
        const double fm = composite_loss(probe, x, y);
        pt[i] = orig;
        worst = std::max(worst, gradcheck_rel_err(grads[pi][i], (fp - fm) / (2.0 * h)));
      }
    }
    add("composite_model", worst, 1e-4);
  }

  {
    const Model m = random_tiny_model(rng, 5, 4, 1, 4, 2, 3, 2);
    const Tensor x = random_tensor(rng, {4, 5}, 0.0, 1.0);
    const Tensor y = random_tensor(rng, {4, 2}, -2.0, 2.0);
    const auto a = composite_gradients_injected(m, x, y);
    const auto b = composite_gradients_tape(m, x, y);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < a.size(); ++pi) {
      for (std::size_t i = 0; i < a[pi].size(); ++i) {
        worst = std::max(worst, gradcheck_rel_err(a[pi][i], b[pi][i]));
      }
    }
    add("route_agreement", worst, 1e-9);
  }

  return reports;
}

}  // namespace rndf

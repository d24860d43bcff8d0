#include "rndf/forest.hpp"

#include <algorithm>
#include <cmath>

namespace rndf {

void ForestConfig::validate() const {
  if (num_trees == 0) throw ConfigError("forest.num_trees must be positive");
  if (depth == 0 || depth > 24) throw ConfigError("forest.depth must be in [1, 24]");
  if (prediction_dim == 0) throw ConfigError("forest.prediction_dim must be positive");
}

namespace tree {

std::vector<std::pair<std::size_t, bool>> path_to_leaf(std::size_t depth, std::size_t leaf) {
  const std::size_t splits = (std::size_t{1} << depth) - 1;
  std::vector<std::pair<std::size_t, bool>> path;
  std::size_t node = splits + leaf;  // leaf's id in whole-tree node numbering
  while (node != 0) {
    const std::size_t p = parent(node);
    path.emplace_back(p, node == left(p));
    node = p;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace tree

Tensor routing_scores(const Tensor& logits) {
  Tensor s(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) s[i] = sigmoid_value(logits[i]);
  return s;
}

Tensor leaf_weights(const ForestConfig& cfg, const Tensor& scores) {
  const std::size_t splits = cfg.splits_per_tree();
  const std::size_t leaves = cfg.leaves_per_tree();
  if (scores.ndim() != 2 || scores.dim(1) != cfg.total_splits()) {
    throw DimensionError("scores must be batch x " + std::to_string(cfg.total_splits()) +
                         ", got " + shape_str(scores.shape()));
  }
  const std::size_t batch = scores.dim(0);
  Tensor w({batch, cfg.total_leaves()});
  std::vector<double> arrival(2 * splits + 1);
  for (std::size_t row = 0; row < batch; ++row) {
    for (std::size_t t = 0; t < cfg.num_trees; ++t) {
      arrival[0] = 1.0;
      for (std::size_t i = 0; i < splits; ++i) {
        const double s = scores[row * cfg.total_splits() + t * splits + i];
        arrival[tree::left(i)] = arrival[i] * s;
        arrival[tree::right(i)] = arrival[i] * (1.0 - s);
      }
      for (std::size_t j = 0; j < leaves; ++j) {
        w[row * cfg.total_leaves() + t * leaves + j] = arrival[splits + j];
      }
    }
  }
  return w;
}

RoutingState route(const ForestConfig& cfg, const Tensor& logits) {
  RoutingState rs;
  rs.scores = routing_scores(logits);
  rs.leaf_weights = leaf_weights(cfg, rs.scores);
  return rs;
}

Tensor forest_predict(const ForestConfig& cfg, const Tensor& weights, const LeafParams& leaves) {
  const std::size_t k = cfg.prediction_dim;
  if (leaves.num_leaves != cfg.total_leaves() || leaves.dim != k) {
    throw DimensionError("leaf parameters do not match the forest configuration");
  }
  if (weights.ndim() != 2 || weights.dim(1) != cfg.total_leaves()) {
    throw DimensionError("weights must be batch x " + std::to_string(cfg.total_leaves()));
  }
  const std::size_t batch = weights.dim(0);
  const double inv_trees = 1.0 / static_cast<double>(cfg.num_trees);
  Tensor out({batch, k});
  for (std::size_t row = 0; row < batch; ++row) {
    for (std::size_t j = 0; j < cfg.total_leaves(); ++j) {
      const double w = weights[row * cfg.total_leaves() + j];
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < k; ++d) {
        out[row * k + d] += w * leaves.predictions[j * k + d];
      }
    }
    for (std::size_t d = 0; d < k; ++d) out[row * k + d] *= inv_trees;
  }
  return out;
}

double squared_loss(const Tensor& prediction, const Tensor& target) {
  if (!same_shape(prediction, target)) {
    throw DimensionError("squared_loss shapes differ: " + shape_str(prediction.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    loss += d * d;
  }
  return 0.5 * loss;
}

Tensor grad_scores(const ForestConfig& cfg, const Tensor& prediction, const Tensor& target,
                   const Tensor& weights, const LeafParams& leaves, const Tensor& scores) {
  const std::size_t splits = cfg.splits_per_tree();
  const std::size_t nleaves = cfg.leaves_per_tree();
  const std::size_t k = cfg.prediction_dim;
  const std::size_t batch = scores.dim(0);
  const double inv_trees = 1.0 / static_cast<double>(cfg.num_trees);
  Tensor out({batch, cfg.total_splits()});

  // Subtree-weighted prediction sums, bottom-up: U[i] = sum over leaves under
  // node i of w_j * p_j, so A_l = U[left(i)] and A_r = U[right(i)].
  const std::size_t nodes = 2 * splits + 1;
  std::vector<double> u(nodes * k);
  std::vector<double> resid(k);
  for (std::size_t row = 0; row < batch; ++row) {
    for (std::size_t d = 0; d < k; ++d) resid[d] = prediction[row * k + d] - target[row * k + d];
    for (std::size_t t = 0; t < cfg.num_trees; ++t) {
      for (std::size_t j = 0; j < nleaves; ++j) {
        const double w = weights[row * cfg.total_leaves() + t * nleaves + j];
        const std::size_t leaf_global = t * nleaves + j;
        for (std::size_t d = 0; d < k; ++d) {
          u[(splits + j) * k + d] = w * leaves.predictions[leaf_global * k + d];
        }
      }
      for (std::size_t i = splits; i-- > 0;) {
        for (std::size_t d = 0; d < k; ++d) {
          u[i * k + d] = u[tree::left(i) * k + d] + u[tree::right(i) * k + d];
        }
      }
      for (std::size_t i = 0; i < splits; ++i) {
        const double s = scores[row * cfg.total_splits() + t * splits + i];
        double g = 0.0;
        for (std::size_t d = 0; d < k; ++d) {
          g += resid[d] * (u[tree::left(i) * k + d] / s - u[tree::right(i) * k + d] / (1.0 - s));
        }
        out[row * cfg.total_splits() + t * splits + i] = g * inv_trees;
      }
    }
  }
  return out;
}

MaxWeightLeaf max_weight_leaf(const ForestConfig& cfg, const Tensor& weights, std::size_t row) {
  if (weights.ndim() != 2 || weights.dim(1) != cfg.total_leaves() || row >= weights.dim(0)) {
    throw ContractError("max_weight_leaf: bad weights shape or row");
  }
  MaxWeightLeaf best;
  best.weight = -1.0;
  const std::size_t nleaves = cfg.leaves_per_tree();
  for (std::size_t t = 0; t < cfg.num_trees; ++t) {
    for (std::size_t j = 0; j < nleaves; ++j) {
      const double w = weights[row * cfg.total_leaves() + t * nleaves + j];
      if (w > best.weight) {
        best.weight = w;
        best.tree = t;
        best.leaf = j;
      }
    }
  }
  best.path = tree::path_to_leaf(cfg.depth, best.leaf);
  return best;
}

Tensor forest_loss_on_tape(const ForestConfig& cfg, const Tensor& logits,
                           const LeafParams& leaves, const Tensor& target) {
  const std::size_t splits = cfg.splits_per_tree();
  const std::size_t nleaves = cfg.leaves_per_tree();
  const std::size_t k = cfg.prediction_dim;
  const std::size_t batch = logits.dim(0);

  Tensor s = sigmoid(logits);
  const Tensor ones = Tensor::full({batch, 1}, 1.0);
  Tensor prediction;  // accumulated over trees
  for (std::size_t t = 0; t < cfg.num_trees; ++t) {
    Tensor st = slice_cols(s, t * splits, splits);
    std::vector<Tensor> arrival(2 * splits + 1);
    arrival[0] = ones;
    for (std::size_t i = 0; i < splits; ++i) {
      Tensor col = slice_cols(st, i, 1);
      arrival[tree::left(i)] = mul(arrival[i], col);
      arrival[tree::right(i)] = mul(arrival[i], sub(ones, col));
    }
    for (std::size_t j = 0; j < nleaves; ++j) {
      Tensor pj({1, k});
      for (std::size_t d = 0; d < k; ++d) pj[d] = leaves.predictions[(t * nleaves + j) * k + d];
      Tensor contrib = matmul(arrival[splits + j], pj);
      prediction = (t == 0 && j == 0) ? contrib : add(prediction, contrib);
    }
  }
  prediction = scale_by(prediction, 1.0 / static_cast<double>(cfg.num_trees));
  Tensor diff = sub(prediction, target);
  return scale_by(sum(mul(diff, diff)), 0.5);
}

}  // namespace rndf

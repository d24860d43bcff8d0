#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rndf/tape.hpp"

namespace rndf {

/// Full binary trees, breadth-first indexed: root 0, children of i at 2i+1
/// and 2i+2. A tree of depth d has 2^d - 1 splitting nodes and 2^d leaves;
/// node ids [0, 2^d-1) are splits, the rest are leaves.
struct ForestConfig {
  std::size_t num_trees = 0;
  std::size_t depth = 0;
  std::size_t prediction_dim = 1;

  std::size_t splits_per_tree() const { return (std::size_t{1} << depth) - 1; }
  std::size_t leaves_per_tree() const { return std::size_t{1} << depth; }
  std::size_t total_splits() const { return num_trees * splits_per_tree(); }
  std::size_t total_leaves() const { return num_trees * leaves_per_tree(); }

  void validate() const;
};

namespace tree {
inline std::size_t left(std::size_t i) { return 2 * i + 1; }
inline std::size_t right(std::size_t i) { return 2 * i + 2; }
inline std::size_t parent(std::size_t i) { return (i - 1) / 2; }
/// Root-to-leaf splitting nodes with the turn taken at each (true = left).
std::vector<std::pair<std::size_t, bool>> path_to_leaf(std::size_t depth, std::size_t leaf);
}  // namespace tree

/// Per-sample soft-routing state, tree-major columns.
struct RoutingState {
  Tensor scores;        // batch x total_splits, in [kSigmoidEps, 1-kSigmoidEps]
  Tensor leaf_weights;  // batch x total_leaves, rows sum to 1 per tree
};

/// Per-leaf regression heads: a prediction vector and an SPD covariance.
/// Rows are tree-major, matching RoutingState.
struct LeafParams {
  std::size_t num_leaves = 0;
  std::size_t dim = 0;
  Tensor predictions;              // num_leaves x dim
  std::vector<Tensor> covariances;  // per leaf, dim x dim
};

/// clamp(sigmoid(logits)); always returns an untracked tensor. The logit
/// layout is already tree-major, matching the neuron assignment.
Tensor routing_scores(const Tensor& logits);

/// Root-to-leaf products of s (left turns) and 1-s (right turns).
Tensor leaf_weights(const ForestConfig& cfg, const Tensor& scores);

RoutingState route(const ForestConfig& cfg, const Tensor& logits);

/// Convex-combination prediction, averaged over trees so that leaf weights
/// sum to 1 at the forest level.
Tensor forest_predict(const ForestConfig& cfg, const Tensor& weights, const LeafParams& leaves);

/// 1/2 sum over the batch of squared prediction error.
double squared_loss(const Tensor& prediction, const Tensor& target);

/// Analytic gradient of squared_loss(forest_predict(...)) with respect to
/// every routing score, per sample; column sums give the batch-total form.
Tensor grad_scores(const ForestConfig& cfg, const Tensor& prediction, const Tensor& target,
                   const Tensor& weights, const LeafParams& leaves, const Tensor& scores);

struct MaxWeightLeaf {
  std::size_t tree = 0;
  std::size_t leaf = 0;
  double weight = 0.0;
  std::vector<std::pair<std::size_t, bool>> path;  // (split node, went_left)
};

/// Argmax over all leaves of all trees for one sample row; ties go to the
/// smallest (tree, leaf).
MaxWeightLeaf max_weight_leaf(const ForestConfig& cfg, const Tensor& weights, std::size_t row);

/// The same composite loss built from primitive tape ops (sigmoid, slices,
/// products). Differentiating this must agree with grad_scores injected
/// through the sigmoid slope; tests check both routes against each other.
Tensor forest_loss_on_tape(const ForestConfig& cfg, const Tensor& logits,
                           const LeafParams& leaves, const Tensor& target);

}  // namespace rndf

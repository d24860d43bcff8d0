#pragma once

#include <optional>
#include <vector>

#include "rndf/forest.hpp"
#include "rndf/rng.hpp"
#include "rndf/tensor.hpp"

namespace rndf {

/// Jitter added to every updated covariance; keeps the smallest eigenvalue
/// at or above this value.
inline constexpr double kCovJitter = 1e-6;
/// Leaves whose total responsibility mass falls below this keep their
/// previous parameters instead of dividing by ~0.
inline constexpr double kMinZetaMass = 1e-12;

/// Frozen-network snapshot the closed-form update runs on: labels plus the
/// probability of each sample reaching each leaf.
struct LeafUpdateBatch {
  Tensor labels;      // n x k
  Tensor leaf_reach;  // n x num_leaves, rows sum to 1 per tree
};

struct LeafUpdateOptions {
  /// Responsibilities are normalized over every leaf of the forest; the
  /// per-tree variant normalizes within each tree instead.
  bool per_tree_normalization = false;
  std::size_t num_trees = 1;  // only consulted by the per-tree variant
  double cov_jitter = kCovJitter;
  double min_mass = kMinZetaMass;
};

/// Multivariate Gaussian density; log-domain internally.
double gaussian_log_density(const std::vector<double>& y, const std::vector<double>& p,
                            const Tensor& cov);
double gaussian_density(const std::vector<double>& y, const std::vector<double>& p,
                        const Tensor& cov);

/// Responsibility of every leaf for every sample: reach * density, normalized
/// per sample. Rows whose terms all vanish get a uniform assignment.
Tensor zeta_matrix(const LeafParams& state, const LeafUpdateBatch& batch,
                   const LeafUpdateOptions& opts = {});

/// Single responsibility entry; thin convenience over zeta_matrix.
double zeta(std::size_t leaf, std::size_t sample, const LeafParams& state,
            const LeafUpdateBatch& batch, const LeafUpdateOptions& opts = {});

/// One closed-form step: responsibility-weighted label means and covariances,
/// responsibilities evaluated at the incoming parameters for both.
LeafParams leaf_update_iteration(const LeafParams& state, const LeafUpdateBatch& batch,
                                 const LeafUpdateOptions& opts = {});

struct LeafUpdateResult {
  LeafParams params;
  /// nll_trace[0] is the starting value, nll_trace[i] the value after
  /// iteration i; non-increasing up to tolerance.
  std::vector<double> nll_trace;
};

LeafUpdateResult run_leaf_update(const LeafParams& state, const LeafUpdateBatch& batch,
                                 std::size_t iterations, const LeafUpdateOptions& opts = {});

/// -sum_t log sum_j reach_j(t) * density_j(y_t), via log-sum-exp.
double forest_nll(const LeafParams& state, const LeafUpdateBatch& batch);

/// Random leaf initialization: predictions uniform over the per-dimension
/// label range, covariance diag((range/4)^2).
LeafParams init_leaf_params(const ForestConfig& cfg, const Tensor& labels, Rng& rng);

}  // namespace rndf

#include "rndf/leaf_update.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace rndf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Lower-triangular Cholesky factor of a small SPD matrix.
struct Cholesky {
  std::size_t k = 0;
  std::vector<double> lower;
  double log_det = 0.0;  // of the original matrix
};

std::optional<Cholesky> cholesky(const Tensor& cov) {
  if (cov.ndim() != 2 || cov.dim(0) != cov.dim(1)) {
    throw DimensionError("covariance must be square, got " + shape_str(cov.shape()));
  }
  const std::size_t k = cov.dim(0);
  Cholesky ch;
  ch.k = k;
  ch.lower.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov[i * k + j];
      for (std::size_t m = 0; m < j; ++m) s -= ch.lower[i * k + m] * ch.lower[j * k + m];
      if (i == j) {
        if (!(s > 0.0)) return std::nullopt;
        ch.lower[i * k + i] = std::sqrt(s);
        ch.log_det += 2.0 * std::log(ch.lower[i * k + i]);
      } else {
        ch.lower[i * k + j] = s / ch.lower[j * k + j];
      }
    }
  }
  return ch;
}

/// Squared Mahalanobis distance via forward substitution L z = d.
double mahalanobis_sq(const Cholesky& ch, std::vector<double> d) {
  double q = 0.0;
  for (std::size_t i = 0; i < ch.k; ++i) {
    double z = d[i];
    for (std::size_t j = 0; j < i; ++j) z -= ch.lower[i * ch.k + j] * d[j];
    z /= ch.lower[i * ch.k + i];
    d[i] = z;
    q += z * z;
  }
  return q;
}

double log_density(const Cholesky& ch, std::vector<double> diff) {
  constexpr double log2pi = 1.8378770664093453;  // log(2*pi)
  return -0.5 * (static_cast<double>(ch.k) * log2pi + ch.log_det + mahalanobis_sq(ch, std::move(diff)));
}

std::vector<Cholesky> factor_all(const LeafParams& state) {
  std::vector<Cholesky> factors;
  factors.reserve(state.num_leaves);
  for (std::size_t j = 0; j < state.num_leaves; ++j) {
    auto ch = cholesky(state.covariances[j]);
    if (!ch) {
      throw NumericError("leaf covariance " + std::to_string(j) +
                         " is not positive definite despite regularization");
    }
    factors.push_back(std::move(*ch));
  }
  return factors;
}

std::vector<double> row_diff(const Tensor& labels, std::size_t t, const Tensor& preds,
                             std::size_t j, std::size_t k) {
  std::vector<double> d(k);
  for (std::size_t i = 0; i < k; ++i) {
    d[i] = labels[t * k + i] - preds[j * k + i];
  }
  return d;
}

void check_batch(const LeafParams& state, const LeafUpdateBatch& batch) {
  if (batch.labels.ndim() != 2 || batch.leaf_reach.ndim() != 2) {
    throw DimensionError("leaf update batch tensors must be 2-D");
  }
  if (batch.labels.dim(0) != batch.leaf_reach.dim(0)) {
    throw DimensionError("labels and leaf_reach disagree on sample count");
  }
  if (batch.labels.dim(1) != state.dim || batch.leaf_reach.dim(1) != state.num_leaves) {
    throw DimensionError("leaf update batch does not match leaf parameters");
  }
  if (batch.labels.dim(0) == 0) throw ContractError("leaf update batch is empty");
}

}  // namespace

double gaussian_log_density(const std::vector<double>& y, const std::vector<double>& p,
                            const Tensor& cov) {
  if (y.size() != p.size() || cov.ndim() != 2 || cov.dim(0) != y.size()) {
    throw DimensionError("gaussian density dimension mismatch");
  }
  auto ch = cholesky(cov);
  if (!ch) throw NumericError("gaussian density requires a positive-definite covariance");
  std::vector<double> d(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = y[i] - p[i];
  return log_density(*ch, std::move(d));
}

double gaussian_density(const std::vector<double>& y, const std::vector<double>& p,
                        const Tensor& cov) {
  return std::exp(gaussian_log_density(y, p, cov));
}

Tensor zeta_matrix(const LeafParams& state, const LeafUpdateBatch& batch,
                   const LeafUpdateOptions& opts) {
  check_batch(state, batch);
  const std::size_t n = batch.labels.dim(0);
  const std::size_t L = state.num_leaves;
  const std::size_t k = state.dim;
  const auto factors = factor_all(state);

  std::size_t groups = 1, group_size = L;
  if (opts.per_tree_normalization) {
    if (opts.num_trees == 0 || L % opts.num_trees != 0) {
      throw ContractError("per-tree normalization needs num_trees dividing the leaf count");
    }
    groups = opts.num_trees;
    group_size = L / opts.num_trees;
  }

  Tensor z({n, L});
  std::vector<double> log_terms(L);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < L; ++j) {
      const double reach = batch.leaf_reach[t * L + j];
      log_terms[j] = reach > 0.0
                         ? std::log(reach) + log_density(factors[j], row_diff(batch.labels, t,
                                                                              state.predictions, j, k))
                         : kNegInf;
    }
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = g * group_size;
      double hi = kNegInf;
      for (std::size_t j = 0; j < group_size; ++j) hi = std::max(hi, log_terms[base + j]);
      if (hi == kNegInf) {
        // Degenerate sample: no leaf reaches it with any density mass.
        for (std::size_t j = 0; j < group_size; ++j) {
          z[t * L + base + j] = 1.0 / static_cast<double>(group_size);
        }
        continue;
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) {
        if (log_terms[base + j] != kNegInf) denom += std::exp(log_terms[base + j] - hi);
      }
      for (std::size_t j = 0; j < group_size; ++j) {
        z[t * L + base + j] =
            log_terms[base + j] == kNegInf ? 0.0 : std::exp(log_terms[base + j] - hi) / denom;
      }
    }
  }
  return z;
}

double zeta(std::size_t leaf, std::size_t sample, const LeafParams& state,
            const LeafUpdateBatch& batch, const LeafUpdateOptions& opts) {
  if (leaf >= state.num_leaves || sample >= batch.labels.dim(0)) {
    throw ContractError("zeta index out of range");
  }
  const Tensor z = zeta_matrix(state, batch, opts);
  return z[sample * state.num_leaves + leaf];
}

LeafParams leaf_update_iteration(const LeafParams& state, const LeafUpdateBatch& batch,
                                 const LeafUpdateOptions& opts) {
  check_batch(state, batch);
  const std::size_t n = batch.labels.dim(0);
  const std::size_t L = state.num_leaves;
  const std::size_t k = state.dim;
  const Tensor z = zeta_matrix(state, batch, opts);

  LeafParams next = state;
  std::vector<double> p_new(k);
  for (std::size_t j = 0; j < L; ++j) {
    double mass = 0.0;
    for (std::size_t t = 0; t < n; ++t) mass += z[t * L + j];
    if (mass < opts.min_mass) continue;  // starving leaf keeps its parameters

    std::fill(p_new.begin(), p_new.end(), 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double zv = z[t * L + j];
      if (zv == 0.0) continue;
      for (std::size_t d = 0; d < k; ++d) p_new[d] += zv * batch.labels[t * k + d];
    }
    for (std::size_t d = 0; d < k; ++d) {
      p_new[d] /= mass;
      next.predictions[j * k + d] = p_new[d];
    }

    Tensor cov({k, k});
    for (std::size_t t = 0; t < n; ++t) {
      const double zv = z[t * L + j];
      if (zv == 0.0) continue;
      for (std::size_t a = 0; a < k; ++a) {
        const double da = batch.labels[t * k + a] - p_new[a];
        for (std::size_t b = 0; b < k; ++b) {
          const double db = batch.labels[t * k + b] - p_new[b];
          cov[a * k + b] += zv * da * db;
        }
      }
    }
    for (std::size_t i = 0; i < k * k; ++i) cov[i] /= mass;
    for (std::size_t d = 0; d < k; ++d) cov[d * k + d] += opts.cov_jitter;
    next.covariances[j] = std::move(cov);
  }
  return next;
}

LeafUpdateResult run_leaf_update(const LeafParams& state, const LeafUpdateBatch& batch,
                                 std::size_t iterations, const LeafUpdateOptions& opts) {
  if (iterations == 0) throw ContractError("run_leaf_update requires at least one iteration");
  LeafUpdateResult res;
  res.params = state;
  res.nll_trace.reserve(iterations + 1);
  res.nll_trace.push_back(forest_nll(res.params, batch));
  for (std::size_t it = 0; it < iterations; ++it) {
    res.params = leaf_update_iteration(res.params, batch, opts);
    res.nll_trace.push_back(forest_nll(res.params, batch));
  }
  return res;
}

double forest_nll(const LeafParams& state, const LeafUpdateBatch& batch) {
  check_batch(state, batch);
  const std::size_t n = batch.labels.dim(0);
  const std::size_t L = state.num_leaves;
  const std::size_t k = state.dim;
  const auto factors = factor_all(state);
  double nll = 0.0;
  std::vector<double> log_terms(L);
  for (std::size_t t = 0; t < n; ++t) {
    double hi = kNegInf;
    for (std::size_t j = 0; j < L; ++j) {
      const double reach = batch.leaf_reach[t * L + j];
      log_terms[j] = reach > 0.0
                         ? std::log(reach) + log_density(factors[j], row_diff(batch.labels, t,
                                                                              state.predictions, j, k))
                         : kNegInf;
      hi = std::max(hi, log_terms[j]);
    }
    if (hi == kNegInf) {
      nll = std::numeric_limits<double>::infinity();
      continue;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      if (log_terms[j] != kNegInf) acc += std::exp(log_terms[j] - hi);
    }
    nll -= hi + std::log(acc);
  }
  return nll;
}

LeafParams init_leaf_params(const ForestConfig& cfg, const Tensor& labels, Rng& rng) {
  const std::size_t k = cfg.prediction_dim;
  if (labels.ndim() != 2 || labels.dim(1) != k) {
    throw DimensionError("labels must be n x prediction_dim for leaf initialization");
  }
  const std::size_t n = labels.dim(0);
  if (n == 0) throw ContractError("cannot initialize leaves from an empty label set");

  std::vector<double> lo(k, std::numeric_limits<double>::infinity());
  std::vector<double> hi(k, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t d = 0; d < k; ++d) {
      lo[d] = std::min(lo[d], labels[t * k + d]);
      hi[d] = std::max(hi[d], labels[t * k + d]);
    }
  }

  LeafParams leaves;
  leaves.num_leaves = cfg.total_leaves();
  leaves.dim = k;
  leaves.predictions = Tensor({leaves.num_leaves, k});
  leaves.covariances.reserve(leaves.num_leaves);
  for (std::size_t j = 0; j < leaves.num_leaves; ++j) {
    for (std::size_t d = 0; d < k; ++d) {
      leaves.predictions[j * k + d] = rng.uniform(lo[d], hi[d]);
    }
    Tensor cov({k, k});
    for (std::size_t d = 0; d < k; ++d) {
      const double range = hi[d] - lo[d];
      const double var = std::max((range / 4.0) * (range / 4.0), kCovJitter);
      cov[d * k + d] = var;
    }
    leaves.covariances.push_back(std::move(cov));
  }
  return leaves;
}

}  // namespace rndf

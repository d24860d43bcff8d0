#pragma once

#include <cmath>

#include "rndf/tensor.hpp"

namespace rndf {

struct EvalMetrics {
  double mae = 0.0;
  double cs = 0.0;  // fraction of samples with error <= threshold
};

/// MAE over per-sample errors plus the cumulative score at a threshold.
/// Per-sample error is |P - y| for scalar labels and the Euclidean norm of
/// the residual otherwise. The CS comparison is <=.
inline EvalMetrics mae_cs(const Tensor& predictions, const Tensor& labels, double threshold) {
  if (!same_shape(predictions, labels) || predictions.ndim() != 2) {
    throw DimensionError("mae_cs expects matching n x k tensors");
  }
  const std::size_t n = predictions.dim(0);
  const std::size_t k = predictions.dim(1);
  if (n == 0) throw ContractError("mae_cs requires a non-empty batch");
  EvalMetrics m;
  std::size_t within = 0;
  for (std::size_t t = 0; t < n; ++t) {
    double err;
    if (k == 1) {
      err = std::abs(predictions[t] - labels[t]);
    } else {
      double sq = 0.0;
      for (std::size_t d = 0; d < k; ++d) {
        const double diff = predictions[t * k + d] - labels[t * k + d];
        sq += diff * diff;
      }
      err = std::sqrt(sq);
    }
    m.mae += err;
    if (err <= threshold) ++within;
  }
  m.mae /= static_cast<double>(n);
  m.cs = static_cast<double>(within) / static_cast<double>(n);
  return m;
}

}  // namespace rndf

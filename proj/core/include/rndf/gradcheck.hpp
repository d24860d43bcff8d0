#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rndf/model.hpp"

namespace rndf {

/// rel = |a - b| / max(1, |a|, |b|): relative for O(1)+ gradients, absolute
/// near zero where central differences are dominated by roundoff.
double gradcheck_rel_err(double analytic, double numeric);

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Seeded finite-difference suite over the tensor ops, the analytic forest
/// score gradient, the full composite model gradient, and the agreement of
/// the injected-gradient route with differentiating the forest directly on
/// the tape. corrupt_one perturbs one analytic gradient as a negative
/// control for the checker itself.
std::vector<GradCheckReport> run_gradient_checks(std::uint64_t seed, bool corrupt_one = false);

/// Sum-form squared loss of the standardized-space forest prediction.
double composite_loss(const Model& m, const Tensor& x, const Tensor& y_std);
/// Backbone parameter gradients of composite_loss via the analytic score
/// gradient injected at the logit layer (the training route), in
/// BackboneParams::all() order.
std::vector<Tensor> composite_gradients_injected(const Model& m, const Tensor& x,
                                                 const Tensor& y_std);
/// Same gradients with the forest differentiated directly on the tape.
std::vector<Tensor> composite_gradients_tape(const Model& m, const Tensor& x,
                                             const Tensor& y_std);

}  // namespace rndf

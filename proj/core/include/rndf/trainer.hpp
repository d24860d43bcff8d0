#pragma once

#include <functional>
#include <vector>

#include "rndf/data.hpp"
#include "rndf/metrics.hpp"
#include "rndf/model.hpp"

namespace rndf {

struct TrainConfig {
  std::size_t batch_size = 50;
  std::size_t leaf_update_period = 50;  // SGD batches between leaf updates (B_n)
  std::size_t leaf_batch = 500;         // samples drawn per leaf update round
  std::size_t leaf_iters = 20;          // update-rule iterations per round
  double lr = 0.5;
  double momentum = 0.9;
  std::size_t epochs = 1;
  std::size_t plateau_patience = 3;
  double plateau_min_delta = 1e-3;
  std::uint64_t seed = 0;
  /// Global-norm gradient clip; 0 disables. A NaN guard, not a tuning knob.
  double clip_norm = 100.0;
  /// Train against standardized labels; predictions are mapped back through
  /// the model's label affine. Leaf parameters live in the same space.
  bool standardize_labels = true;
  /// Redraw the leaf-update batch on every iteration instead of reusing one
  /// draw across all leaf_iters iterations.
  bool leaf_resample_per_iter = false;
  /// Per-tree responsibility normalization instead of whole-forest.
  bool zeta_per_tree = false;
  double cs_threshold = 5.0;

  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> velocity;  // mirrors parameter shapes
  double lr = 0.0;
  std::size_t plateau_counter = 0;
  double best_val_mae = 0.0;
  bool has_best = false;
};

OptimizerState make_optimizer(const BackboneParams& params, const TrainConfig& cfg);

/// v <- momentum * v + g; theta <- theta - lr * v. Gradients are clipped to
/// cfg.clip_norm (global norm) first; non-finite gradients abort.
void sgd_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, OptimizerState& opt,
              const TrainConfig& cfg);

/// Halves the learning rate after plateau_patience consecutive validation
/// passes without an improvement of at least plateau_min_delta. Returns true
/// when the rate was halved on this call.
bool lr_plateau(OptimizerState& opt, double val_mae, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;        // 1-based
  std::size_t batches_seen = 0; // cumulative SGD batches
  double mean_loss = 0.0;       // standardized-space batch objective, averaged
  double lr = 0.0;
  double train_mae = 0.0;       // raw label space, running over the epoch
  double val_mae = 0.0;
  double val_cs = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochStats&, const Model&, bool is_best)> on_epoch;
  /// Test instrumentation; called after every SGD batch.
  std::function<void(std::size_t batch_index, const Model&)> on_batch;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_mae = 0.0;
};

/// Alternating optimization: SGD-with-momentum batches on the network with
/// leaves frozen, one leaf update round (leaf_batch samples, leaf_iters
/// closed-form iterations) every leaf_update_period batches with the network
/// frozen. The period counter carries across epochs.
TrainResult train(Model& model, BatchSource& train_data, BatchSource* val_data,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Deterministic center-path evaluation in raw label space.
EvalMetrics evaluate(const Model& model, BatchSource& data, double threshold = 5.0);

}  // namespace rndf

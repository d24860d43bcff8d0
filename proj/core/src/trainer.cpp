#include "rndf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rndf {

namespace {

constexpr std::uint64_t kTrainStreamTag = 0x7261;
constexpr std::uint64_t kEvalItemTag = 0x65766C;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (leaf_update_period == 0) throw ConfigError("train.leaf_update_period must be positive");
  if (leaf_batch == 0) throw ConfigError("train.leaf_batch must be positive");
  if (leaf_iters == 0) throw ConfigError("train.leaf_iters must be positive");
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0,1)");
  if (plateau_patience == 0) throw ConfigError("train.plateau_patience must be positive");
  if (plateau_min_delta < 0.0) throw ConfigError("train.plateau_min_delta must be non-negative");
  if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be non-negative (0 disables)");
  if (!(cs_threshold >= 0.0)) throw ConfigError("train.cs_threshold must be non-negative");
}

OptimizerState make_optimizer(const BackboneParams& params, const TrainConfig& cfg) {
  OptimizerState opt;
  for (const Tensor* p : params.all()) opt.velocity.emplace_back(p->shape());
  opt.lr = cfg.lr;
  return opt;
}

void sgd_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, OptimizerState& opt,
              const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != opt.velocity.size()) {
    throw ContractError("sgd_step: parameter, gradient and velocity counts disagree");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!same_shape(*params[i], grads[i])) {
      throw ContractError("sgd_step: gradient shape mismatch at parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("non-finite gradient for parameter " + std::to_string(i) + " of shape " +
                         shape_str(grads[i].shape()));
    }
  }
  double clip_scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& v = opt.velocity[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = cfg.momentum * v[j] + g[j] * clip_scale;
      p[j] -= opt.lr * v[j];
    }
  }
}

bool lr_plateau(OptimizerState& opt, double val_mae, const TrainConfig& cfg) {
  if (!opt.has_best || val_mae < opt.best_val_mae - cfg.plateau_min_delta) {
    opt.best_val_mae = val_mae;
    opt.has_best = true;
    opt.plateau_counter = 0;
    return false;
  }
  ++opt.plateau_counter;
  if (opt.plateau_counter >= cfg.plateau_patience) {
    opt.lr *= 0.5;
    opt.plateau_counter = 0;
    return true;
  }
  return false;
}

namespace {

struct FetchedBatch {
  Tensor features;  // m x d
  Tensor labels;    // m x k (raw)
};

FetchedBatch fetch_rows(BatchSource& src, std::span<const std::size_t> rows,
                        const std::function<std::uint64_t(std::size_t)>& seed_for) {
  const std::size_t d = src.input_dim();
  const std::size_t k = src.label_dim();
  FetchedBatch out;
  out.features = Tensor({rows.size(), d});
  out.labels = Tensor({rows.size(), k});
  std::vector<double> x(d), y(k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    src.fetch(rows[i], x, y, seed_for(rows[i]));
    std::copy(x.begin(), x.end(), out.features.data().begin() + static_cast<long>(i * d));
    std::copy(y.begin(), y.end(), out.labels.data().begin() + static_cast<long>(i * k));
  }
  return out;
}

/// First m entries of a seeded partial Fisher-Yates over [0, n).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

/// Frozen-network reach probabilities for a feature matrix, in chunks.
Tensor leaf_reach_matrix(const Model& model, const Tensor& features) {
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  const std::size_t total_leaves = model.forest_cfg.total_leaves();
  Tensor reach({n, total_leaves});
  const std::size_t chunk = 256;
  BoundBackbone bb = bind_backbone(model.backbone_cfg, model.backbone);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t len = std::min(chunk, n - begin);
    Tensor x({len, d});
    std::copy(features.data().begin() + static_cast<long>(begin * d),
              features.data().begin() + static_cast<long>((begin + len) * d), x.data().begin());
    const Tensor logits = backbone_forward(bb, x);
    const RoutingState rs = route(model.forest_cfg, logits);
    std::copy(rs.leaf_weights.data().begin(), rs.leaf_weights.data().end(),
              reach.data().begin() + static_cast<long>(begin * total_leaves));
  }
  return reach;
}

void leaf_update_round(Model& model, BatchSource& src, const TrainConfig& cfg, Rng& rng,
                       const LeafUpdateOptions& lopts) {
  const std::size_t n = src.size();
  const std::size_t m = std::min(cfg.leaf_batch, n);
  const std::size_t rounds = cfg.leaf_resample_per_iter ? cfg.leaf_iters : 1;
  const std::size_t iters_per_round = cfg.leaf_resample_per_iter ? 1 : cfg.leaf_iters;
  for (std::size_t r = 0; r < rounds; ++r) {
    const auto rows = sample_without_replacement(rng, n, m);
    FetchedBatch fetched =
        fetch_rows(src, rows, [&rng](std::size_t) { return rng.next_u64(); });
    LeafUpdateBatch batch;
    batch.labels = model.to_standardized(fetched.labels);
    batch.leaf_reach = leaf_reach_matrix(model, fetched.features);
    model.leaves = run_leaf_update(model.leaves, batch, iters_per_round, lopts).params;
  }
}

double batch_error_sum(const Tensor& pred_raw, const Tensor& labels_raw) {
  const std::size_t n = pred_raw.dim(0), k = pred_raw.dim(1);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (k == 1) {
      total += std::abs(pred_raw[t] - labels_raw[t]);
    } else {
      double sq = 0.0;
      for (std::size_t d = 0; d < k; ++d) {
        const double diff = pred_raw[t * k + d] - labels_raw[t * k + d];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
    }
  }
  return total;
}

}  // namespace

EvalMetrics evaluate(const Model& model, BatchSource& data, double threshold) {
  const std::size_t n = data.size();
  if (n == 0) throw ContractError("evaluation dataset is empty");
  if (data.input_dim() != model.backbone_cfg.input_dim) {
    throw DimensionError("dataset input_dim " + std::to_string(data.input_dim()) +
                         " does not match the model");
  }
  const std::size_t k = model.forest_cfg.prediction_dim;
  if (data.label_dim() != k) throw DimensionError("dataset label_dim does not match the model");
  Tensor preds({n, k});
  Tensor labels({n, k});
  const std::size_t chunk = 256;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t len = std::min(chunk, n - begin);
    rows.resize(len);
    std::iota(rows.begin(), rows.end(), begin);
    FetchedBatch fetched =
        fetch_rows(data, rows, [](std::size_t row) { return mix_seed(kEvalItemTag, row); });
    const Tensor p = model.predict(fetched.features);
    std::copy(p.data().begin(), p.data().end(),
              preds.data().begin() + static_cast<long>(begin * k));
    std::copy(fetched.labels.data().begin(), fetched.labels.data().end(),
              labels.data().begin() + static_cast<long>(begin * k));
  }
  return mae_cs(preds, labels, threshold);
}

TrainResult train(Model& model, BatchSource& train_data, BatchSource* val_data,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  model.validate();
  const std::size_t n = train_data.size();
  if (n == 0) throw ContractError("training dataset is empty");
  if (train_data.input_dim() != model.backbone_cfg.input_dim) {
    throw DimensionError("dataset input_dim does not match backbone.input_dim");
  }
  const std::size_t k = model.forest_cfg.prediction_dim;
  if (train_data.label_dim() != k) throw DimensionError("dataset label_dim does not match forest");
  const std::size_t batches_per_epoch = n / cfg.batch_size;
  if (batches_per_epoch == 0) {
    throw ContractError("train.batch_size exceeds the dataset size");
  }
  const std::size_t total_splits = model.forest_cfg.total_splits();

  Rng rng(mix_seed(cfg.seed, kTrainStreamTag));
  OptimizerState opt = make_optimizer(model.backbone, cfg);
  LeafUpdateOptions lopts;
  lopts.per_tree_normalization = cfg.zeta_per_tree;
  lopts.num_trees = model.forest_cfg.num_trees;

  TrainResult result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t total_batches = 0;
  double best_ckpt = 0.0;
  bool have_ckpt = false;
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    double err_sum = 0.0;
    std::size_t err_count = 0;

    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::span<const std::size_t> rows(order.data() + b * cfg.batch_size, cfg.batch_size);
      FetchedBatch fetched =
          fetch_rows(train_data, rows, [&rng](std::size_t) { return rng.next_u64(); });
      const Tensor y_std = model.to_standardized(fetched.labels);

      Tape tape;
      BoundBackbone bb =
          bind_backbone(tape, model.backbone_cfg, model.backbone, /*requires_grad=*/true);
      const Tensor x = tape.leaf(fetched.features.detached(), false);
      const Tensor logits = backbone_forward(bb, x);
      const RoutingState rs = route(model.forest_cfg, logits);
      const Tensor prediction = forest_predict(model.forest_cfg, rs.leaf_weights, model.leaves);
      loss_sum += squared_loss(prediction, y_std) * inv_batch;

      // Analytic score gradient, chained through the sigmoid slope and
      // scaled to the batch-mean objective, then injected at the logits.
      const Tensor g_scores =
          grad_scores(model.forest_cfg, prediction, y_std, rs.leaf_weights, model.leaves, rs.scores);
      Tensor seed({cfg.batch_size, total_splits});
      for (std::size_t i = 0; i < seed.size(); ++i) {
        seed[i] = g_scores[i] * sigmoid_slope(logits[i]) * inv_batch;
      }
      tape.backward_from(logits, seed);

      auto bound = bb.vars.all();
      auto params = model.backbone.all();
      std::vector<Tensor> grads;
      grads.reserve(bound.size());
      for (const Tensor* v : bound) {
        grads.push_back(tape.has_grad(*v) ? tape.grad(*v).detached() : Tensor(v->shape()));
      }
      sgd_step(params, grads, opt, cfg);
      ++total_batches;

      err_sum += batch_error_sum(model.to_raw(prediction), fetched.labels);
      err_count += cfg.batch_size;

      if (hooks.on_batch) hooks.on_batch(total_batches, model);
      if (total_batches % cfg.leaf_update_period == 0) {
        leaf_update_round(model, train_data, cfg, rng, lopts);
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.batches_seen = total_batches;
    st.mean_loss = loss_sum / static_cast<double>(batches_per_epoch);
    st.lr = opt.lr;  // rate in effect during this epoch
    st.train_mae = err_sum / static_cast<double>(err_count);
    if (val_data != nullptr) {
      const EvalMetrics vm = evaluate(model, *val_data, cfg.cs_threshold);
      st.val_mae = vm.mae;
      st.val_cs = vm.cs;
    } else {
      st.val_mae = st.train_mae;
      st.val_cs = 0.0;
    }
    const bool is_best = !have_ckpt || st.val_mae < best_ckpt;
    if (is_best) {
      best_ckpt = st.val_mae;
      have_ckpt = true;
    }
    lr_plateau(opt, st.val_mae, cfg);
    result.history.push_back(st);
    if (hooks.on_epoch) hooks.on_epoch(st, model, is_best);
  }
  result.best_val_mae = best_ckpt;
  return result;
}

}  // namespace rndf

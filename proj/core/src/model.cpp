#include "rndf/model.hpp"

#include <cmath>

namespace rndf {

void Model::validate() const {
  backbone_cfg.validate();
  forest_cfg.validate();
  if (backbone_cfg.num_split_outputs != forest_cfg.total_splits()) {
    throw ConfigError("backbone.num_split_outputs (" +
                      std::to_string(backbone_cfg.num_split_outputs) +
                      ") != forest.num_trees x (2^depth - 1) (" +
                      std::to_string(forest_cfg.total_splits()) + ")");
  }
  if (leaves.num_leaves != forest_cfg.total_leaves() || leaves.dim != forest_cfg.prediction_dim) {
    throw ConfigError("leaf parameters do not match the forest configuration");
  }
  const std::size_t k = forest_cfg.prediction_dim;
  if (label_offset.size() != k || label_scale.size() != k) {
    throw ConfigError("label scaling tensors must have prediction_dim entries");
  }
  for (std::size_t d = 0; d < k; ++d) {
    if (!(label_scale[d] > 0.0)) throw ConfigError("label_scale entries must be positive");
  }
}

Tensor Model::predict_standardized(const Tensor& x) const {
  BoundBackbone bb = bind_backbone(backbone_cfg, backbone);
  Tensor logits = backbone_forward(bb, x);
  RoutingState rs = route(forest_cfg, logits);
  return forest_predict(forest_cfg, rs.leaf_weights, leaves);
}

Tensor Model::to_raw(const Tensor& standardized) const {
  const std::size_t k = forest_cfg.prediction_dim;
  Tensor out = standardized.detached();
  for (std::size_t row = 0; row < out.dim(0); ++row) {
    for (std::size_t d = 0; d < k; ++d) {
      out[row * k + d] = out[row * k + d] * label_scale[d] + label_offset[d];
    }
  }
  return out;
}

Tensor Model::to_standardized(const Tensor& raw) const {
  const std::size_t k = forest_cfg.prediction_dim;
  Tensor out = raw.detached();
  for (std::size_t row = 0; row < out.dim(0); ++row) {
    for (std::size_t d = 0; d < k; ++d) {
      out[row * k + d] = (out[row * k + d] - label_offset[d]) / label_scale[d];
    }
  }
  return out;
}

Tensor Model::predict(const Tensor& x) const { return to_raw(predict_standardized(x)); }

Model make_model(const BackboneConfig& bcfg, const ForestConfig& fcfg, const Tensor& raw_labels,
                 bool standardize_labels) {
  const std::size_t k = fcfg.prediction_dim;
  if (raw_labels.ndim() != 2 || raw_labels.dim(1) != k) {
    throw DimensionError("training labels must be n x prediction_dim");
  }
  Model m;
  m.backbone_cfg = bcfg;
  m.forest_cfg = fcfg;
  m.label_offset = Tensor({1, k});
  m.label_scale = Tensor::full({1, k}, 1.0);
  if (standardize_labels) {
    // Range scaling into [0,1]. Keeps leaf predictions, residuals and the
    // score gradients at the scale the stated learning rate expects.
    const std::size_t n = raw_labels.dim(0);
    for (std::size_t d = 0; d < k; ++d) {
      double lo = raw_labels[d], hi = raw_labels[d];
      for (std::size_t t = 0; t < n; ++t) {
        lo = std::min(lo, raw_labels[t * k + d]);
        hi = std::max(hi, raw_labels[t * k + d]);
      }
      m.label_offset[d] = lo;
      m.label_scale[d] = hi - lo > 1e-12 ? hi - lo : 1.0;
    }
  }
  m.backbone = backbone_init(bcfg);
  Rng leaf_rng(mix_seed(bcfg.seed, 0x1EAF));
  m.leaves = init_leaf_params(fcfg, m.to_standardized(raw_labels), leaf_rng);
  m.validate();
  return m;
}

LogitsOnTape model_logits_on_tape(Tape& tape, const Model& m, const Tensor& input,
                                  bool track_input) {
  LogitsOnTape out;
  Tensor flat({1, input.size()}, input.data());
  out.input_leaf = tape.leaf(std::move(flat), track_input);

  Tensor x = out.input_leaf;
  if (m.backbone_cfg.pool > 1) {
    if (input.ndim() != 3) {
      throw ContractError("a pooled backbone requires a (C,H,W) image input");
    }
    Tensor pool = build_pool_matrix(input.dim(0), input.dim(1), input.dim(2), m.backbone_cfg.pool);
    x = matmul(x, pool);
  }
  if (x.size() != m.backbone_cfg.input_dim) {
    throw DimensionError("input size " + std::to_string(x.size()) +
                         " does not match backbone input_dim " +
                         std::to_string(m.backbone_cfg.input_dim));
  }
  BoundBackbone bb = bind_backbone(tape, m.backbone_cfg, m.backbone, /*requires_grad=*/false);
  out.logits = backbone_forward(bb, x);
  return out;
}

}  // namespace rndf

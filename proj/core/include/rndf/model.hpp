#pragma once

#include "rndf/backbone.hpp"
#include "rndf/forest.hpp"
#include "rndf/leaf_update.hpp"

namespace rndf {

/// Everything a trained predictor consists of. Leaf parameters (and the loss
/// the trainer optimizes) live in standardized label space; label_offset /
/// label_scale map predictions back to raw units and are identity when
/// standardization is disabled.
struct Model {
  BackboneConfig backbone_cfg;
  ForestConfig forest_cfg;
  BackboneParams backbone;
  LeafParams leaves;
  Tensor label_offset;  // 1 x k
  Tensor label_scale;   // 1 x k, strictly positive

  void validate() const;

  /// batch x input_dim (post-pool features) -> batch x k, raw label space.
  Tensor predict(const Tensor& x) const;
  /// Same forward pass, prediction left in standardized space.
  Tensor predict_standardized(const Tensor& x) const;

  Tensor to_raw(const Tensor& standardized) const;
  Tensor to_standardized(const Tensor& raw) const;
};

/// Fresh model: He-style backbone init plus random leaves spread over the
/// (standardized) training label range.
Model make_model(const BackboneConfig& bcfg, const ForestConfig& fcfg, const Tensor& raw_labels,
                 bool standardize_labels);

/// Forward pass to the logits on a tape. Accepts a (C,H,W) image — pooled
/// in-graph when the backbone has a pool front — or an already-flat feature
/// row. input_leaf is the tracked input for gradient lookup.
struct LogitsOnTape {
  Tensor logits;      // 1 x num_split_outputs
  Tensor input_leaf;  // 1 x raw input size
};
LogitsOnTape model_logits_on_tape(Tape& tape, const Model& m, const Tensor& input,
                                  bool track_input);

}  // namespace rndf

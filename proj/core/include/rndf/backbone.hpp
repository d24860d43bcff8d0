#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rndf/rng.hpp"
#include "rndf/tape.hpp"

namespace rndf {

struct BackboneConfig {
  std::size_t input_dim = 0;   // flattened (post-pool) input size
  std::size_t embed_dim = 0;
  std::size_t num_blocks = 0;  // residual blocks between embedding and head
  std::size_t hidden_dim = 0;  // width inside residual blocks and of the first head layer
  std::size_t num_split_outputs = 0;  // one logit column per splitting node, tree-major
  std::size_t pool = 1;        // 2-D average-pool factor applied ahead of the net (1 = none)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Trainable parameters. all() exposes them in a fixed order shared by the
/// optimizer, gradient checks, and checkpoints.
struct BackboneParams {
  Tensor embed_w, embed_b;
  struct Block {
    Tensor w1, b1, w2, b2;  // embed -> hidden -> embed
  };
  std::vector<Block> blocks;
  Tensor head1_w, head1_b;  // embed -> hidden, relu
  Tensor head2_w, head2_b;  // hidden -> num_split_outputs

  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
  std::vector<std::string> names() const;
};

/// Scaled-uniform init with variance 2/fan_in; biases zero; deterministic
/// under cfg.seed.
BackboneParams backbone_init(const BackboneConfig& cfg);

/// Parameters re-registered on a tape for one forward/backward pass, or
/// plain copies for inference when constructed without a tape.
struct BoundBackbone {
  const BackboneConfig* cfg = nullptr;
  BackboneParams vars;
};

BoundBackbone bind_backbone(const BackboneConfig& cfg, const BackboneParams& params);
BoundBackbone bind_backbone(Tape& tape, const BackboneConfig& cfg, const BackboneParams& params,
                            bool requires_grad);

/// x + H_k(x) with H_k = linear -> relu -> linear.
Tensor residual_block(const BoundBackbone& bb, const Tensor& x, std::size_t k);

/// batch x input_dim -> batch x num_split_outputs raw logits.
Tensor backbone_forward(const BoundBackbone& bb, const Tensor& x);

/// Average pooling over flattened (C,H,W) images expressed as a fixed linear
/// map, so the tape needs no dedicated pooling op and saliency can take
/// gradients with respect to the pre-pool image.
Tensor build_pool_matrix(std::size_t channels, std::size_t height, std::size_t width,
                         std::size_t factor);

}  // namespace rndf

#include "rndf/backbone.hpp"

#include <cmath>

namespace rndf {

void BackboneConfig::validate() const {
  if (input_dim == 0) throw ConfigError("backbone.input_dim must be positive");
  if (embed_dim == 0) throw ConfigError("backbone.embed_dim must be positive");
  if (hidden_dim == 0) throw ConfigError("backbone.hidden_dim must be positive");
  if (num_split_outputs == 0) throw ConfigError("backbone.num_split_outputs must be positive");
  if (pool == 0) throw ConfigError("backbone.pool must be positive (1 disables pooling)");
}

std::vector<Tensor*> BackboneParams::all() {
  std::vector<Tensor*> out{&embed_w, &embed_b};
  for (auto& blk : blocks) {
    out.push_back(&blk.w1);
    out.push_back(&blk.b1);
    out.push_back(&blk.w2);
    out.push_back(&blk.b2);
  }
  out.push_back(&head1_w);
  out.push_back(&head1_b);
  out.push_back(&head2_w);
  out.push_back(&head2_b);
  return out;
}

std::vector<const Tensor*> BackboneParams::all() const {
  auto mut = const_cast<BackboneParams*>(this)->all();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> BackboneParams::names() const {
  std::vector<std::string> out{"embed.w", "embed.b"};
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const std::string p = "block" + std::to_string(k) + ".";
    out.push_back(p + "w1");
    out.push_back(p + "b1");
    out.push_back(p + "w2");
    out.push_back(p + "b2");
  }
  out.insert(out.end(), {"head1.w", "head1.b", "head2.w", "head2.b"});
  return out;
}

namespace {

Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  // Uniform on [-L, L] with L = sqrt(6/fan_in) has variance 2/fan_in.
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w({fan_in, fan_out});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

BackboneParams backbone_init(const BackboneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  BackboneParams p;
  p.embed_w = init_weight(rng, cfg.input_dim, cfg.embed_dim);
  p.embed_b = Tensor({1, cfg.embed_dim});
  p.blocks.resize(cfg.num_blocks);
  for (auto& blk : p.blocks) {
    blk.w1 = init_weight(rng, cfg.embed_dim, cfg.hidden_dim);
    blk.b1 = Tensor({1, cfg.hidden_dim});
    blk.w2 = init_weight(rng, cfg.hidden_dim, cfg.embed_dim);
    blk.b2 = Tensor({1, cfg.embed_dim});
  }
  p.head1_w = init_weight(rng, cfg.embed_dim, cfg.hidden_dim);
  p.head1_b = Tensor({1, cfg.hidden_dim});
  p.head2_w = init_weight(rng, cfg.hidden_dim, cfg.num_split_outputs);
  p.head2_b = Tensor({1, cfg.num_split_outputs});
  return p;
}

BoundBackbone bind_backbone(const BackboneConfig& cfg, const BackboneParams& params) {
  BoundBackbone bb;
  bb.cfg = &cfg;
  bb.vars.embed_w = params.embed_w.detached();
  bb.vars.embed_b = params.embed_b.detached();
  bb.vars.blocks.reserve(params.blocks.size());
  for (const auto& blk : params.blocks) {
    bb.vars.blocks.push_back(
        {blk.w1.detached(), blk.b1.detached(), blk.w2.detached(), blk.b2.detached()});
  }
  bb.vars.head1_w = params.head1_w.detached();
  bb.vars.head1_b = params.head1_b.detached();
  bb.vars.head2_w = params.head2_w.detached();
  bb.vars.head2_b = params.head2_b.detached();
  return bb;
}

BoundBackbone bind_backbone(Tape& tape, const BackboneConfig& cfg, const BackboneParams& params,
                            bool requires_grad) {
  BoundBackbone bb = bind_backbone(cfg, params);
  auto vars = bb.vars.all();
  for (Tensor* t : vars) *t = tape.leaf(std::move(*t), requires_grad);
  return bb;
}

Tensor residual_block(const BoundBackbone& bb, const Tensor& x, std::size_t k) {
  if (k >= bb.vars.blocks.size()) throw ContractError("residual block index out of range");
  if (x.ndim() != 2 || x.dim(1) != bb.cfg->embed_dim) {
    throw DimensionError("residual_block expects batch x embed_dim input, got " +
                         shape_str(x.shape()));
  }
  const auto& blk = bb.vars.blocks[k];
  Tensor h = relu(bias_add(matmul(x, blk.w1), blk.b1));
  return add(x, bias_add(matmul(h, blk.w2), blk.b2));
}

Tensor backbone_forward(const BoundBackbone& bb, const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != bb.cfg->input_dim) {
    throw DimensionError("backbone input must be batch x " + std::to_string(bb.cfg->input_dim) +
                         ", got " + shape_str(x.shape()));
  }
  Tensor f = bias_add(matmul(x, bb.vars.embed_w), bb.vars.embed_b);
  for (std::size_t k = 0; k < bb.vars.blocks.size(); ++k) f = residual_block(bb, f, k);
  Tensor h = relu(bias_add(matmul(f, bb.vars.head1_w), bb.vars.head1_b));
  return bias_add(matmul(h, bb.vars.head2_w), bb.vars.head2_b);
}

Tensor build_pool_matrix(std::size_t channels, std::size_t height, std::size_t width,
                         std::size_t factor) {
  if (factor == 0 || height % factor != 0 || width % factor != 0) {
    throw DimensionError("pool factor " + std::to_string(factor) +
                         " does not divide image size " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  const std::size_t oh = height / factor, ow = width / factor;
  Tensor m({channels * height * width, channels * oh * ow});
  const double scale = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t src = (c * height + y) * width + x;
        const std::size_t dst = (c * oh + y / factor) * ow + x / factor;
        m[src * (channels * oh * ow) + dst] = scale;
      }
  return m;
}

}  // namespace rndf

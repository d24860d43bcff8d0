#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "rndf/model.hpp"

namespace rndf {

/// Input-gradient of one routing probability. raw_gradient keeps the full
/// per-channel gradient (the quantity the directional checks probe); map is
/// the per-pixel max-abs channel reduction used for export.
struct DsmResult {
  Tensor raw_gradient;  // input shape: (C,H,W) or (1,d)
  Tensor map;           // (H,W) for images, (1,d) for flat inputs
  double score = 0.0;   // forward routing probability s_i
};

/// Gradient of splitting node `node` (tree-major global index) with respect
/// to the input; for pooled backbones the gradient is taken against the
/// pre-pool image.
DsmResult dsm(const Model& model, const Tensor& input, std::size_t node);

struct SaliencyPathEntry {
  std::size_t node = 0;  // within-tree breadth-first id
  bool went_left = true;
  double score = 0.0;  // forward routing probability at this node
  Tensor map;
  Tensor raw_gradient;
};

struct SaliencyResult {
  std::size_t tree = 0;
  std::size_t leaf = 0;
  double path_weight = 0.0;
  std::vector<SaliencyPathEntry> path;  // root to leaf
  Tensor prediction;                    // 1 x k, raw label space
  std::optional<double> ground_truth;
};

/// Follows the maximum-weight computation path and computes one map per
/// splitting node along it.
SaliencyResult trace_dsm_sequence(const Model& model, const Tensor& input,
                                  std::optional<double> ground_truth = std::nullopt);

/// Writes each map as an 8-bit PGM named node<id>_s<prob>.pgm (min-max
/// normalized; all-equal maps export as zeros) plus a trace.json sidecar.
void export_maps(const SaliencyResult& result, const std::filesystem::path& out_dir);

}  // namespace rndf

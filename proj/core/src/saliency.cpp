#include "rndf/saliency.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "rndf/data.hpp"

namespace rndf {

DsmResult dsm(const Model& model, const Tensor& input, std::size_t node) {
  if (node >= model.forest_cfg.total_splits()) {
    throw ContractError("splitting node " + std::to_string(node) + " out of range (forest has " +
                        std::to_string(model.forest_cfg.total_splits()) + ")");
  }
  Tape tape;
  const LogitsOnTape fwd = model_logits_on_tape(tape, model, input, /*track_input=*/true);
  const Tensor s = sigmoid(slice_cols(fwd.logits, node, 1));
  tape.backward(s);

  DsmResult out;
  out.score = s.item();
  const Tensor& flat_grad = tape.grad(fwd.input_leaf);
  if (input.ndim() == 3) {
    out.raw_gradient = Tensor(input.shape(), flat_grad.data());
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (c == 1) {
      out.map = Tensor({h, w}, flat_grad.data());
    } else {
      out.map = Tensor({h, w});
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double best = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            best = std::max(best, std::abs(out.raw_gradient[(ch * h + y) * w + x]));
          }
          out.map[y * w + x] = best;
        }
    }
  } else {
    out.raw_gradient = Tensor({std::size_t{1}, input.size()}, flat_grad.data());
    out.map = out.raw_gradient.detached();
  }
  return out;
}

SaliencyResult trace_dsm_sequence(const Model& model, const Tensor& input,
                                  std::optional<double> ground_truth) {
  model.validate();
  Tape tape;
  const LogitsOnTape fwd = model_logits_on_tape(tape, model, input, /*track_input=*/false);
  const RoutingState rs = route(model.forest_cfg, fwd.logits);
  const MaxWeightLeaf best = max_weight_leaf(model.forest_cfg, rs.leaf_weights, 0);

  SaliencyResult result;
  result.tree = best.tree;
  result.leaf = best.leaf;
  result.path_weight = best.weight;
  result.ground_truth = ground_truth;
  const Tensor pred_std = forest_predict(model.forest_cfg, rs.leaf_weights, model.leaves);
  result.prediction = model.to_raw(pred_std);

  const std::size_t splits = model.forest_cfg.splits_per_tree();
  for (const auto& [node, went_left] : best.path) {
    SaliencyPathEntry entry;
    entry.node = node;
    entry.went_left = went_left;
    entry.score = rs.scores[best.tree * splits + node];
    DsmResult d = dsm(model, input, best.tree * splits + node);
    entry.map = std::move(d.map);
    entry.raw_gradient = std::move(d.raw_gradient);
    result.path.push_back(std::move(entry));
  }
  return result;
}

namespace {

std::string map_filename(std::size_t node, double score) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "node%zu_s%.4f.pgm", node, score);
  return buf;
}

std::vector<unsigned char> quantize_map(const Tensor& map) {
  double lo = map[0], hi = map[0];
  for (double v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<unsigned char> bytes(map.size());
  if (hi > lo) {
    for (std::size_t i = 0; i < map.size(); ++i) {
      bytes[i] = static_cast<unsigned char>(std::lround((map[i] - lo) / (hi - lo) * 255.0));
    }
  }
  // all-equal maps stay zero
  return bytes;
}

}  // namespace

void export_maps(const SaliencyResult& result, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create output directory " + out_dir.string());

  nlohmann::json sidecar;
  sidecar["tree"] = result.tree;
  sidecar["leaf"] = result.leaf;
  sidecar["path_weight"] = result.path_weight;
  sidecar["nodes"] = nlohmann::json::array();
  sidecar["probs"] = nlohmann::json::array();
  sidecar["maps"] = nlohmann::json::array();
  for (const auto& entry : result.path) {
    sidecar["nodes"].push_back(entry.node);
    sidecar["probs"].push_back(entry.score);
    const std::string name = map_filename(entry.node, entry.score);
    sidecar["maps"].push_back(name);
    const Tensor& map = entry.map;
    const std::size_t h = map.ndim() == 2 ? map.dim(0) : 1;
    const std::size_t w = map.ndim() == 2 ? map.dim(1) : map.size();
    save_pgm(out_dir / name, w, h, quantize_map(map));
  }
  sidecar["prediction"] = nlohmann::json::array();
  for (double v : result.prediction.data()) sidecar["prediction"].push_back(v);
  if (result.ground_truth) {
    sidecar["ground_truth"] = *result.ground_truth;
  } else {
    sidecar["ground_truth"] = nullptr;
  }

  std::ofstream out(out_dir / "trace.json");
  if (!out) throw FormatError("cannot write " + (out_dir / "trace.json").string());
  out << sidecar.dump(2) << "\n";
  if (!out) throw FormatError("failed writing trace.json");
}

}  // namespace rndf

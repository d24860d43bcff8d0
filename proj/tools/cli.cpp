#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rndf/config.hpp"
#include "rndf/gradcheck.hpp"
#include "rndf/persist.hpp"
#include "rndf/saliency.hpp"

namespace rndf::cli {

namespace {

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KeyValueConfig merge_config(const std::string& config_path, const std::vector<std::string>& sets,
                            const std::optional<std::string>& out_dir,
                            const std::optional<std::int64_t>& seed) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::parse_file(config_path);
  for (const auto& s : sets) kv.apply_override(s);
  if (out_dir) kv.set("output.dir", *out_dir);
  if (seed) kv.set("train.seed", std::to_string(*seed));
  return kv;
}

struct Sources {
  std::unique_ptr<BatchSource> train;
  std::unique_ptr<BatchSource> val;
  Tensor train_labels;  // n x k, raw
};

Tensor manifest_labels(const Manifest& m) {
  Tensor labels({std::max<std::size_t>(m.records.size(), 1), 1});
  if (m.records.empty()) throw ContractError("manifest has no records");
  for (std::size_t i = 0; i < m.records.size(); ++i) labels[i] = m.records[i].label;
  return labels;
}

DataView synth_split(const DataConfig& dc, bool train_part) {
  const DataView full =
      synth_dataset(dc.n_train + dc.n_test, dc.input_dim, dc.noise_std, dc.seed);
  const std::size_t begin = train_part ? 0 : dc.n_train;
  const std::size_t count = train_part ? dc.n_train : dc.n_test;
  if (count == 0) throw ConfigError(train_part ? "data.n_train is zero" : "data.n_test is zero");
  DataView part;
  part.features = Tensor({count, dc.input_dim});
  part.labels = Tensor({count, 1});
  std::copy_n(full.features.data().begin() + static_cast<long>(begin * dc.input_dim),
              count * dc.input_dim, part.features.data().begin());
  std::copy_n(full.labels.data().begin() + static_cast<long>(begin), count,
              part.labels.data().begin());
  return part;
}

Sources build_sources(const RunConfig& rc) {
  Sources s;
  if (rc.data.source == DataSourceKind::Synth) {
    if (rc.data.input_dim != rc.backbone.input_dim) {
      throw ConfigError("data.input_dim (" + std::to_string(rc.data.input_dim) +
                        ") must equal backbone.input_dim (" +
                        std::to_string(rc.backbone.input_dim) + ") for synthetic data");
    }
    DataView train_view = synth_split(rc.data, true);
    s.train_labels = train_view.labels.detached();
    s.train = std::make_unique<MatrixSource>(std::move(train_view));
    if (rc.data.n_test > 0) {
      s.val = std::make_unique<MatrixSource>(synth_split(rc.data, false));
    }
    return s;
  }
  const Manifest train_manifest = load_manifest(rc.data.manifest, rc.data.root);
  if (train_manifest.records.empty()) {
    throw ContractError("training manifest " + rc.data.manifest + " has no records");
  }
  s.train_labels = manifest_labels(train_manifest);
  PreprocessConfig train_pre = rc.preprocess;
  train_pre.train_mode = true;
  s.train = std::make_unique<ImageSource>(train_manifest, train_pre, rc.backbone.pool);
  if (s.train->input_dim() != rc.backbone.input_dim) {
    throw ConfigError("image pipeline yields input_dim " + std::to_string(s.train->input_dim()) +
                      ", backbone.input_dim is " + std::to_string(rc.backbone.input_dim));
  }
  if (!rc.data.val_manifest.empty()) {
    PreprocessConfig val_pre = rc.preprocess;
    val_pre.train_mode = false;
    s.val = std::make_unique<ImageSource>(load_manifest(rc.data.val_manifest, rc.data.root),
                                          val_pre, rc.backbone.pool);
  }
  return s;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::optional<std::string>& out_dir, const std::optional<std::int64_t>& seed,
              std::ostream& out) {
  const KeyValueConfig kv = merge_config(config_path, sets, out_dir, seed);
  const RunConfig rc = RunConfig::from(kv);
  Sources sources = build_sources(rc);

  const std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream echo(dir / "effective.cfg");
    if (!echo) throw FormatError("cannot write " + (dir / "effective.cfg").string());
    echo << rc.echo();
  }

  Model model = make_model(rc.backbone, rc.forest, sources.train_labels,
                           rc.train.standardize_labels);

  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw FormatError("cannot write " + (dir / "metrics.csv").string());
  metrics << "epoch,batch,loss,lr,train_mae,val_mae,val_cs\n";

  const std::filesystem::path best_path = dir / "best.rndf";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& st, const Model& m, bool is_best) {
    metrics << st.epoch << "," << st.batches_seen << "," << fmt_real(st.mean_loss) << ","
            << fmt_real(st.lr) << "," << fmt_real(st.train_mae) << "," << fmt_real(st.val_mae)
            << "," << fmt_real(st.val_cs) << "\n";
    metrics.flush();
    if (is_best) save_checkpoint(m, best_path);
    out << "epoch " << st.epoch << "  loss " << fmt_real(st.mean_loss) << "  val_mae "
        << fmt_real(st.val_mae) << "  val_cs " << fmt_real(st.val_cs) << "\n";
  };

  const TrainResult res = train(model, *sources.train, sources.val.get(), rc.train, hooks);
  save_checkpoint(model, dir / "final.rndf");
  out << "done: best val MAE " << fmt_real(res.best_val_mae) << "; wrote " << best_path.string()
      << " and " << (dir / "final.rndf").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& root,
             const std::string& config_path, const std::vector<std::string>& sets,
             double threshold, std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  std::unique_ptr<BatchSource> source;
  if (!manifest.empty()) {
    KeyValueConfig kv = merge_config(config_path, sets, std::nullopt, std::nullopt);
    kv.set("data.source", "manifest");
    kv.set("data.manifest", manifest);
    kv.set("data.root", root.empty() ? "." : root);
    const RunConfig rc = RunConfig::from(kv);
    PreprocessConfig pre = rc.preprocess;
    pre.train_mode = false;
    source = std::make_unique<ImageSource>(load_manifest(manifest, rc.data.root), pre,
                                           model.backbone_cfg.pool);
  } else {
    if (config_path.empty()) {
      throw ConfigError("eval needs --manifest or a --config with a data section");
    }
    const RunConfig rc = RunConfig::from(merge_config(config_path, sets, std::nullopt, std::nullopt));
    if (rc.data.source == DataSourceKind::Synth) {
      source = std::make_unique<MatrixSource>(synth_split(rc.data, false));
    } else {
      PreprocessConfig pre = rc.preprocess;
      pre.train_mode = false;
      const std::string m = rc.data.val_manifest.empty() ? rc.data.manifest : rc.data.val_manifest;
      source = std::make_unique<ImageSource>(load_manifest(m, rc.data.root), pre,
                                             model.backbone_cfg.pool);
    }
  }
  const EvalMetrics metrics = evaluate(model, *source, threshold);
  out << "MAE " << fmt_real(metrics.mae) << "\n";
  out << "CS(" << fmt_real(threshold) << ") " << fmt_real(metrics.cs) << "\n";
  return 0;
}

int cmd_visualize(const std::string& checkpoint, const std::string& image_path,
                  const std::string& out_dir, const std::optional<double>& label,
                  const std::string& config_path, const std::vector<std::string>& sets,
                  std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  Tensor image = load_image(image_path);
  if (!config_path.empty() || !sets.empty()) {
    const RunConfig rc = RunConfig::from(merge_config(config_path, sets, std::nullopt, std::nullopt));
    PreprocessConfig pre = rc.preprocess;
    pre.train_mode = false;
    Rng rng(0);  // eval mode draws nothing
    image = preprocess(image, pre, rng);
  }
  std::optional<double> gt;
  if (label) gt = *label;
  const SaliencyResult result = trace_dsm_sequence(model, image, gt);
  export_maps(result, out_dir);
  out << "tree " << result.tree << " leaf " << result.leaf << " path_weight "
      << fmt_real(result.path_weight) << "\n";
  out << "prediction " << fmt_real(result.prediction[0]) << "\n";
  out << "wrote " << result.path.size() << " maps to " << out_dir << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt, std::ostream& out) {
  const auto reports = run_gradient_checks(seed, corrupt);
  bool all_pass = true;
  for (const auto& r : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s max_rel_err=%.3e tol=%.0e %s", r.name.c_str(),
                  r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
    out << line << "\n";
    all_pass = all_pass && r.pass;
  }
  out << (all_pass ? "gradcheck: all checks passed" : "gradcheck: FAILURES above tolerance")
      << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"residual neural decision forest: train, evaluate, visualize"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> out_dir;
  std::optional<std::int64_t> seed_flag;

  auto* train_cmd = app.add_subcommand("train", "train a model per the config");
  train_cmd->add_option("--config", config_path, "config file (flat key = value lines)");
  train_cmd->add_option("--set", sets, "override, key=value; repeatable");
  train_cmd->add_option("--out", out_dir, "output directory (overrides output.dir)");
  train_cmd->add_option("--seed", seed_flag, "override train.seed");

  std::string checkpoint, manifest, root, image_path, vis_out;
  double threshold = 5.0;
  std::optional<double> label;

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (MAE / CS)");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest, "evaluation manifest CSV");
  eval_cmd->add_option("--root", root, "image root for the manifest");
  eval_cmd->add_option("--config", config_path, "config for preprocessing / synth data");
  eval_cmd->add_option("--set", sets, "override, key=value; repeatable");
  eval_cmd->add_option("--threshold", threshold, "CS threshold (default 5)");

  auto* vis_cmd = app.add_subcommand("visualize", "export decision saliency maps for one image");
  vis_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  vis_cmd->add_option("--image", image_path, "input image (PGM/PPM)")->required();
  vis_cmd->add_option("--out", vis_out, "output directory")->required();
  vis_cmd->add_option("--label", label, "ground-truth label for the sidecar");
  vis_cmd->add_option("--config", config_path, "config providing eval preprocessing");
  vis_cmd->add_option("--set", sets, "override, key=value; repeatable");

  std::uint64_t gc_seed = 0;
  bool corrupt = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference verification suite");
  gc_cmd->add_option("--seed", gc_seed, "suite seed");
  gc_cmd->add_flag("--corrupt", corrupt, "corrupt one gradient (checker self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, sets, out_dir, seed_flag, out);
    if (eval_cmd->parsed()) {
      return cmd_eval(checkpoint, manifest, root, config_path, sets, threshold, out);
    }
    if (vis_cmd->parsed()) {
      return cmd_visualize(checkpoint, image_path, vis_out, label, config_path, sets, out);
    }
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, corrupt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "no command given\n";
  return 2;
}

}  // namespace rndf::cli

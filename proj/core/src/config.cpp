#include "rndf/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rndf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + " line " + std::to_string(line_no) +
                        ": expected `key = value`, got `" + t + "`");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
    }
    kv.entries_[key] = value;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_text(text.str(), path.string());
}

void KeyValueConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("--set expects key=value, got `" + assignment + "`");
  }
  entries_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  mark_known(key);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto v = get(key);
  return v ? *v : fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t consumed = 0;
  std::int64_t parsed = 0;
  try {
    parsed = std::stoll(*v, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != v->size() || v->empty()) {
    throw ConfigError("config key " + key + ": expected an integer, got `" + *v + "`");
  }
  return parsed;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError("config key " + key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

double KeyValueConfig::get_real(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::size_t consumed = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(*v, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != v->size() || v->empty() || !std::isfinite(parsed)) {
    throw ConfigError("config key " + key + ": expected a finite number, got `" + *v + "`");
  }
  return parsed;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got `" + *v + "`");
}

std::string KeyValueConfig::require_string(const std::string& key) const {
  const auto v = get(key);
  if (!v || v->empty()) throw ConfigError("missing required config key " + key);
  return *v;
}

void KeyValueConfig::mark_known(const std::string& key) const { known_.push_back(key); }

void KeyValueConfig::reject_unknown() const {
  for (const auto& [key, value] : entries_) {
    if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
      throw ConfigError("unknown config key " + key);
    }
  }
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [key, value] : entries_) out << key << " = " << value << "\n";
  return out.str();
}

RunConfig RunConfig::from(const KeyValueConfig& kv) {
  RunConfig rc;

  rc.forest.num_trees = kv.get_uint("forest.num_trees", 5);
  rc.forest.depth = kv.get_uint("forest.depth", 6);
  rc.forest.prediction_dim = kv.get_uint("forest.prediction_dim", 1);
  rc.forest.validate();

  rc.backbone.input_dim = kv.get_uint("backbone.input_dim", 32);
  rc.backbone.embed_dim = kv.get_uint("backbone.embed_dim", 64);
  rc.backbone.num_blocks = kv.get_uint("backbone.num_blocks", 2);
  rc.backbone.hidden_dim = kv.get_uint("backbone.hidden_dim", 64);
  rc.backbone.pool = kv.get_uint("backbone.pool", 1);
  rc.backbone.seed = kv.get_uint("backbone.seed", 0);
  rc.backbone.num_split_outputs =
      kv.get_uint("backbone.num_split_outputs", rc.forest.total_splits());
  rc.backbone.validate();
  if (rc.backbone.num_split_outputs != rc.forest.total_splits()) {
    throw ConfigError("backbone.num_split_outputs (" +
                      std::to_string(rc.backbone.num_split_outputs) +
                      ") must equal forest.num_trees x (2^forest.depth - 1) = " +
                      std::to_string(rc.forest.total_splits()));
  }

  rc.train.batch_size = kv.get_uint("train.batch_size", 50);
  rc.train.leaf_update_period = kv.get_uint("train.leaf_update_period", 50);
  rc.train.leaf_batch = kv.get_uint("train.leaf_batch", 500);
  rc.train.leaf_iters = kv.get_uint("train.leaf_iters", 20);
  rc.train.lr = kv.get_real("train.lr", 0.5);
  rc.train.momentum = kv.get_real("train.momentum", 0.9);
  rc.train.epochs = kv.get_uint("train.epochs", 30);
  rc.train.plateau_patience = kv.get_uint("train.plateau_patience", 3);
  rc.train.plateau_min_delta = kv.get_real("train.plateau_min_delta", 1e-3);
  rc.train.seed = kv.get_uint("train.seed", 0);
  rc.train.clip_norm = kv.get_real("train.clip_norm", 100.0);
  rc.train.standardize_labels = kv.get_bool("train.standardize_labels", true);
  rc.train.leaf_resample_per_iter = kv.get_bool("train.leaf_resample_per_iter", false);
  rc.train.zeta_per_tree = kv.get_bool("train.zeta_per_tree", false);
  rc.train.cs_threshold = kv.get_real("train.cs_threshold", 5.0);
  rc.train.validate();

  rc.preprocess.resize_to = kv.get_uint("preprocess.resize_to", 256);
  rc.preprocess.crop_to = kv.get_uint("preprocess.crop_to", 224);
  rc.preprocess.flip_prob = kv.get_real("preprocess.flip_prob", 0.5);
  const std::string mean_text = kv.get_string("preprocess.channel_mean", "");
  const std::string std_text = kv.get_string("preprocess.channel_std", "");
  auto parse_list = [](const std::string& text, const std::string& key) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      try {
        out.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": bad entry `" + tok + "`");
      }
    }
    return out;
  };
  if (!mean_text.empty()) rc.preprocess.channel_mean = parse_list(mean_text, "preprocess.channel_mean");
  if (!std_text.empty()) rc.preprocess.channel_std = parse_list(std_text, "preprocess.channel_std");
  rc.preprocess.validate();

  const std::string source = kv.get_string("data.source", "synth");
  if (source == "synth") {
    rc.data.source = DataSourceKind::Synth;
    rc.data.n_train = kv.get_uint("data.n_train", 4000);
    rc.data.n_test = kv.get_uint("data.n_test", 1000);
    rc.data.input_dim = kv.get_uint("data.input_dim", rc.backbone.input_dim);
    rc.data.noise_std = kv.get_real("data.noise_std", 2.0);
    rc.data.seed = kv.get_uint("data.seed", 0);
    if (rc.data.n_train == 0) throw ConfigError("data.n_train must be positive");
  } else if (source == "manifest") {
    rc.data.source = DataSourceKind::ManifestImages;
    rc.data.manifest = kv.require_string("data.manifest");
    rc.data.root = kv.get_string("data.root", ".");
    rc.data.val_manifest = kv.get_string("data.val_manifest", "");
  } else {
    throw ConfigError("config key data.source must be `synth` or `manifest`, got `" + source +
                      "`");
  }

  rc.out_dir = kv.get_string("output.dir", "out");
  rc.eval_threshold = kv.get_real("eval.threshold", 5.0);

  kv.reject_unknown();
  return rc;
}

std::string RunConfig::echo() const {
  KeyValueConfig kv;
  kv.set("forest.num_trees", std::to_string(forest.num_trees));
  kv.set("forest.depth", std::to_string(forest.depth));
  kv.set("forest.prediction_dim", std::to_string(forest.prediction_dim));
  kv.set("backbone.input_dim", std::to_string(backbone.input_dim));
  kv.set("backbone.embed_dim", std::to_string(backbone.embed_dim));
  kv.set("backbone.num_blocks", std::to_string(backbone.num_blocks));
  kv.set("backbone.hidden_dim", std::to_string(backbone.hidden_dim));
  kv.set("backbone.num_split_outputs", std::to_string(backbone.num_split_outputs));
  kv.set("backbone.pool", std::to_string(backbone.pool));
  kv.set("backbone.seed", std::to_string(backbone.seed));
  kv.set("train.batch_size", std::to_string(train.batch_size));
  kv.set("train.leaf_update_period", std::to_string(train.leaf_update_period));
  kv.set("train.leaf_batch", std::to_string(train.leaf_batch));
  kv.set("train.leaf_iters", std::to_string(train.leaf_iters));
  kv.set("train.lr", format_real(train.lr));
  kv.set("train.momentum", format_real(train.momentum));
  kv.set("train.epochs", std::to_string(train.epochs));
  kv.set("train.plateau_patience", std::to_string(train.plateau_patience));
  kv.set("train.plateau_min_delta", format_real(train.plateau_min_delta));
  kv.set("train.seed", std::to_string(train.seed));
  kv.set("train.clip_norm", format_real(train.clip_norm));
  kv.set("train.standardize_labels", train.standardize_labels ? "true" : "false");
  kv.set("train.leaf_resample_per_iter", train.leaf_resample_per_iter ? "true" : "false");
  kv.set("train.zeta_per_tree", train.zeta_per_tree ? "true" : "false");
  kv.set("train.cs_threshold", format_real(train.cs_threshold));
  kv.set("preprocess.resize_to", std::to_string(preprocess.resize_to));
  kv.set("preprocess.crop_to", std::to_string(preprocess.crop_to));
  kv.set("preprocess.flip_prob", format_real(preprocess.flip_prob));
  auto join = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      out += format_real(v[i]);
    }
    return out;
  };
  if (!preprocess.channel_mean.empty()) {
    kv.set("preprocess.channel_mean", join(preprocess.channel_mean));
  }
  if (!preprocess.channel_std.empty()) {
    kv.set("preprocess.channel_std", join(preprocess.channel_std));
  }
  if (data.source == DataSourceKind::Synth) {
    kv.set("data.source", "synth");
    kv.set("data.n_train", std::to_string(data.n_train));
    kv.set("data.n_test", std::to_string(data.n_test));
    kv.set("data.input_dim", std::to_string(data.input_dim));
    kv.set("data.noise_std", format_real(data.noise_std));
    kv.set("data.seed", std::to_string(data.seed));
  } else {
    kv.set("data.source", "manifest");
    kv.set("data.manifest", data.manifest);
    kv.set("data.root", data.root);
    if (!data.val_manifest.empty()) kv.set("data.val_manifest", data.val_manifest);
  }
  kv.set("output.dir", out_dir);
  kv.set("eval.threshold", format_real(eval_threshold));
  return kv.serialize();
}

}  // namespace rndf

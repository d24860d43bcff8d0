#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rndf/data.hpp"
#include "rndf/forest.hpp"
#include "rndf/model.hpp"
#include "rndf/trainer.hpp"

namespace rndf {

/// Flat dotted-key configuration: one `key = value` per line, `#` comments.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::filesystem::path& path);
  static KeyValueConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  /// `key=value`, the --set syntax.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string require_string(const std::string& key) const;

  /// Keys read so far; anything else in the file is a typo.
  void mark_known(const std::string& key) const;
  void reject_unknown() const;

  /// Deterministic echo: sorted `key = value` lines.
  std::string serialize() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  mutable std::vector<std::string> known_;
};

enum class DataSourceKind { Synth, ManifestImages };

struct DataConfig {
  DataSourceKind source = DataSourceKind::Synth;
  // synth
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  std::size_t input_dim = 32;
  double noise_std = 2.0;
  std::uint64_t seed = 0;
  // manifest
  std::string manifest;
  std::string val_manifest;
  std::string root;
};

/// Everything one run needs, resolved from a KeyValueConfig plus overrides.
struct RunConfig {
  BackboneConfig backbone;
  ForestConfig forest;
  TrainConfig train;
  PreprocessConfig preprocess;
  DataConfig data;
  std::string out_dir = "out";
  double eval_threshold = 5.0;

  static RunConfig from(const KeyValueConfig& kv);
  /// The fully-resolved key set; re-parsing this text reproduces the run.
  std::string echo() const;
};

}  // namespace rndf

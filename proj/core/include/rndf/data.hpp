#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rndf/rng.hpp"
#include "rndf/tensor.hpp"

namespace rndf {

struct ManifestRecord {
  std::string path;  // relative to the manifest root
  double label = 0.0;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
};

/// CSV with header `path,label`. Order preserved, duplicates allowed.
Manifest load_manifest(const std::filesystem::path& csv, const std::filesystem::path& root);

/// PGM (P5) or PPM (P6), maxval 255 -> (C,H,W) tensor scaled to [0,1].
Tensor load_image(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
              std::span<const unsigned char> pixels);
void save_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
              std::span<const unsigned char> rgb);

struct PreprocessConfig {
  std::size_t resize_to = 256;
  std::size_t crop_to = 224;
  double flip_prob = 0.5;
  std::vector<double> channel_mean;  // empty = no shift
  std::vector<double> channel_std;   // empty = no scaling
  bool train_mode = true;

  void validate() const;
};

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);
Tensor crop(const Tensor& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
Tensor hflip(const Tensor& img);

/// Train mode: resize -> random crop -> random horizontal flip -> normalize.
/// Eval mode: resize -> center crop -> normalize.
Tensor preprocess(const Tensor& img, const PreprocessConfig& cfg, Rng& rng);

/// Per-channel mean/std over the manifest under eval-mode geometry
/// (resize + center crop, no normalization).
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats compute_channel_stats(const Manifest& manifest, const PreprocessConfig& cfg);

/// In-memory feature/label matrices.
struct DataView {
  Tensor features;  // n x d
  Tensor labels;    // n x k
  std::size_t size() const { return features.ndim() == 2 ? features.dim(0) : 0; }
};

/// Smooth-plus-periodic regression target in roughly [5, 75]:
///   y = 20 + 40*mean(x) + 15*sin(2*pi*x0) + N(0, noise_std^2),  x ~ U[0,1]^d.
DataView synth_dataset(std::size_t n, std::size_t input_dim, double noise_std, std::uint64_t seed);

/// Row provider for training and evaluation. Implementations must be pure in
/// (row, item_seed) so seeded runs are reproducible regardless of timing.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t label_dim() const = 0;
  virtual void fetch(std::size_t row, std::span<double> x, std::span<double> y,
                     std::uint64_t item_seed) = 0;
};

class MatrixSource final : public BatchSource {
 public:
  explicit MatrixSource(DataView data);
  std::size_t size() const override { return data_.size(); }
  std::size_t input_dim() const override { return data_.features.dim(1); }
  std::size_t label_dim() const override { return data_.labels.dim(1); }
  void fetch(std::size_t row, std::span<double> x, std::span<double> y,
             std::uint64_t item_seed) override;

 private:
  DataView data_;
};

/// Images fetched from a manifest, preprocessed per item, pre-pooled by the
/// backbone's pool factor and flattened. Raw images are cached after first
/// load; augmentation randomness comes only from item_seed.
class ImageSource final : public BatchSource {
 public:
  ImageSource(Manifest manifest, PreprocessConfig cfg, std::size_t pool_factor);
  std::size_t size() const override { return manifest_.records.size(); }
  std::size_t input_dim() const override;
  std::size_t label_dim() const override { return 1; }
  void fetch(std::size_t row, std::span<double> x, std::span<double> y,
             std::uint64_t item_seed) override;

 private:
  Manifest manifest_;
  PreprocessConfig cfg_;
  std::size_t pool_;
  std::size_t channels_ = 0;
  std::vector<std::optional<Tensor>> cache_;
  const Tensor& raw(std::size_t row);
};

}  // namespace rndf

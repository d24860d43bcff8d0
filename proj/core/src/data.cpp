#include "rndf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rndf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& csv, const std::filesystem::path& root) {
  std::ifstream in(csv);
  if (!in) throw FormatError("cannot open manifest " + csv.string());
  Manifest m;
  m.root = root;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw FormatError("manifest " + csv.string() + " is empty");
  ++line_no;
  if (trim(line) != "path,label") {
    throw FormatError("manifest " + csv.string() + " line 1: header must be `path,label`");
  }
  while (std::getline(in, line)) {
    ++line_no;
    const std::string row = trim(line);
    if (row.empty()) continue;
    const auto comma = row.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == row.size()) {
      throw FormatError("manifest " + csv.string() + " line " + std::to_string(line_no) +
                        ": expected `path,label`");
    }
    ManifestRecord rec;
    rec.path = trim(row.substr(0, comma));
    const std::string label_text = trim(row.substr(comma + 1));
    std::size_t consumed = 0;
    try {
      rec.label = std::stod(label_text, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != label_text.size() || !std::isfinite(rec.label)) {
      throw FormatError("manifest " + csv.string() + " line " + std::to_string(line_no) +
                        ": bad label `" + label_text + "`");
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

namespace {

/// Reads the next netpbm header token, skipping whitespace and # comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError("truncated image header in " + path);
  return tok;
}

std::size_t parse_dim(const std::string& tok, const std::string& path) {
  std::size_t consumed = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != tok.size() || v == 0) {
    throw FormatError("bad image header value `" + tok + "` in " + path);
  }
  return v;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  const std::string magic = next_token(in, path.string());
  std::size_t channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError("unsupported image magic `" + magic + "` in " + path.string() +
                      " (want P5 or P6)");
  }
  const std::size_t w = parse_dim(next_token(in, path.string()), path.string());
  const std::size_t h = parse_dim(next_token(in, path.string()), path.string());
  const std::size_t maxval = parse_dim(next_token(in, path.string()), path.string());
  if (maxval != 255) {
    throw FormatError("image " + path.string() + " has maxval " + std::to_string(maxval) +
                      ", only 255 supported");
  }
  std::vector<unsigned char> buf(w * h * channels);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw FormatError("image " + path.string() + " payload truncated");
  }
  // interleaved rows -> channel-first
  Tensor img({channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img[(c * h + y) * w + x] = static_cast<double>(buf[(y * w + x) * channels + c]) / 255.0;
  return img;
}

namespace {

void write_pnm(const std::filesystem::path& path, const char* magic, std::size_t width,
               std::size_t height, std::span<const unsigned char> payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << magic << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace

void save_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
              std::span<const unsigned char> pixels) {
  if (pixels.size() != width * height) throw DimensionError("save_pgm payload size mismatch");
  write_pnm(path, "P5", width, height, pixels);
}

void save_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
              std::span<const unsigned char> rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("save_ppm payload size mismatch");
  write_pnm(path, "P6", width, height, rgb);
}

void PreprocessConfig::validate() const {
  if (crop_to == 0 || resize_to == 0) throw ConfigError("preprocess sizes must be positive");
  if (crop_to > resize_to) throw ConfigError("preprocess.crop_to must be <= preprocess.resize_to");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("preprocess.flip_prob must be in [0,1]");
  if (!channel_std.empty()) {
    for (double s : channel_std) {
      if (!(s > 0.0)) throw ConfigError("preprocess.channel_std entries must be positive");
    }
  }
}

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.ndim() != 3) throw DimensionError("resize expects a (C,H,W) image");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (out_h == 0 || out_w == 0) throw DimensionError("resize target must be positive");
  if (out_h == h && out_w == w) return img.detached();
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = img[(ch * h + y0) * w + x0] * (1.0 - wx) + img[(ch * h + y0) * w + x1] * wx;
        const double bot = img[(ch * h + y1) * w + x0] * (1.0 - wx) + img[(ch * h + y1) * w + x1] * wx;
        out[(ch * out_h + oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor crop(const Tensor& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (img.ndim() != 3) throw DimensionError("crop expects a (C,H,W) image");
  const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
  if (y0 + h > ih || x0 + w > iw) throw DimensionError("crop window out of bounds");
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(ch * h + y) * w + x] = img[(ch * ih + y0 + y) * iw + x0 + x];
  return out;
}

Tensor hflip(const Tensor& img) {
  if (img.ndim() != 3) throw DimensionError("hflip expects a (C,H,W) image");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(ch * h + y) * w + x] = img[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

Tensor preprocess(const Tensor& img, const PreprocessConfig& cfg, Rng& rng) {
  cfg.validate();
  if (img.ndim() != 3 || img.dim(1) == 0 || img.dim(2) == 0) {
    throw DimensionError("preprocess expects a non-empty (C,H,W) image");
  }
  const std::size_t c = img.dim(0);
  Tensor work = resize_bilinear(img, cfg.resize_to, cfg.resize_to);
  if (cfg.train_mode) {
    const std::size_t span = cfg.resize_to - cfg.crop_to;
    const std::size_t y0 = span == 0 ? 0 : static_cast<std::size_t>(rng.below(span + 1));
    const std::size_t x0 = span == 0 ? 0 : static_cast<std::size_t>(rng.below(span + 1));
    work = crop(work, y0, x0, cfg.crop_to, cfg.crop_to);
    if (rng.uniform01() < cfg.flip_prob) work = hflip(work);
  } else {
    const std::size_t off = (cfg.resize_to - cfg.crop_to) / 2;
    work = crop(work, off, off, cfg.crop_to, cfg.crop_to);
  }
  if (!cfg.channel_mean.empty() || !cfg.channel_std.empty()) {
    if ((!cfg.channel_mean.empty() && cfg.channel_mean.size() != c) ||
        (!cfg.channel_std.empty() && cfg.channel_std.size() != c)) {
      throw ConfigError("preprocess channel statistics must have one entry per channel");
    }
    const std::size_t hw = cfg.crop_to * cfg.crop_to;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double mu = cfg.channel_mean.empty() ? 0.0 : cfg.channel_mean[ch];
      const double sd = cfg.channel_std.empty() ? 1.0 : cfg.channel_std[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        work[ch * hw + i] = (work[ch * hw + i] - mu) / sd;
      }
    }
  }
  return work;
}

ChannelStats compute_channel_stats(const Manifest& manifest, const PreprocessConfig& cfg) {
  PreprocessConfig eval_cfg = cfg;
  eval_cfg.train_mode = false;
  eval_cfg.channel_mean.clear();
  eval_cfg.channel_std.clear();
  Rng rng(0);  // unused in eval mode
  ChannelStats stats;
  double count = 0.0;
  for (const auto& rec : manifest.records) {
    Tensor img = preprocess(load_image(manifest.root / rec.path), eval_cfg, rng);
    const std::size_t c = img.dim(0);
    const std::size_t hw = img.dim(1) * img.dim(2);
    if (stats.mean.empty()) {
      stats.mean.assign(c, 0.0);
      stats.stddev.assign(c, 0.0);
    }
    if (stats.mean.size() != c) throw FormatError("manifest mixes channel counts");
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = img[ch * hw + i];
        stats.mean[ch] += v;
        stats.stddev[ch] += v * v;
      }
    }
    count += static_cast<double>(hw);
  }
  if (count == 0.0) throw ContractError("cannot compute channel stats from an empty manifest");
  for (std::size_t ch = 0; ch < stats.mean.size(); ++ch) {
    stats.mean[ch] /= count;
    const double var = stats.stddev[ch] / count - stats.mean[ch] * stats.mean[ch];
    stats.stddev[ch] = std::sqrt(std::max(var, 1e-24));
  }
  return stats;
}

DataView synth_dataset(std::size_t n, std::size_t input_dim, double noise_std,
                       std::uint64_t seed) {
  if (n == 0) throw ContractError("synth_dataset requires n > 0");
  if (input_dim == 0) throw ContractError("synth_dataset requires input_dim > 0");
  Rng rng(seed);
  DataView out;
  out.features = Tensor({n, input_dim});
  out.labels = Tensor({n, 1});
  for (std::size_t t = 0; t < n; ++t) {
    double total = 0.0;
    for (std::size_t d = 0; d < input_dim; ++d) {
      const double v = rng.uniform01();
      out.features[t * input_dim + d] = v;
      total += v;
    }
    const double x0 = out.features[t * input_dim];
    double y = 20.0 + 40.0 * (total / static_cast<double>(input_dim)) +
               15.0 * std::sin(2.0 * std::numbers::pi * x0);
    if (noise_std > 0.0) y += rng.normal(0.0, noise_std);
    out.labels[t] = y;
  }
  return out;
}

MatrixSource::MatrixSource(DataView data) : data_(std::move(data)) {
  if (data_.features.ndim() != 2 || data_.labels.ndim() != 2 ||
      data_.features.dim(0) != data_.labels.dim(0)) {
    throw DimensionError("MatrixSource requires matching n x d features and n x k labels");
  }
}

void MatrixSource::fetch(std::size_t row, std::span<double> x, std::span<double> y,
                         std::uint64_t) {
  const std::size_t d = input_dim(), k = label_dim();
  if (row >= size() || x.size() != d || y.size() != k) {
    throw ContractError("MatrixSource::fetch out of range");
  }
  for (std::size_t i = 0; i < d; ++i) x[i] = data_.features[row * d + i];
  for (std::size_t i = 0; i < k; ++i) y[i] = data_.labels[row * k + i];
}

ImageSource::ImageSource(Manifest manifest, PreprocessConfig cfg, std::size_t pool_factor)
    : manifest_(std::move(manifest)), cfg_(std::move(cfg)), pool_(pool_factor == 0 ? 1 : pool_factor) {
  cfg_.validate();
  if (cfg_.crop_to % pool_ != 0) {
    throw ConfigError("preprocess.crop_to must be divisible by the backbone pool factor");
  }
  cache_.resize(manifest_.records.size());
  if (!manifest_.records.empty()) channels_ = raw(0).dim(0);
}

const Tensor& ImageSource::raw(std::size_t row) {
  auto& slot = cache_[row];
  if (!slot) slot = load_image(manifest_.root / manifest_.records[row].path);
  return *slot;
}

std::size_t ImageSource::input_dim() const {
  const std::size_t side = cfg_.crop_to / pool_;
  return std::max<std::size_t>(channels_, 1) * side * side;
}

void ImageSource::fetch(std::size_t row, std::span<double> x, std::span<double> y,
                        std::uint64_t item_seed) {
  if (row >= size() || y.size() != 1 || x.size() != input_dim()) {
    throw ContractError("ImageSource::fetch out of range");
  }
  Rng rng(item_seed);
  Tensor img = preprocess(raw(row), cfg_, rng);
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const std::size_t oh = h / pool_, ow = w / pool_;
  const double scale = 1.0 / static_cast<double>(pool_ * pool_);
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx)
        x[(ch * oh + yy / pool_) * ow + xx / pool_] += img[(ch * h + yy) * w + xx] * scale;
  y[0] = manifest_.records[row].label;
}

}  // namespace rndf

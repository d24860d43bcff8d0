#include "rndf/persist.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace rndf {

namespace {

using nlohmann::json;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IntegrityError("checkpoint " + path + " truncated in header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, const std::vector<double>& values) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * 8));
  } else {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
}

void read_f64_le(const std::vector<char>& payload, std::size_t offset, std::vector<double>& out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), payload.data() + offset, out.size() * 8);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(
                    static_cast<unsigned char>(payload[offset + i * 8 + b]))
                << (8 * b);
      }
      std::memcpy(&out[i], &bits, 8);
    }
  }
}

/// Tensor directory for a model, in the fixed serialization order.
std::vector<std::pair<std::string, const Tensor*>> tensor_directory(const Model& m,
                                                                    Tensor& leaf_cov_packed) {
  std::vector<std::pair<std::string, const Tensor*>> dir;
  auto names = m.backbone.names();
  auto tensors = m.backbone.all();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    dir.emplace_back("backbone." + names[i], tensors[i]);
  }
  dir.emplace_back("label_offset", &m.label_offset);
  dir.emplace_back("label_scale", &m.label_scale);
  dir.emplace_back("leaf.predictions", &m.leaves.predictions);
  const std::size_t k = m.leaves.dim;
  leaf_cov_packed = Tensor({m.leaves.num_leaves, k, k});
  for (std::size_t j = 0; j < m.leaves.num_leaves; ++j) {
    for (std::size_t i = 0; i < k * k; ++i) {
      leaf_cov_packed[j * k * k + i] = m.leaves.covariances[j][i];
    }
  }
  dir.emplace_back("leaf.covariances", &leaf_cov_packed);
  return dir;
}

json shape_to_json(const Shape& s) {
  json a = json::array();
  for (std::size_t d : s) a.push_back(d);
  return a;
}

Shape shape_from_json(const json& a) {
  Shape s;
  for (const auto& v : a) s.push_back(v.get<std::size_t>());
  return s;
}

void check_spd(const Tensor& cov, std::size_t leaf) {
  const std::size_t k = cov.dim(0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double diff = std::abs(cov[i * k + j] - cov[j * k + i]);
      const double scale = std::max({1.0, std::abs(cov[i * k + j]), std::abs(cov[j * k + i])});
      if (diff > 1e-9 * scale) {
        throw IntegrityError("leaf covariance " + std::to_string(leaf) + " is not symmetric");
      }
    }
  }
  // Cholesky doubles as the positive-definiteness test.
  std::vector<double> lower(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov[i * k + j];
      for (std::size_t m2 = 0; m2 < j; ++m2) s -= lower[i * k + m2] * lower[j * k + m2];
      if (i == j) {
        if (!(s > 0.0)) {
          throw IntegrityError("leaf covariance " + std::to_string(leaf) +
                               " is not positive definite");
        }
        lower[i * k + i] = std::sqrt(s);
      } else {
        lower[i * k + j] = s / lower[j * k + j];
      }
    }
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  model.validate();
  Tensor packed_cov;
  const auto dir = tensor_directory(model, packed_cov);

  json header;
  header["backbone"] = {{"input_dim", model.backbone_cfg.input_dim},
                        {"embed_dim", model.backbone_cfg.embed_dim},
                        {"num_blocks", model.backbone_cfg.num_blocks},
                        {"hidden_dim", model.backbone_cfg.hidden_dim},
                        {"num_split_outputs", model.backbone_cfg.num_split_outputs},
                        {"pool", model.backbone_cfg.pool},
                        {"seed", model.backbone_cfg.seed}};
  header["forest"] = {{"num_trees", model.forest_cfg.num_trees},
                      {"depth", model.forest_cfg.depth},
                      {"prediction_dim", model.forest_cfg.prediction_dim}};
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : dir) {
    tensors.push_back(
        {{"name", name}, {"shape", shape_to_json(tensor->shape())}, {"offset", offset}});
    offset += tensor->size() * 8;
  }
  header["tensors"] = tensors;
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, tensor] : dir) write_f64_le(out, tensor->data());
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

namespace {

CheckpointInfo parse_header(std::istream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint " + path + " has wrong magic bytes");
  }
  CheckpointInfo info;
  info.version = read_u32(in, path);
  if (info.version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path + " has unsupported version " +
                      std::to_string(info.version));
  }
  const std::uint32_t header_len = read_u32(in, path);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (static_cast<std::uint32_t>(in.gcount()) != header_len) {
    throw IntegrityError("checkpoint " + path + " truncated in header");
  }
  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + " header is not valid JSON: " + e.what());
  }
  try {
    const auto& b = header.at("backbone");
    info.backbone.input_dim = b.at("input_dim").get<std::size_t>();
    info.backbone.embed_dim = b.at("embed_dim").get<std::size_t>();
    info.backbone.num_blocks = b.at("num_blocks").get<std::size_t>();
    info.backbone.hidden_dim = b.at("hidden_dim").get<std::size_t>();
    info.backbone.num_split_outputs = b.at("num_split_outputs").get<std::size_t>();
    info.backbone.pool = b.at("pool").get<std::size_t>();
    info.backbone.seed = b.at("seed").get<std::uint64_t>();
    const auto& f = header.at("forest");
    info.forest.num_trees = f.at("num_trees").get<std::size_t>();
    info.forest.depth = f.at("depth").get<std::size_t>();
    info.forest.prediction_dim = f.at("prediction_dim").get<std::size_t>();
    for (const auto& t : header.at("tensors")) {
      CheckpointInfo::Entry e;
      e.name = t.at("name").get<std::string>();
      e.shape = shape_from_json(t.at("shape"));
      e.offset = t.at("offset").get<std::uint64_t>();
      info.tensors.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + " header incomplete: " + e.what());
  }
  std::uint64_t expected = 0;
  for (const auto& e : info.tensors) {
    if (e.offset != expected) {
      throw IntegrityError("checkpoint " + path + " directory offsets are not contiguous");
    }
    expected += shape_size(e.shape) * 8;
  }
  return info;
}

}  // namespace

CheckpointInfo read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return parse_header(in, path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const CheckpointInfo info = parse_header(in, path.string());

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::uint64_t payload_size = 0;
  for (const auto& e : info.tensors) payload_size += shape_size(e.shape) * 8;
  if (payload.size() != payload_size) {
    throw IntegrityError("checkpoint " + path.string() + " payload has " +
                         std::to_string(payload.size()) + " bytes, directory expects " +
                         std::to_string(payload_size));
  }

  std::vector<Tensor> loaded;
  loaded.reserve(info.tensors.size());
  for (const auto& e : info.tensors) {
    std::vector<double> values(shape_size(e.shape));
    read_f64_le(payload, e.offset, values);
    loaded.emplace_back(e.shape, std::move(values));
  }

  Model m;
  m.backbone_cfg = info.backbone;
  m.forest_cfg = info.forest;
  m.backbone = backbone_init(info.backbone);  // shapes, then overwritten below

  std::vector<std::string> expected_names;
  for (const auto& n : m.backbone.names()) expected_names.push_back("backbone." + n);
  expected_names.insert(expected_names.end(),
                        {"label_offset", "label_scale", "leaf.predictions", "leaf.covariances"});
  if (info.tensors.size() != expected_names.size()) {
    throw IntegrityError("checkpoint " + path.string() + " has " +
                         std::to_string(info.tensors.size()) + " tensors, expected " +
                         std::to_string(expected_names.size()));
  }
  for (std::size_t i = 0; i < expected_names.size(); ++i) {
    if (info.tensors[i].name != expected_names[i]) {
      throw IntegrityError("checkpoint tensor " + std::to_string(i) + " is `" +
                           info.tensors[i].name + "`, expected `" + expected_names[i] + "`");
    }
  }

  auto params = m.backbone.all();
  std::size_t idx = 0;
  for (Tensor* p : params) {
    if (loaded[idx].shape() != p->shape()) {
      throw IntegrityError("checkpoint tensor " + info.tensors[idx].name +
                           " has shape " + shape_str(loaded[idx].shape()) + ", expected " +
                           shape_str(p->shape()));
    }
    *p = std::move(loaded[idx++]);
  }
  m.label_offset = std::move(loaded[idx++]);
  m.label_scale = std::move(loaded[idx++]);

  const std::size_t k = info.forest.prediction_dim;
  Tensor preds = std::move(loaded[idx++]);
  Tensor covs = std::move(loaded[idx++]);
  if (preds.shape() != Shape{info.forest.total_leaves(), k} ||
      covs.shape() != Shape{info.forest.total_leaves(), k, k}) {
    throw IntegrityError("checkpoint leaf tensors have unexpected shapes");
  }
  m.leaves.num_leaves = info.forest.total_leaves();
  m.leaves.dim = k;
  m.leaves.predictions = std::move(preds);
  m.leaves.covariances.reserve(m.leaves.num_leaves);
  for (std::size_t j = 0; j < m.leaves.num_leaves; ++j) {
    Tensor cov({k, k});
    for (std::size_t i = 0; i < k * k; ++i) cov[i] = covs[j * k * k + i];
    check_spd(cov, j);
    m.leaves.covariances.push_back(std::move(cov));
  }
  m.validate();
  return m;
}

}  // namespace rndf

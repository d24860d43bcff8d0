#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rndf/model.hpp"

namespace rndf {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'R', 'N', 'D', 'F'};

/// Header contents, readable without touching the payload.
struct CheckpointInfo {
  std::uint32_t version = 0;
  BackboneConfig backbone;
  ForestConfig forest;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;  // bytes from the start of the payload
  };
  std::vector<Entry> tensors;
};

/// Layout: magic, u32 LE version, u32 LE header length, JSON header, then
/// little-endian f64 arrays back to back in directory order. Saving a loaded
/// model reproduces the file byte for byte.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
CheckpointInfo read_checkpoint_header(const std::filesystem::path& path);

}  // namespace rndf

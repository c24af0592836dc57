#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "seld/neural.hpp"
#include "seld/optim.hpp"

namespace seld {

constexpr int kCheckpointVersion = 1;

/// Model checkpoint. On disk: the 8-byte magic "SELDCKPT", a little-endian
/// u32 format version, a u64 header length, the JSON header, then the blob:
/// float32 parameters followed (when present) by float64 optimizer moments.
struct Checkpoint {
  nn::ModelSpec spec;
  std::vector<float> parameters;
  std::optional<optim::OptimState> optimizer;
  nlohmann::json metadata = nlohmann::json::object();

  static Checkpoint from_model(const nn::Model<float>& model);
  nn::Model<float> model() const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError for malformed data, VersionError for another format
// version, ShapeError when the stored shape chain disagrees with the spec.
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seld

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seld/audio_io.hpp"
#include "seld/matrix.hpp"

namespace seld {

constexpr int kFeatureCacheVersion = 1;

/// Feature matrices of one recording for one stage. On disk: `<base>.bin`
/// holds the blocks as little-endian float32, row-major, back to back;
/// `<base>.json` is the sidecar with shape, stage tag and hashes.
struct FeatureCache {
  std::string stage;  // "stage1" (log-mel) or "stage2" (spatial)
  std::string recording_id;
  int fold = -1;
  std::string feature_hash;  // hash of the feature configuration
  std::string config_hash;   // hash of the experiment that wrote it
  std::vector<int> seconds;
  std::vector<LabelSet> labels;
  std::vector<Matrix> blocks;
};

void write_feature_cache(const std::filesystem::path& base, const FeatureCache& cache);
// Throws VersionError when the format version or the feature hash differs
// from what the caller expects (pass an empty hash to skip that check).
FeatureCache read_feature_cache(const std::filesystem::path& base, const std::string& expected_feature_hash);

}  // namespace seld

#include "seld/feature_cache.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "seld/errors.hpp"

namespace seld {
namespace {

static_assert(std::endian::native == std::endian::little, "feature cache assumes a little-endian host");

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
  auto p = base;
  p += suffix;
  return p;
}

}  // namespace

void write_feature_cache(const std::filesystem::path& base, const FeatureCache& cache) {
  if (cache.blocks.size() != cache.seconds.size() || cache.blocks.size() != cache.labels.size()) {
    throw ShapeError("feature cache: blocks, seconds and labels differ in length");
  }
  std::size_t rows = 0, cols = 0;
  if (!cache.blocks.empty()) {
    rows = cache.blocks.front().rows;
    cols = cache.blocks.front().cols;
  }
  for (const auto& m : cache.blocks) {
    if (m.rows != rows || m.cols != cols) throw ShapeError("feature cache: blocks differ in shape");
  }
  auto labels = nlohmann::json::array();
  for (const auto& l : cache.labels) labels.push_back(l.code());
  const nlohmann::json sidecar{{"format_version", kFeatureCacheVersion},
                               {"stage", cache.stage},
                               {"recording_id", cache.recording_id},
                               {"fold", cache.fold},
                               {"feature_hash", cache.feature_hash},
                               {"config_hash", cache.config_hash},
                               {"dtype", "float32le"},
                               {"shape", {cache.blocks.size(), rows, cols}},
                               {"seconds", cache.seconds},
                               {"labels", labels}};
  std::filesystem::create_directories(base.parent_path().empty() ? "." : base.parent_path());
  {
    std::ofstream bin(with_suffix(base, ".bin"), std::ios::binary);
    for (const auto& m : cache.blocks) {
      bin.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * 4));
    }
    if (!bin) throw Error("cannot write " + with_suffix(base, ".bin").string());
  }
  std::ofstream js(with_suffix(base, ".json"));
  js << sidecar.dump(2) << '\n';
  if (!js) throw Error("cannot write " + with_suffix(base, ".json").string());
}

FeatureCache read_feature_cache(const std::filesystem::path& base, const std::string& expected_feature_hash) {
  const auto json_path = with_suffix(base, ".json");
  std::ifstream js(json_path);
  if (!js) throw FormatError("missing feature sidecar " + json_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  const int version = side.value("format_version", -1);
  if (version != kFeatureCacheVersion) {
    throw VersionError(json_path.string() + ": feature cache version " + std::to_string(version) + ", expected " +
                       std::to_string(kFeatureCacheVersion));
  }
  FeatureCache c;
  c.feature_hash = side.at("feature_hash").get<std::string>();
  if (!expected_feature_hash.empty() && c.feature_hash != expected_feature_hash) {
    throw VersionError(json_path.string() + ": stale features (hash " + c.feature_hash + ", expected " +
                       expected_feature_hash + ")");
  }
  c.stage = side.at("stage").get<std::string>();
  c.recording_id = side.at("recording_id").get<std::string>();
  c.fold = side.at("fold").get<int>();
  c.config_hash = side.value("config_hash", "");
  c.seconds = side.at("seconds").get<std::vector<int>>();
  for (int code : side.at("labels").get<std::vector<int>>()) {
    c.labels.push_back({(code & 1) != 0, (code & 2) != 0, (code & 4) != 0});
  }
  const auto shape = side.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3 || shape[0] != c.seconds.size() || shape[0] != c.labels.size()) {
    throw FormatError(json_path.string() + ": inconsistent shape");
  }
  std::ifstream bin(with_suffix(base, ".bin"), std::ios::binary);
  if (!bin) throw FormatError("missing feature blob " + with_suffix(base, ".bin").string());
  const std::vector<char> bytes(std::istreambuf_iterator<char>(bin), {});
  const std::size_t per_block = shape[1] * shape[2];
  if (bytes.size() != shape[0] * per_block * 4) {
    throw LengthError(with_suffix(base, ".bin").string() + ": " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(shape[0] * per_block * 4));
  }
  for (std::size_t b = 0; b < shape[0]; ++b) {
    Matrix m(shape[1], shape[2]);
    std::memcpy(m.data.data(), bytes.data() + b * per_block * 4, per_block * 4);
    c.blocks.push_back(std::move(m));
  }
  return c;
}

}  // namespace seld

#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "seld/audio_io.hpp"

namespace testing {

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("seld_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline std::vector<float> gaussian(std::size_t n, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(d(rng));
  return v;
}

inline seld::MultichannelRecording noise_recording(int channels, std::size_t frames, std::uint64_t seed,
                                                   int rate = 48000) {
  seld::MultichannelRecording rec;
  rec.sample_rate = rate;
  for (int c = 0; c < channels; ++c) rec.channels.push_back(gaussian(frames, seed + static_cast<std::uint64_t>(c)));
  return rec;
}

}  // namespace testing

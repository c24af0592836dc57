#pragma once

#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seld/audio_io.hpp"
#include "seld/fft.hpp"
#include "seld/matrix.hpp"

namespace seld {

/// Framing and search settings for the localization features.
struct LocFrameConfig {
  double frame_ms = 85.0;
  double overlap = 0.5;
  int fft_size = 4096;
  int interp_factor = 5;
  // 0-based (front mic, back mic) pairs: mics (1,3) and (2,4).
  std::vector<std::pair<int, int>> pairs{{0, 2}, {1, 3}};
  int sample_rate = 48000;
  double mic_separation_m = 0.007;
  double speed_of_sound = 343.0;
  int n_mel = 40;
  bool phat = true;
  bool average_gcc_curves = false;

  int frame_length() const;
  int hop_length() const;
  // ceil(separation / c * rate): largest physically possible integer lag.
  int max_lag_samples() const;
  // Search half-width in interpolated samples.
  int max_interp_lag() const { return interp_factor * max_lag_samples(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const LocFrameConfig& c);
void from_json(const nlohmann::json& j, LocFrameConfig& c);

/// Interpolated cross-correlation restricted to the feasible lag window.
struct GccResult {
  int max_lag = 0;             // half-width in interpolated samples
  std::vector<double> values;  // lags -max_lag .. +max_lag
  bool low_confidence = false;

  double at(int lag) const { return values.at(static_cast<std::size_t>(lag + max_lag)); }
  // Lag of the largest value; 0 for low-confidence (zero-energy) frames.
  int peak_lag() const;
};

/// GCC of two equal-length frames, Fourier-interpolated by cfg.interp_factor.
/// Positive lags mean the first frame leads (y is a delayed copy of x).
GccResult gcc_interpolated(std::span<const float> x, std::span<const float> y, const LocFrameConfig& cfg);
GccResult gcc_from_spectra(std::span<const fft::Complex> x, std::span<const fft::Complex> y, const LocFrameConfig& cfg);

struct TdoaTrack {
  std::vector<double> tdoa;                    // pair-averaged, interpolated-sample units
  std::vector<std::vector<int>> pair_lags;     // [pair][frame]
  std::vector<bool> low_confidence;            // any pair had a zero-energy frame
};

/// Shared read-only state (window, filterbank) for stage-2 feature extraction.
class SpatialFrontEnd {
 public:
  explicit SpatialFrontEnd(LocFrameConfig cfg = {});

  const LocFrameConfig& config() const { return cfg_; }
  std::size_t frames_for(std::size_t samples) const;

  TdoaTrack tdoa(std::span<const std::vector<float>> channels) const;
  Matrix magnitude_difference(std::span<const std::vector<float>> channels) const;
  // frames x (1 + n_mel): [pair-averaged TDOA | pair-averaged magnitude difference].
  Matrix assemble(std::span<const std::vector<float>> channels) const;

 private:
  // [mic][frame] spectra of the Hann-windowed frames for every mic used by a pair.
  std::vector<std::vector<std::vector<fft::Complex>>> spectra(std::span<const std::vector<float>> channels) const;
  TdoaTrack tdoa_from(const std::vector<std::vector<std::vector<fft::Complex>>>& spec) const;
  Matrix difference_from(const std::vector<std::vector<std::vector<fft::Complex>>>& spec) const;

  LocFrameConfig cfg_;
  std::vector<double> window_;
  Matrix filterbank_;
  int max_mic_ = 0;
};

TdoaTrack tdoa_feature(const AudioBlock& block, const LocFrameConfig& cfg = {});
Matrix mel_magnitude_difference(const AudioBlock& block, const LocFrameConfig& cfg = {});
Matrix assemble_spatial(const AudioBlock& block, const LocFrameConfig& cfg = {});

}  // namespace seld

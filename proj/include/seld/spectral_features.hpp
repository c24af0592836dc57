#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seld/matrix.hpp"

namespace seld {

struct StftConfig {
  double frame_ms = 20.0;
  double hop_ms = 10.0;
  int fft_size = 1024;
  int sample_rate = 48000;

  int frame_length() const;
  int hop_length() const;
  // Throws ConfigError when frame/hop are not whole sample counts or fft_size < frame.
  void validate() const;
};

void to_json(nlohmann::json& j, const StftConfig& c);
void from_json(const nlohmann::json& j, StftConfig& c);

/// floor((n - frame) / hop) + 1 for n >= frame, else 0.
std::size_t frame_count(std::size_t n, std::size_t frame, std::size_t hop);

std::vector<double> hann_window(std::size_t length);

/// Frames x (fft_size/2 + 1) magnitudes of the Hann-windowed STFT, no padding
/// at the edges. Throws std::invalid_argument for signals shorter than a frame.
Matrix stft_magnitude(std::span<const float> signal, const StftConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequencies (Hz) of `n_bands` filters equally spaced on the mel scale.
std::vector<double> mel_band_centers(int n_bands, double fmin, double fmax);

/// Bands x (fft_size/2 + 1) triangular filterbank.
Matrix mel_filterbank(int n_bands, double fmin, double fmax, int fft_size, int sample_rate);

// [first, last) column range holding each row's nonzero weights.
std::vector<std::pair<std::size_t, std::size_t>> nonzero_support(const Matrix& filterbank);

constexpr double kLogFloor = 1e-10;

/// ln(fb * mag^2 + eps) per frame and band.
Matrix log_mel(const Matrix& magnitude, const Matrix& filterbank, double eps = kLogFloor);

/// Per-column standardization statistics. `provenance` lists the folds the
/// statistics were computed from.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<int> provenance;

  static constexpr double kStdFloor = 1e-8;

  std::size_t dims() const { return mean.size(); }
  Matrix apply(const Matrix& features) const;
  void apply_inplace(Matrix& features) const;
  bool fitted_on(int fold) const;
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

Standardizer fit_standardizer(std::span<const Matrix> pool, std::vector<int> provenance = {});

/// Stage-1 front end: STFT magnitude of a mono block followed by the log-mel map.
class SpectralFrontEnd {
 public:
  explicit SpectralFrontEnd(StftConfig cfg = {}, int n_bands = 40, double fmin = 0.0, double fmax = -1.0);

  Matrix log_mel(std::span<const float> mono) const;
  const StftConfig& config() const { return cfg_; }
  const Matrix& filterbank() const { return filterbank_; }
  int bands() const { return static_cast<int>(filterbank_.rows); }

 private:
  StftConfig cfg_;
  Matrix filterbank_;
};

}  // namespace seld

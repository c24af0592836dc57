#include "seld/spectral_features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "seld/errors.hpp"
#include "seld/fft.hpp"

namespace seld {
namespace {

int whole_samples(double ms, int rate, const char* what) {
  const double exact = ms * rate / 1000.0;
  const long rounded = std::lround(exact);
  if (std::abs(exact - static_cast<double>(rounded)) > 1e-9 || rounded <= 0) {
    throw ConfigError(std::string(what) + " is not a positive whole number of samples");
  }
  return static_cast<int>(rounded);
}

}  // namespace

int StftConfig::frame_length() const { return whole_samples(frame_ms, sample_rate, "frame_ms"); }
int StftConfig::hop_length() const { return whole_samples(hop_ms, sample_rate, "hop_ms"); }

void StftConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("stft: sample_rate must be positive");
  const int frame = frame_length();
  hop_length();
  if (fft_size < frame) throw ConfigError("stft: fft_size must be >= frame length");
}

void to_json(nlohmann::json& j, const StftConfig& c) {
  j = {{"frame_ms", c.frame_ms}, {"hop_ms", c.hop_ms}, {"fft_size", c.fft_size}, {"sample_rate", c.sample_rate}};
}

void from_json(const nlohmann::json& j, StftConfig& c) {
  c = StftConfig{};
  c.frame_ms = j.value("frame_ms", c.frame_ms);
  c.hop_ms = j.value("hop_ms", c.hop_ms);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
}

std::size_t frame_count(std::size_t n, std::size_t frame, std::size_t hop) {
  if (frame == 0 || hop == 0) throw std::invalid_argument("frame_count: zero frame or hop");
  return n < frame ? 0 : (n - frame) / hop + 1;
}

std::vector<double> hann_window(std::size_t length) {
  // Periodic Hann, the usual choice for STFT analysis.
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

Matrix stft_magnitude(std::span<const float> signal, const StftConfig& cfg) {
  cfg.validate();
  const auto frame = static_cast<std::size_t>(cfg.frame_length());
  const auto hop = static_cast<std::size_t>(cfg.hop_length());
  if (signal.size() < frame) throw std::invalid_argument("stft_magnitude: signal shorter than one frame");
  const std::size_t frames = frame_count(signal.size(), frame, hop);
  const auto nfft = static_cast<std::size_t>(cfg.fft_size);
  const auto window = hann_window(frame);

  Matrix out(frames, nfft / 2 + 1);
  std::vector<double> buf(frame);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < frame; ++i) buf[i] = window[i] * signal[t * hop + i];
    const auto spec = fft::rfft(buf, nfft);
    for (std::size_t k = 0; k < spec.size(); ++k) out(t, k) = static_cast<float>(std::sqrt(std::norm(spec[k])));
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(int n_bands, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_bands) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_bands + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> mel_band_centers(int n_bands, double fmin, double fmax) {
  auto edges = mel_edges(n_bands, fmin, fmax);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(int n_bands, double fmin, double fmax, int fft_size, int sample_rate) {
  if (n_bands <= 0) throw ConfigError("mel_filterbank: band count must be positive");
  if (fft_size <= 0 || sample_rate <= 0) throw ConfigError("mel_filterbank: fft_size and sample_rate must be positive");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2");
  }
  const auto edges = mel_edges(n_bands, fmin, fmax);
  const std::size_t bins = static_cast<std::size_t>(fft_size) / 2 + 1;
  Matrix fb(static_cast<std::size_t>(n_bands), bins);
  for (int b = 0; b < n_bands; ++b) {
    const double left = edges[b];
    const double centre = edges[b + 1];
    const double right = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (f > left && f <= centre) {
        w = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        w = (right - f) / (right - centre);
      }
      fb(b, k) = static_cast<float>(w);
    }
  }
  return fb;
}

std::vector<std::pair<std::size_t, std::size_t>> nonzero_support(const Matrix& filterbank) {
  std::vector<std::pair<std::size_t, std::size_t>> out(filterbank.rows, {0, 0});
  for (std::size_t b = 0; b < filterbank.rows; ++b) {
    const auto w = filterbank.row(b);
    std::size_t first = 0;
    while (first < w.size() && w[first] == 0.0f) ++first;
    std::size_t last = w.size();
    while (last > first && w[last - 1] == 0.0f) --last;
    out[b] = {first, last};
  }
  return out;
}

Matrix log_mel(const Matrix& magnitude, const Matrix& filterbank, double eps) {
  if (magnitude.cols != filterbank.cols) throw ShapeError("log_mel: magnitude bins do not match filterbank");
  Matrix out(magnitude.rows, filterbank.rows);
  std::vector<double> power(magnitude.cols);
  const auto support = nonzero_support(filterbank);
  for (std::size_t t = 0; t < magnitude.rows; ++t) {
    const auto row = magnitude.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) power[k] = static_cast<double>(row[k]) * row[k];
    for (std::size_t b = 0; b < filterbank.rows; ++b) {
      const auto w = filterbank.row(b);
      double e = 0.0;
      for (std::size_t k = support[b].first; k < support[b].second; ++k) e += w[k] * power[k];
      out(t, b) = static_cast<float>(std::log(e + eps));
    }
  }
  return out;
}

Matrix Standardizer::apply(const Matrix& features) const {
  Matrix out = features;
  apply_inplace(out);
  return out;
}

void Standardizer::apply_inplace(Matrix& features) const {
  if (features.cols != dims()) throw ShapeError("standardizer: feature width does not match statistics");
  for (std::size_t t = 0; t < features.rows; ++t) {
    auto row = features.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = static_cast<float>((static_cast<double>(row[c]) - mean[c]) / stddev[c]);
    }
  }
}

bool Standardizer::fitted_on(int fold) const {
  return std::find(provenance.begin(), provenance.end(), fold) != provenance.end();
}

void to_json(nlohmann::json& j, const Standardizer& s) {
  j = {{"mean", s.mean}, {"stddev", s.stddev}, {"provenance", s.provenance}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.provenance = j.value("provenance", std::vector<int>{});
  if (s.mean.size() != s.stddev.size()) throw FormatError("standardizer: mean/stddev length mismatch");
}

Standardizer fit_standardizer(std::span<const Matrix> pool, std::vector<int> provenance) {
  if (pool.empty()) throw std::invalid_argument("fit_standardizer: empty training pool");
  const std::size_t dims = pool.front().cols;
  std::vector<double> sum(dims, 0.0);
  std::size_t count = 0;
  for (const auto& m : pool) {
    if (m.cols != dims) throw ShapeError("fit_standardizer: inconsistent feature widths");
    for (std::size_t t = 0; t < m.rows; ++t) {
      for (std::size_t c = 0; c < dims; ++c) sum[c] += m(t, c);
    }
    count += m.rows;
  }
  if (count == 0) throw std::invalid_argument("fit_standardizer: training pool has no frames");
  std::vector<double> mean(dims);
  for (std::size_t c = 0; c < dims; ++c) mean[c] = sum[c] / static_cast<double>(count);
  // Second pass for the variance keeps cancellation error out of the statistics.
  std::vector<double> sq(dims, 0.0);
  for (const auto& m : pool) {
    for (std::size_t t = 0; t < m.rows; ++t) {
      for (std::size_t c = 0; c < dims; ++c) {
        const double d = m(t, c) - mean[c];
        sq[c] += d * d;
      }
    }
  }
  Standardizer s;
  s.mean.resize(dims);
  s.stddev.resize(dims);
  for (std::size_t c = 0; c < dims; ++c) {
    s.mean[c] = mean[c];
    s.stddev[c] = std::max(std::sqrt(sq[c] / static_cast<double>(count)), Standardizer::kStdFloor);
  }
  s.provenance = std::move(provenance);
  return s;
}

SpectralFrontEnd::SpectralFrontEnd(StftConfig cfg, int n_bands, double fmin, double fmax) : cfg_(cfg) {
  cfg_.validate();
  if (fmax < 0.0) fmax = cfg_.sample_rate / 2.0;
  filterbank_ = mel_filterbank(n_bands, fmin, fmax, cfg_.fft_size, cfg_.sample_rate);
}

Matrix SpectralFrontEnd::log_mel(std::span<const float> mono) const {
  return seld::log_mel(stft_magnitude(mono, cfg_), filterbank_);
}

}  // namespace seld

#include "seld/spatial_features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seld/errors.hpp"
#include "seld/spectral_features.hpp"

namespace seld {

int LocFrameConfig::frame_length() const {
  const double exact = frame_ms * sample_rate / 1000.0;
  return static_cast<int>(std::lround(exact));
}

int LocFrameConfig::hop_length() const {
  return static_cast<int>(std::lround(frame_length() * (1.0 - overlap)));
}

int LocFrameConfig::max_lag_samples() const {
  // Nudge below the exact value so an exact integer does not round up.
  return static_cast<int>(std::ceil(mic_separation_m / speed_of_sound * sample_rate - 1e-9));
}

void LocFrameConfig::validate() const {
  std::ostringstream errs;
  if (sample_rate <= 0) errs << " sample_rate must be positive;";
  if (frame_ms <= 0) errs << " frame_ms must be positive;";
  if (!(overlap >= 0.0 && overlap < 1.0)) errs << " overlap must be in [0, 1);";
  if (interp_factor < 1) errs << " interp_factor must be >= 1;";
  if (pairs.empty()) errs << " pairs must not be empty;";
  for (const auto& [i, j] : pairs) {
    if (i < 0 || j < 0 || i == j) errs << " pair (" << i << "," << j << ") is invalid;";
  }
  if (mic_separation_m <= 0 || speed_of_sound <= 0) errs << " separation and speed of sound must be positive;";
  if (n_mel <= 0) errs << " n_mel must be positive;";
  if (errs.str().empty()) {
    if (std::abs(frame_ms * sample_rate / 1000.0 - frame_length()) > 1e-9) errs << " frame is not a whole sample count;";
    if (hop_length() <= 0) errs << " hop must be at least one sample;";
    if (fft_size < frame_length()) errs << " fft_size must be >= frame length;";
  }
  if (!errs.str().empty()) throw ConfigError("localization config:" + errs.str());
}

void to_json(nlohmann::json& j, const LocFrameConfig& c) {
  auto pairs = nlohmann::json::array();
  for (const auto& [a, b] : c.pairs) pairs.push_back({a + 1, b + 1});
  j = {{"frame_ms", c.frame_ms},
       {"overlap", c.overlap},
       {"fft_size", c.fft_size},
       {"interp_factor", c.interp_factor},
       {"pairs", pairs},
       {"sample_rate", c.sample_rate},
       {"mic_separation_m", c.mic_separation_m},
       {"speed_of_sound", c.speed_of_sound},
       {"n_mel", c.n_mel},
       {"phat", c.phat},
       {"average_gcc_curves", c.average_gcc_curves}};
}

void from_json(const nlohmann::json& j, LocFrameConfig& c) {
  c = LocFrameConfig{};
  c.frame_ms = j.value("frame_ms", c.frame_ms);
  c.overlap = j.value("overlap", c.overlap);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.interp_factor = j.value("interp_factor", c.interp_factor);
  if (j.contains("pairs")) {
    c.pairs.clear();
    // Stored 1-based, matching the microphone numbering of the device.
    for (const auto& p : j.at("pairs")) c.pairs.emplace_back(p.at(0).get<int>() - 1, p.at(1).get<int>() - 1);
  }
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.mic_separation_m = j.value("mic_separation_m", c.mic_separation_m);
  c.speed_of_sound = j.value("speed_of_sound", c.speed_of_sound);
  c.n_mel = j.value("n_mel", c.n_mel);
  c.phat = j.value("phat", c.phat);
  c.average_gcc_curves = j.value("average_gcc_curves", c.average_gcc_curves);
}

int GccResult::peak_lag() const {
  if (low_confidence || values.empty()) return 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best) - max_lag;
}

GccResult gcc_from_spectra(std::span<const fft::Complex> x, std::span<const fft::Complex> y, const LocFrameConfig& cfg) {
  if (x.size() != y.size() || x.size() != static_cast<std::size_t>(cfg.fft_size) / 2 + 1) {
    throw ShapeError("gcc: spectra do not match fft_size");
  }
  const auto n = static_cast<std::size_t>(cfg.fft_size);
  const auto factor = static_cast<std::size_t>(cfg.interp_factor);
  const std::size_t m = n * factor;

  GccResult result;
  result.max_lag = cfg.max_interp_lag();
  result.values.assign(static_cast<std::size_t>(2 * result.max_lag + 1), 0.0);

  std::vector<fft::Complex> cross(m / 2 + 1, fft::Complex{});
  double peak_mag = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    // conj(X) Y peaks at +d when y lags x by d.
    cross[k] = std::conj(x[k]) * y[k];
    peak_mag = std::max(peak_mag, std::sqrt(std::norm(cross[k])));
  }
  if (peak_mag == 0.0) {
    result.low_confidence = true;
    return result;
  }
  if (cfg.phat) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double mag = std::sqrt(std::norm(cross[k]));
      cross[k] = mag > peak_mag * 1e-12 ? cross[k] / mag : fft::Complex{};
    }
  }
  if (factor > 1 && n % 2 == 0) {
    // Zero padding splits the Nyquist bin evenly between +fs/2 and -fs/2;
    // the negative half is implied by Hermitian symmetry of the c2r transform.
    cross[n / 2] *= 0.5;
  }
  const auto r = fft::irfft(cross, m);
  for (int lag = -result.max_lag; lag <= result.max_lag; ++lag) {
    const auto idx = static_cast<std::size_t>((lag + static_cast<long>(m)) % static_cast<long>(m));
    result.values[static_cast<std::size_t>(lag + result.max_lag)] = r[idx] * static_cast<double>(factor);
  }
  return result;
}

GccResult gcc_interpolated(std::span<const float> x, std::span<const float> y, const LocFrameConfig& cfg) {
  if (x.size() != y.size()) throw ShapeError("gcc: frames differ in length");
  cfg.validate();
  std::vector<double> xd(x.begin(), x.end());
  std::vector<double> yd(y.begin(), y.end());
  const auto n = static_cast<std::size_t>(cfg.fft_size);
  if (xd.size() > n) throw ShapeError("gcc: frame longer than fft_size");
  return gcc_from_spectra(fft::rfft(xd, n), fft::rfft(yd, n), cfg);
}

SpatialFrontEnd::SpatialFrontEnd(LocFrameConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  window_ = hann_window(static_cast<std::size_t>(cfg_.frame_length()));
  filterbank_ = mel_filterbank(cfg_.n_mel, 0.0, cfg_.sample_rate / 2.0, cfg_.fft_size, cfg_.sample_rate);
  for (const auto& [i, j] : cfg_.pairs) max_mic_ = std::max({max_mic_, i, j});
}

std::size_t SpatialFrontEnd::frames_for(std::size_t samples) const {
  return frame_count(samples, static_cast<std::size_t>(cfg_.frame_length()), static_cast<std::size_t>(cfg_.hop_length()));
}

std::vector<std::vector<std::vector<fft::Complex>>> SpatialFrontEnd::spectra(
    std::span<const std::vector<float>> channels) const {
  if (channels.size() <= static_cast<std::size_t>(max_mic_)) {
    throw ShapeError("spatial features need microphones up to #" + std::to_string(max_mic_ + 1) + ", block has " +
                     std::to_string(channels.size()));
  }
  const std::size_t samples = channels.front().size();
  const std::size_t frames = frames_for(samples);
  if (frames == 0) throw ShapeError("spatial features: block shorter than one frame");
  const auto frame = static_cast<std::size_t>(cfg_.frame_length());
  const auto hop = static_cast<std::size_t>(cfg_.hop_length());

  std::vector<std::vector<std::vector<fft::Complex>>> out(static_cast<std::size_t>(max_mic_) + 1);
  std::vector<bool> used(out.size(), false);
  for (const auto& [i, j] : cfg_.pairs) used[i] = used[j] = true;
  std::vector<double> buf(frame);
  for (std::size_t mic = 0; mic < out.size(); ++mic) {
    if (!used[mic]) continue;
    if (channels[mic].size() != samples) throw ShapeError("spatial features: channels differ in length");
    out[mic].resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t s = 0; s < frame; ++s) buf[s] = window_[s] * channels[mic][t * hop + s];
      out[mic][t] = fft::rfft(buf, static_cast<std::size_t>(cfg_.fft_size));
    }
  }
  return out;
}

TdoaTrack SpatialFrontEnd::tdoa_from(const std::vector<std::vector<std::vector<fft::Complex>>>& spec) const {
  const std::size_t frames = spec[cfg_.pairs.front().first].size();
  const int limit = cfg_.max_interp_lag();
  TdoaTrack track;
  track.tdoa.assign(frames, 0.0);
  track.low_confidence.assign(frames, false);
  track.pair_lags.assign(cfg_.pairs.size(), std::vector<int>(frames, 0));
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<GccResult> curves;
    curves.reserve(cfg_.pairs.size());
    for (const auto& [i, j] : cfg_.pairs) curves.push_back(gcc_from_spectra(spec[i][t], spec[j][t], cfg_));
    double sum = 0.0;
    for (std::size_t p = 0; p < curves.size(); ++p) {
      track.pair_lags[p][t] = curves[p].peak_lag();
      if (curves[p].low_confidence) track.low_confidence[t] = true;
      sum += track.pair_lags[p][t];
    }
    double value = sum / static_cast<double>(curves.size());
    if (cfg_.average_gcc_curves) {
      GccResult mean = curves.front();
      mean.low_confidence = false;
      for (std::size_t p = 1; p < curves.size(); ++p) {
        for (std::size_t k = 0; k < mean.values.size(); ++k) mean.values[k] += curves[p].values[k];
      }
      bool all_silent = true;
      for (const auto& c : curves) all_silent = all_silent && c.low_confidence;
      mean.low_confidence = all_silent;
      value = mean.peak_lag();
    }
    track.tdoa[t] = std::clamp(value, static_cast<double>(-limit), static_cast<double>(limit));
  }
  return track;
}

Matrix SpatialFrontEnd::difference_from(const std::vector<std::vector<std::vector<fft::Complex>>>& spec) const {
  const std::size_t frames = spec[cfg_.pairs.front().first].size();
  const std::size_t bands = filterbank_.rows;
  Matrix out(frames, bands);
  std::vector<double> mag_i(filterbank_.cols);
  std::vector<double> mag_j(filterbank_.cols);
  const double scale = 1.0 / static_cast<double>(cfg_.pairs.size());
  const auto support = nonzero_support(filterbank_);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> acc(bands, 0.0);
    for (const auto& [i, j] : cfg_.pairs) {
      for (std::size_t k = 0; k < mag_i.size(); ++k) {
        mag_i[k] = std::sqrt(std::norm(spec[i][t][k]));
        mag_j[k] = std::sqrt(std::norm(spec[j][t][k]));
      }
      for (std::size_t b = 0; b < bands; ++b) {
        const auto w = filterbank_.row(b);
        double mi = 0.0;
        double mj = 0.0;
        for (std::size_t k = support[b].first; k < support[b].second; ++k) {
          mi += w[k] * mag_i[k];
          mj += w[k] * mag_j[k];
        }
        acc[b] += std::log(mi + kLogFloor) - std::log(mj + kLogFloor);
      }
    }
    for (std::size_t b = 0; b < bands; ++b) out(t, b) = static_cast<float>(acc[b] * scale);
  }
  return out;
}

TdoaTrack SpatialFrontEnd::tdoa(std::span<const std::vector<float>> channels) const { return tdoa_from(spectra(channels)); }

Matrix SpatialFrontEnd::magnitude_difference(std::span<const std::vector<float>> channels) const {
  return difference_from(spectra(channels));
}

Matrix SpatialFrontEnd::assemble(std::span<const std::vector<float>> channels) const {
  const auto spec = spectra(channels);
  const auto track = tdoa_from(spec);
  const auto diff = difference_from(spec);
  Matrix out(diff.rows, diff.cols + 1);
  for (std::size_t t = 0; t < diff.rows; ++t) {
    out(t, 0) = static_cast<float>(track.tdoa[t]);
    for (std::size_t b = 0; b < diff.cols; ++b) out(t, b + 1) = diff(t, b);
  }
  return out;
}

TdoaTrack tdoa_feature(const AudioBlock& block, const LocFrameConfig& cfg) {
  return SpatialFrontEnd(cfg).tdoa(block.channels);
}

Matrix mel_magnitude_difference(const AudioBlock& block, const LocFrameConfig& cfg) {
  return SpatialFrontEnd(cfg).magnitude_difference(block.channels);
}

Matrix assemble_spatial(const AudioBlock& block, const LocFrameConfig& cfg) {
  return SpatialFrontEnd(cfg).assemble(block.channels);
}

}  // namespace seld

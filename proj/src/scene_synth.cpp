#include "seld/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "seld/errors.hpp"
#include "seld/fft.hpp"

namespace seld {
namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix(seed ^ splitmix(stream + 1)); }

Vec3 direction_of(const SourceSpec& s) {
  const double tilt = s.off_axis_deg * kPi / 180.0;
  const double az = s.azimuth_deg * kPi / 180.0;
  const double normal = s.side == Side::front ? 1.0 : -1.0;
  return {std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az), normal * std::cos(tilt)};
}

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

// Phase-shift every bin of `spectrum` by `delay` samples and return the time signal.
std::vector<double> shifted(std::span<const fft::Complex> spectrum, std::size_t n, double delay) {
  std::vector<fft::Complex> work(spectrum.begin(), spectrum.end());
  // Rotate by a running phasor, re-anchored every 1024 bins to bound drift.
  const double step = -2.0 * kPi * delay / static_cast<double>(n);
  const fft::Complex w = std::polar(1.0, step);
  fft::Complex rot;
  for (std::size_t k = 0; k < work.size(); ++k) {
    rot = k % 1024 == 0 ? std::polar(1.0, step * static_cast<double>(k)) : rot * w;
    work[k] *= rot;
  }
  if (n % 2 == 0) {
    // The Nyquist bin of a real signal must stay real.
    const double phase = -kPi * delay;
    work[n / 2] = spectrum[n / 2] * std::cos(phase);
  }
  return fft::irfft(work, n);
}

// sum_{h=1..count} weights[h] * sin(h * phase) by the Chebyshev recurrence.
double harmonic_sum(const std::vector<double>& weights, double phase, int count) {
  const double c2 = 2.0 * std::cos(phase);
  double prev = 0.0;
  double cur = std::sin(phase);
  double v = 0.0;
  for (int h = 1; h <= count; ++h) {
    v += weights[h] * cur;
    const double next = c2 * cur - prev;
    prev = cur;
    cur = next;
  }
  return v;
}

// Smallest 2^a 3^b 5^c >= n; FFT sizes with small factors only.
std::size_t smooth_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

std::vector<double> white_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(rng);
  return out;
}

// Zero-phase spectral shaping of `signal` by `gain(f_hz)`.
template <class Gain>
std::vector<double> shape_spectrum(std::span<const double> signal, int rate, Gain gain) {
  const std::size_t n = smooth_size(signal.size());
  std::vector<double> padded(signal.begin(), signal.end());
  padded.resize(n, 0.0);
  auto spec = fft::rfft(padded, n);
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= gain(static_cast<double>(k) * rate / n);
  auto out = fft::irfft(spec, n);
  out.resize(signal.size());
  return out;
}

std::vector<double> speech_like(std::size_t n, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double f0 = 100.0 + 120.0 * uni(rng);
  const double syllable_hz = 3.0 + 2.5 * uni(rng);
  const double vibrato_hz = 0.3 + 0.7 * uni(rng);
  const double phase0 = 2.0 * kPi * uni(rng);
  const std::array<double, 3> formants{450.0 + 150.0 * uni(rng), 1300.0 + 400.0 * uni(rng), 2400.0 + 400.0 * uni(rng)};

  auto envelope_at = [&](double f) {
    double e = 0.0;
    for (std::size_t i = 0; i < formants.size(); ++i) {
      const double bw = 120.0 + 80.0 * static_cast<double>(i);
      e += std::exp(-0.5 * std::pow((f - formants[i]) / bw, 2.0)) / (1.0 + static_cast<double>(i));
    }
    return 0.05 + e;
  };

  const int harmonics = static_cast<int>(4000.0 / f0);
  std::vector<double> harmonic_gain(static_cast<std::size_t>(harmonics) + 1, 0.0);
  for (int h = 1; h <= harmonics; ++h) harmonic_gain[h] = envelope_at(h * f0) / std::sqrt(static_cast<double>(h));

  std::vector<double> out(n, 0.0);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double pitch = f0 * (1.0 + 0.08 * std::sin(2.0 * kPi * vibrato_hz * t));
    phase += 2.0 * kPi * pitch / rate;
    if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
    out[i] = harmonic_sum(harmonic_gain, phase, static_cast<int>(std::min<double>(harmonics, 0.5 * rate / pitch)));
  }

  // Breath noise, band limited to the fricative range.
  auto breath = white_noise(n, rng);
  breath = shape_spectrum(breath, rate, [](double f) { return (f > 2000.0 && f < 6000.0) ? 1.0 : 0.0; });
  double voiced_rms = 0.0;
  double breath_rms = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    voiced_rms += out[i] * out[i];
    breath_rms += breath[i] * breath[i];
  }
  const double breath_gain = breath_rms > 0.0 ? 0.15 * std::sqrt(voiced_rms / breath_rms) : 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double s = 0.5 * (1.0 + std::sin(2.0 * kPi * syllable_hz * t + phase0));
    const double env = 0.08 + 0.92 * s * s;
    out[i] = env * (out[i] + breath_gain * breath[i]);
  }
  return out;
}

std::vector<double> tone(std::size_t n, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double f0 = 300.0 + 600.0 * uni(rng);
  const double note_s = 0.25 + 0.3 * uni(rng);
  const double decay = 3.0 + 5.0 * uni(rng);
  std::vector<double> weights{0.0};
  for (int h = 1; h * f0 < 8000.0; ++h) weights.push_back(1.0 / std::pow(h, 1.5));
  const int harmonics = static_cast<int>(weights.size()) - 1;
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double in_note = std::fmod(t, note_s);
    const double env = 0.2 + 0.8 * std::exp(-decay * in_note);
    const double phase = 2.0 * kPi * std::fmod(f0 * t, 1.0);
    out[i] = env * harmonic_sum(weights, phase, harmonics);
  }
  return out;
}

std::vector<double> broadband_noise(std::size_t n, int rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double cutoff = 1500.0 + 1500.0 * uni(rng);
  const double mod_hz = 0.5 + 1.5 * uni(rng);
  auto out = white_noise(n, rng);
  out = shape_spectrum(out, rate, [cutoff](double f) {
    const double r = f / cutoff;
    return r * r / (1.0 + r * r);
  });
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    out[i] *= 0.6 + 0.4 * std::sin(2.0 * kPi * mod_hz * t);
  }
  return out;
}

void check(std::ostringstream& errs, bool ok, const std::string& msg) {
  if (!ok) errs << "\n  " << msg;
}

SignalKind kind_from(const std::string& s) {
  if (s == "noise") return SignalKind::noise;
  if (s == "tone") return SignalKind::tone;
  if (s == "speech_like" || s == "speech-like") return SignalKind::speech_like;
  throw ConfigError("unknown signal kind '" + s + "'");
}

Side side_from(const std::string& s) {
  if (s == "front") return Side::front;
  if (s == "back") return Side::back;
  throw ConfigError("unknown side '" + s + "'");
}

}  // namespace

std::string to_string(SignalKind kind) {
  switch (kind) {
    case SignalKind::noise:
      return "noise";
    case SignalKind::tone:
      return "tone";
    case SignalKind::speech_like:
      return "speech_like";
  }
  return "?";
}

std::string to_string(Side side) { return side == Side::front ? "front" : "back"; }

ArrayGeometry ArrayGeometry::phone_default() {
  ArrayGeometry g;
  const double half_x = g.body_dims.x / 2.0 - 0.010;
  const double half_y = g.body_dims.y / 2.0 - 0.010;
  const double half_z = g.body_dims.z / 2.0;
  // 1,2 front top; 3,4 back top behind 1,2; 5..8 bottom corners, unused by the features.
  g.mics = {Vec3{-half_x, half_y, half_z},  Vec3{half_x, half_y, half_z},   Vec3{-half_x, half_y, -half_z},
            Vec3{half_x, half_y, -half_z},  Vec3{-half_x, -half_y, half_z}, Vec3{half_x, -half_y, half_z},
            Vec3{-half_x, -half_y, -half_z}, Vec3{half_x, -half_y, -half_z}};
  return g;
}

void ArrayGeometry::validate() const {
  if (body_dims.x <= 0 || body_dims.y <= 0 || body_dims.z <= 0) throw ConfigError("geometry: body_dims must be positive");
}

void to_json(nlohmann::json& j, const ArrayGeometry& g) {
  j = nlohmann::json::object();
  j["body_dims"] = {g.body_dims.x, g.body_dims.y, g.body_dims.z};
  auto& mics = j["mic_positions"] = nlohmann::json::array();
  for (const auto& m : g.mics) mics.push_back({m.x, m.y, m.z});
}

void from_json(const nlohmann::json& j, ArrayGeometry& g) {
  g = ArrayGeometry::phone_default();
  if (j.contains("body_dims")) {
    const auto& b = j.at("body_dims");
    g.body_dims = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
  }
  if (j.contains("mic_positions")) {
    const auto& m = j.at("mic_positions");
    if (m.size() != 8) throw ConfigError("geometry: mic_positions must list 8 microphones");
    for (std::size_t i = 0; i < 8; ++i) g.mics[i] = {m[i].at(0).get<double>(), m[i].at(1).get<double>(), m[i].at(2).get<double>()};
  }
}

void to_json(nlohmann::json& j, const SourceSpec& s) {
  j = {{"kind", to_string(s.kind)},       {"side", to_string(s.side)},
       {"level_db", s.level_db},          {"onset_s", s.onset_s},
       {"offset_s", s.offset_s},          {"off_axis_deg", s.off_axis_deg},
       {"azimuth_deg", s.azimuth_deg}};
}

void from_json(const nlohmann::json& j, SourceSpec& s) {
  s = SourceSpec{};
  s.kind = kind_from(j.at("kind").get<std::string>());
  s.side = side_from(j.at("side").get<std::string>());
  s.level_db = j.value("level_db", s.level_db);
  s.onset_s = j.at("onset_s").get<double>();
  s.offset_s = j.at("offset_s").get<double>();
  s.off_axis_deg = j.value("off_axis_deg", 0.0);
  s.azimuth_deg = j.value("azimuth_deg", 0.0);
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"id", s.id},
       {"scene_kind", s.scene_kind},
       {"duration_s", s.duration_s},
       {"sample_rate", s.sample_rate},
       {"noise_floor_db", s.noise_floor_db},
       {"shadowing_db", s.shadowing_db},
       {"seed", s.seed},
       {"sources", s.sources}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s = SceneSpec{};
  s.id = j.value("id", s.id);
  s.scene_kind = j.value("scene_kind", s.scene_kind);
  s.duration_s = j.at("duration_s").get<double>();
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  s.noise_floor_db = j.value("noise_floor_db", s.noise_floor_db);
  s.shadowing_db = j.value("shadowing_db", s.shadowing_db);
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("sources")) s.sources = j.at("sources").get<std::vector<SourceSpec>>();
}

void SceneSpec::validate() const {
  std::ostringstream errs;
  check(errs, duration_s > 0.0, "duration_s must be positive");
  check(errs, sample_rate > 0, "sample_rate must be positive");
  check(errs, shadowing_db >= 0.0, "shadowing_db must be non-negative");
  check(errs, !id.empty(), "id must not be empty");
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& s = sources[i];
    const std::string at = "sources[" + std::to_string(i) + "]: ";
    check(errs, s.onset_s >= 0.0, at + "onset_s must be >= 0");
    check(errs, s.onset_s < s.offset_s, at + "onset_s must be < offset_s");
    check(errs, s.offset_s <= duration_s, at + "offset_s must be <= duration_s");
    check(errs, s.off_axis_deg >= 0.0 && s.off_axis_deg < 90.0, at + "off_axis_deg must be in [0, 90)");
  }
  if (!errs.str().empty()) throw ConfigError("scene '" + id + "' invalid:" + errs.str());
}

std::vector<double> fractional_delay(std::span<const double> signal, double delay) {
  const std::size_t n = signal.size();
  if (n == 0) return {};
  if (std::abs(delay) >= static_cast<double>(n)) throw std::invalid_argument("fractional_delay: |delay| >= length");
  if (delay == 0.0) return {signal.begin(), signal.end()};
  const auto spectrum = fft::rfft(signal, n);
  return shifted(spectrum, n, delay);
}

double arrival_delay_s(const ArrayGeometry& geom, int mic, const SourceSpec& source, double speed_of_sound) {
  const auto u = direction_of(source);
  const auto& p = geom.mics.at(static_cast<std::size_t>(mic));
  return -(p.x * u.x + p.y * u.y + p.z * u.z) / speed_of_sound;
}

double pair_delay_samples(const ArrayGeometry& geom, int mic_i, int mic_j, const SourceSpec& source, int sample_rate,
                          double speed_of_sound) {
  return (arrival_delay_s(geom, mic_j, source, speed_of_sound) - arrival_delay_s(geom, mic_i, source, speed_of_sound)) *
         sample_rate;
}

std::vector<LabelSet> labels_from_sources(const SceneSpec& spec) {
  const auto seconds = static_cast<std::size_t>(std::floor(spec.duration_s + 1e-9));
  std::vector<LabelSet> labels(seconds);
  for (const auto& src : spec.sources) {
    for (std::size_t s = 0; s < seconds; ++s) {
      const double overlap = std::min(src.offset_s, double(s + 1)) - std::max(src.onset_s, double(s));
      if (overlap <= 0.0) continue;
      if (src.kind == SignalKind::speech_like) {
        (src.side == Side::front ? labels[s].speech_front : labels[s].speech_back) = true;
      } else {
        labels[s].something_else = true;
      }
    }
  }
  return labels;
}

std::vector<double> synthesize_source(const SourceSpec& source, std::size_t total_samples, int sample_rate,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto first = static_cast<std::size_t>(std::llround(source.onset_s * sample_rate));
  const auto last = std::min(total_samples, static_cast<std::size_t>(std::llround(source.offset_s * sample_rate)));
  std::vector<double> out(total_samples, 0.0);
  if (last <= first) return out;
  const std::size_t n = last - first;

  std::vector<double> body;
  switch (source.kind) {
    case SignalKind::speech_like:
      body = speech_like(n, sample_rate, rng);
      break;
    case SignalKind::tone:
      body = tone(n, sample_rate, rng);
      break;
    case SignalKind::noise:
      body = broadband_noise(n, sample_rate, rng);
      break;
  }
  const std::size_t fade = std::min<std::size_t>(n / 2, static_cast<std::size_t>(0.01 * sample_rate));
  for (std::size_t i = 0; i < fade; ++i) {
    const double g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / static_cast<double>(fade));
    body[i] *= g;
    body[n - 1 - i] *= g;
  }
  double energy = 0.0;
  for (double v : body) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(n));
  const double gain = rms > 0.0 ? db_to_gain(source.level_db) / rms : 0.0;
  for (std::size_t i = 0; i < n; ++i) out[first + i] = gain * body[i];
  return out;
}

RenderedScene render_scene(const SceneSpec& spec, const ArrayGeometry& geom, double speed_of_sound) {
  spec.validate();
  geom.validate();
  const auto total = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
  constexpr std::size_t kMics = 8;

  std::vector<std::vector<double>> mix(kMics, std::vector<double>(total, 0.0));
  for (std::size_t si = 0; si < spec.sources.size(); ++si) {
    const auto& src = spec.sources[si];
    const auto dry = synthesize_source(src, total, spec.sample_rate, derive_seed(spec.seed, si));
    // Work on the active interval plus a guard band; delays are a few samples
    // at most, so circular wrap-around stays inside the zero guard.
    constexpr std::size_t kGuard = 256;
    const auto onset = static_cast<std::size_t>(std::llround(src.onset_s * spec.sample_rate));
    const auto offset = static_cast<std::size_t>(std::llround(src.offset_s * spec.sample_rate));
    const std::size_t first = onset > kGuard ? onset - kGuard : 0;
    const std::size_t last = std::min(total, offset + kGuard);
    if (last <= first) continue;
    const std::size_t n = last - first;
    const std::size_t padded_n = smooth_size(n);
    std::vector<double> segment(dry.begin() + static_cast<std::ptrdiff_t>(first), dry.begin() + static_cast<std::ptrdiff_t>(last));
    segment.resize(padded_n, 0.0);
    const auto spectrum = fft::rfft(segment, padded_n);
    const double facing = src.side == Side::front ? 1.0 : -1.0;
    for (std::size_t m = 0; m < kMics; ++m) {
      const double delay = arrival_delay_s(geom, static_cast<int>(m), src, speed_of_sound) * spec.sample_rate;
      const bool shadowed = geom.mics[m].z * facing < 0.0;
      const double gain = shadowed ? db_to_gain(-spec.shadowing_db) : 1.0;
      const auto wet = shifted(spectrum, padded_n, delay);
      for (std::size_t i = 0; i < n; ++i) mix[m][first + i] += gain * wet[i];
    }
  }

  std::mt19937_64 noise_rng(derive_seed(spec.seed, 0xF100Du));
  std::normal_distribution<double> normal(0.0, db_to_gain(spec.noise_floor_db));
  RenderedScene out;
  out.recording.sample_rate = spec.sample_rate;
  out.recording.channels.assign(kMics, std::vector<float>(total));
  for (std::size_t m = 0; m < kMics; ++m) {
    for (std::size_t i = 0; i < total; ++i) {
      out.recording.channels[m][i] = static_cast<float>(mix[m][i] + normal(noise_rng));
    }
  }
  out.labels = labels_from_sources(spec);
  return out;
}

SceneSpec random_scene(const std::string& id, const std::string& scene_kind, std::uint64_t seed,
                       const CorpusOptions& options) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SceneSpec spec;
  spec.id = id;
  spec.scene_kind = scene_kind;
  spec.duration_s = options.duration_s;
  spec.seed = splitmix(seed);
  spec.noise_floor_db = scene_kind == "outdoor" ? -50.0 : -58.0;

  auto speech = [&](Side side, double t0, double t1) {
    SourceSpec s;
    s.kind = SignalKind::speech_like;
    s.side = side;
    s.level_db = -30.0 + 8.0 * uni(rng);
    s.onset_s = t0 + 0.1 * uni(rng);
    s.offset_s = t1 - 0.1 * uni(rng);
    s.off_axis_deg = 35.0 * uni(rng);
    s.azimuth_deg = 360.0 * uni(rng);
    spec.sources.push_back(s);
  };
  auto other = [&](double t0, double t1) {
    SourceSpec s;
    s.kind = uni(rng) < 0.5 ? SignalKind::tone : SignalKind::noise;
    s.side = uni(rng) < 0.5 ? Side::front : Side::back;
    s.level_db = -32.0 + 8.0 * uni(rng);
    s.onset_s = t0 + 0.1 * uni(rng);
    s.offset_s = t1 - 0.1 * uni(rng);
    s.off_axis_deg = 60.0 * uni(rng);
    s.azimuth_deg = 360.0 * uni(rng);
    spec.sources.push_back(s);
  };

  const int seconds = static_cast<int>(std::floor(options.duration_s));
  int t = 0;
  while (t < seconds) {
    const int len = std::min(seconds - t, 2 + static_cast<int>(uni(rng) * 4.0));
    const double t0 = t;
    const double t1 = t + len;
    const double r = uni(rng);
    if (r < 0.22) {
      // background only
    } else if (r < 0.62) {
      const double kind = uni(rng);
      if (kind < options.both_speech_share) {
        speech(Side::front, t0, t1);
        speech(Side::back, t0, t1);
      } else {
        speech(kind < 0.5 + options.both_speech_share / 2 ? Side::front : Side::back, t0, t1);
      }
      if (uni(rng) < 0.15) other(t0, t1);
    } else {
      other(t0, t1);
    }
    t += len;
  }
  return spec;
}

}  // namespace seld

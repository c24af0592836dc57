#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seld/audio_io.hpp"

namespace seld {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Eight-microphone phone-shaped array. Front surface is +z.
/// Mics 1/3 and 2/4 (indices 0/2, 1/3) are front/back pairs sharing x,y.
struct ArrayGeometry {
  std::array<Vec3, 8> mics{};
  Vec3 body_dims{0.140, 0.065, 0.007};

  static ArrayGeometry phone_default();
  void validate() const;
};

void to_json(nlohmann::json& j, const ArrayGeometry& g);
void from_json(const nlohmann::json& j, ArrayGeometry& g);

enum class SignalKind { noise, tone, speech_like };
enum class Side { front, back };

struct SourceSpec {
  SignalKind kind = SignalKind::speech_like;
  Side side = Side::front;
  double level_db = -26.0;  // RMS over the active interval, dB re full scale
  double onset_s = 0.0;
  double offset_s = 0.0;
  double off_axis_deg = 0.0;  // angle away from the surface normal of `side`
  double azimuth_deg = 0.0;   // rotation of the off-axis tilt around the normal
};

struct SceneSpec {
  std::string id = "scene";
  std::string scene_kind = "indoor";
  double duration_s = 10.0;
  int sample_rate = 48000;
  double noise_floor_db = -60.0;
  double shadowing_db = 6.0;  // flat loss on mics facing away from a source
  std::uint64_t seed = 0;
  std::vector<SourceSpec> sources;

  // Throws ConfigError naming every violated field.
  void validate() const;
};

void to_json(nlohmann::json& j, const SourceSpec& s);
void from_json(const nlohmann::json& j, SourceSpec& s);
void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

std::string to_string(SignalKind kind);
std::string to_string(Side side);

constexpr double kSpeedOfSound = 343.0;

/// Delay by a real number of samples using a frequency-domain phase shift,
/// treating the signal as periodic.
std::vector<double> fractional_delay(std::span<const double> signal, double delay);

/// Arrival delay (seconds, relative to the array origin) of a far-field
/// source at microphone `mic` (0-based).
double arrival_delay_s(const ArrayGeometry& geom, int mic, const SourceSpec& source,
                       double speed_of_sound = kSpeedOfSound);

/// True delay of mic j relative to mic i in samples; positive when mic i hears
/// the source first.
double pair_delay_samples(const ArrayGeometry& geom, int mic_i, int mic_j, const SourceSpec& source,
                          int sample_rate, double speed_of_sound = kSpeedOfSound);

// Per-second labels from source activity: a second carries a source's label
// when the source's active interval overlaps it by a positive amount.
std::vector<LabelSet> labels_from_sources(const SceneSpec& spec);

struct RenderedScene {
  MultichannelRecording recording;
  std::vector<LabelSet> labels;
};

RenderedScene render_scene(const SceneSpec& spec, const ArrayGeometry& geom,
                           double speed_of_sound = kSpeedOfSound);

// Dry mono source waveform as rendered before propagation (exposed for tests).
std::vector<double> synthesize_source(const SourceSpec& source, std::size_t total_samples, int sample_rate,
                                      std::uint64_t seed);

struct CorpusOptions {
  double duration_s = 30.0;
  double both_speech_share = 0.06;  // share of speech episodes with front and back talkers together
};

/// Randomized scene built from back-to-back episodes of whole seconds.
SceneSpec random_scene(const std::string& id, const std::string& scene_kind, std::uint64_t seed,
                       const CorpusOptions& options = {});

}  // namespace seld

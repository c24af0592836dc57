#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seld/audio_io.hpp"
#include "seld/matrix.hpp"
#include "seld/neural.hpp"
#include "seld/spatial_features.hpp"
#include "seld/spectral_features.hpp"
#include "seld/training.hpp"

namespace seld {

struct FeatureConfig {
  StftConfig stft;
  int n_mel = 40;
  double fmin = 0.0;
  double fmax = 24000.0;
  LocFrameConfig localization;

  void validate() const;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

/// Unstandardized features of one labeled one-second block.
struct BlockFeatures {
  std::string recording_id;
  int second = 0;
  int fold = -1;
  LabelSet labels;
  Matrix spectral;  // frames x n_mel log-mel of the mono downmix
  Matrix spatial;   // frames x (1 + n_mel) [TDOA | magnitude difference]
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg = {});

  const FeatureConfig& config() const { return cfg_; }
  std::size_t spectral_frames() const;
  std::size_t spatial_frames() const;
  int sample_rate() const { return cfg_.stft.sample_rate; }

  // Mono downmix and peak normalization run over the whole recording before
  // blocking, so relative levels between blocks of a recording survive.
  std::vector<BlockFeatures> extract(const MultichannelRecording& rec, std::span<const LabelSet> labels,
                                     const std::string& recording_id, int fold, int threads = 1) const;
  // A lone block is normalized as a one-second recording.
  BlockFeatures extract_block(const AudioBlock& block) const;

 private:
  BlockFeatures from_parts(std::span<const float> mono, std::span<const std::vector<float>> channels) const;

  FeatureConfig cfg_;
  SpectralFrontEnd spectral_;
  SpatialFrontEnd spatial_;
};

/// Nearest-in-time resampling of `source` rows onto `target_frames` frames.
/// Frame k of each stream is centred at (k * hop + frame / 2) samples.
Matrix upsample_nearest(const Matrix& source, std::size_t source_frame, std::size_t source_hop,
                        std::size_t target_frames, std::size_t target_frame, std::size_t target_hop);

std::vector<float> stage1_targets(const LabelSet& l);  // {speech, something_else}
std::vector<float> stage2_targets(const LabelSet& l);  // {front, back}
std::vector<float> flat_targets(const LabelSet& l);    // {front, back, something_else}

struct FlatInputOptions {
  bool mono_only = false;
};

/// Standardized model inputs for each stage.
class InputBuilder {
 public:
  InputBuilder(const FeatureExtractor& extractor, Standardizer spectral, Standardizer spatial);

  std::vector<float> stage1(const BlockFeatures& f) const;
  std::vector<float> stage2(const BlockFeatures& f) const;
  // frames x (n_mel + 1 + n_mel), or frames x n_mel when mono_only.
  std::vector<float> flat(const BlockFeatures& f, FlatInputOptions options = {}) const;

  const Standardizer& spectral_standardizer() const { return spectral_; }
  const Standardizer& spatial_standardizer() const { return spatial_; }

 private:
  const FeatureExtractor* extractor_;
  Standardizer spectral_;
  Standardizer spatial_;
};

struct BlockPrediction {
  float p_speech = 0.0f;
  float p_something_else = 0.0f;
  std::optional<float> p_front;
  std::optional<float> p_back;
  LabelSet labels;
};

struct HierarchicalSystem {
  nn::Model<float> detector;
  nn::Model<float> localizer;
  Standardizer spectral;
  Standardizer spatial;
};

struct FlatSystem {
  nn::Model<float> model;
  Standardizer spectral;
  Standardizer spatial;
  FlatInputOptions options;
};

/// Stage 1 on the spectral features; stage 2 only when speech >= 0.5.
BlockPrediction predict_hierarchical(const BlockFeatures& features, const HierarchicalSystem& system,
                                     const FeatureExtractor& extractor);
BlockPrediction predict_hierarchical(const AudioBlock& block, const HierarchicalSystem& system,
                                     const FeatureExtractor& extractor);

BlockPrediction predict_flat(const BlockFeatures& features, const FlatSystem& system, const FeatureExtractor& extractor);
BlockPrediction predict_flat(const AudioBlock& block, const FlatSystem& system, const FeatureExtractor& extractor);

/// Per-label and macro P/R/F1 over {speech_front, speech_back, something_else}.
F1Report evaluate_joint(std::span<const BlockPrediction> predictions, std::span<const LabelSet> annotations);

extern const std::vector<std::string> kJointLabels;

// Prediction CSV with header
// recording_id,second,speech_front,speech_back,something_else,p_front,p_back,p_else,p_speech
std::string prediction_csv_header();
std::string prediction_csv_row(const std::string& recording_id, int second, const BlockPrediction& p);

}  // namespace seld

#include "seld/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "seld/errors.hpp"

namespace seld {

const std::vector<std::string> kJointLabels{"speech_front", "speech_back", "something_else"};

void FeatureConfig::validate() const {
  stft.validate();
  localization.validate();
  if (n_mel <= 0) throw ConfigError("features: n_mel must be positive");
  if (stft.sample_rate != localization.sample_rate) throw ConfigError("features: stage sample rates differ");
  if (!(fmin >= 0 && fmin < fmax && fmax <= stft.sample_rate / 2.0)) throw ConfigError("features: bad mel range");
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
  j = {{"stft", c.stft}, {"n_mel", c.n_mel}, {"fmin", c.fmin}, {"fmax", c.fmax}, {"localization", c.localization}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
  c = FeatureConfig{};
  if (j.contains("stft")) c.stft = j.at("stft").get<StftConfig>();
  c.n_mel = j.value("n_mel", c.n_mel);
  c.fmin = j.value("fmin", c.fmin);
  c.fmax = j.value("fmax", c.stft.sample_rate / 2.0);
  if (j.contains("localization")) c.localization = j.at("localization").get<LocFrameConfig>();
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      spectral_(cfg_.stft, cfg_.n_mel, cfg_.fmin, cfg_.fmax),
      spatial_(cfg_.localization) {}

std::size_t FeatureExtractor::spectral_frames() const {
  return frame_count(static_cast<std::size_t>(sample_rate()), static_cast<std::size_t>(cfg_.stft.frame_length()),
                     static_cast<std::size_t>(cfg_.stft.hop_length()));
}

std::size_t FeatureExtractor::spatial_frames() const { return spatial_.frames_for(static_cast<std::size_t>(sample_rate())); }

BlockFeatures FeatureExtractor::from_parts(std::span<const float> mono, std::span<const std::vector<float>> channels) const {
  BlockFeatures f;
  f.spectral = spectral_.log_mel(mono);
  f.spatial = spatial_.assemble(channels);
  return f;
}

std::vector<BlockFeatures> FeatureExtractor::extract(const MultichannelRecording& rec, std::span<const LabelSet> labels,
                                                     const std::string& recording_id, int fold, int threads) const {
  if (rec.sample_rate != sample_rate()) {
    throw UnsupportedError("recording '" + recording_id + "' has rate " + std::to_string(rec.sample_rate) +
                           " Hz; features are configured for " + std::to_string(sample_rate()) + " Hz");
  }
  const auto mono = downmix_and_normalize(rec);
  const auto blocks = segment_blocks(rec, labels);
  const auto rate = static_cast<std::size_t>(rec.sample_rate);
  std::vector<BlockFeatures> out(blocks.size());
  parallel_for(blocks.size(), threads, [&](std::size_t b) {
    const auto slice = std::span<const float>(mono.samples).subspan(b * rate, rate);
    out[b] = from_parts(slice, blocks[b].channels);
    out[b].recording_id = recording_id;
    out[b].second = blocks[b].block_index;
    out[b].fold = fold;
    out[b].labels = blocks[b].labels;
  });
  return out;
}

BlockFeatures FeatureExtractor::extract_block(const AudioBlock& block) const {
  if (block.sample_rate != sample_rate()) throw UnsupportedError("block sample rate does not match feature config");
  const auto mono = downmix_and_normalize(block.channels);
  auto f = from_parts(mono.samples, block.channels);
  f.second = block.block_index;
  f.labels = block.labels;
  return f;
}

Matrix upsample_nearest(const Matrix& source, std::size_t source_frame, std::size_t source_hop, std::size_t target_frames,
                        std::size_t target_frame, std::size_t target_hop) {
  if (source.rows == 0) throw ShapeError("upsample_nearest: empty source");
  Matrix out(target_frames, source.cols);
  for (std::size_t t = 0; t < target_frames; ++t) {
    const double centre = static_cast<double>(t * target_hop) + target_frame / 2.0;
    const double pos = (centre - source_frame / 2.0) / static_cast<double>(source_hop);
    const auto k = static_cast<std::size_t>(std::clamp(std::lround(pos), 0L, static_cast<long>(source.rows) - 1));
    std::copy(source.row(k).begin(), source.row(k).end(), out.row(t).begin());
  }
  return out;
}

std::vector<float> stage1_targets(const LabelSet& l) { return {l.speech() ? 1.0f : 0.0f, l.something_else ? 1.0f : 0.0f}; }
std::vector<float> stage2_targets(const LabelSet& l) {
  return {l.speech_front ? 1.0f : 0.0f, l.speech_back ? 1.0f : 0.0f};
}
std::vector<float> flat_targets(const LabelSet& l) {
  return {l.speech_front ? 1.0f : 0.0f, l.speech_back ? 1.0f : 0.0f, l.something_else ? 1.0f : 0.0f};
}

InputBuilder::InputBuilder(const FeatureExtractor& extractor, Standardizer spectral, Standardizer spatial)
    : extractor_(&extractor), spectral_(std::move(spectral)), spatial_(std::move(spatial)) {}

std::vector<float> InputBuilder::stage1(const BlockFeatures& f) const { return spectral_.apply(f.spectral).data; }

std::vector<float> InputBuilder::stage2(const BlockFeatures& f) const { return spatial_.apply(f.spatial).data; }

std::vector<float> InputBuilder::flat(const BlockFeatures& f, FlatInputOptions options) const {
  const Matrix spec = spectral_.apply(f.spectral);
  if (options.mono_only) return spec.data;
  const auto& cfg = extractor_->config();
  const Matrix spat = upsample_nearest(spatial_.apply(f.spatial), cfg.localization.frame_length(),
                                       cfg.localization.hop_length(), spec.rows, cfg.stft.frame_length(),
                                       cfg.stft.hop_length());
  Matrix joined(spec.rows, spec.cols + spat.cols);
  for (std::size_t t = 0; t < spec.rows; ++t) {
    auto dst = joined.row(t);
    std::copy(spec.row(t).begin(), spec.row(t).end(), dst.begin());
    std::copy(spat.row(t).begin(), spat.row(t).end(), dst.begin() + static_cast<std::ptrdiff_t>(spec.cols));
  }
  return joined.data;
}

BlockPrediction predict_hierarchical(const BlockFeatures& features, const HierarchicalSystem& system,
                                     const FeatureExtractor& extractor) {
  const InputBuilder inputs(extractor, system.spectral, system.spatial);
  const auto p1 = system.detector.predict(inputs.stage1(features));
  if (p1.size() != 2) throw ShapeError("detector must emit 2 probabilities");
  BlockPrediction out;
  out.p_speech = p1[0];
  out.p_something_else = p1[1];
  out.labels.something_else = p1[1] >= nn::kDecisionThreshold;
  if (p1[0] >= nn::kDecisionThreshold) {
    const auto p2 = system.localizer.predict(inputs.stage2(features));
    if (p2.size() != 2) throw ShapeError("localizer must emit 2 probabilities");
    out.p_front = p2[0];
    out.p_back = p2[1];
    out.labels.speech_front = p2[0] >= nn::kDecisionThreshold;
    out.labels.speech_back = p2[1] >= nn::kDecisionThreshold;
  }
  return out;
}

BlockPrediction predict_hierarchical(const AudioBlock& block, const HierarchicalSystem& system,
                                     const FeatureExtractor& extractor) {
  return predict_hierarchical(extractor.extract_block(block), system, extractor);
}

BlockPrediction predict_flat(const BlockFeatures& features, const FlatSystem& system, const FeatureExtractor& extractor) {
  const InputBuilder inputs(extractor, system.spectral, system.spatial);
  const auto p = system.model.predict(inputs.flat(features, system.options));
  if (p.size() != 3) throw ShapeError("flat model must emit 3 probabilities");
  BlockPrediction out;
  out.p_front = p[0];
  out.p_back = p[1];
  out.p_something_else = p[2];
  out.p_speech = std::max(p[0], p[1]);
  out.labels = {p[0] >= nn::kDecisionThreshold, p[1] >= nn::kDecisionThreshold, p[2] >= nn::kDecisionThreshold};
  return out;
}

BlockPrediction predict_flat(const AudioBlock& block, const FlatSystem& system, const FeatureExtractor& extractor) {
  return predict_flat(extractor.extract_block(block), system, extractor);
}

F1Report evaluate_joint(std::span<const BlockPrediction> predictions, std::span<const LabelSet> annotations) {
  if (predictions.size() != annotations.size()) {
    throw AlignmentError("evaluate_joint: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(annotations.size()) + " annotated blocks");
  }
  std::vector<std::vector<bool>> pred, truth;
  pred.reserve(predictions.size());
  truth.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i].labels;
    const auto& t = annotations[i];
    pred.push_back({p.speech_front, p.speech_back, p.something_else});
    truth.push_back({t.speech_front, t.speech_back, t.something_else});
  }
  return f1_score(pred, truth);
}

std::string prediction_csv_header() {
  return "recording_id,second,speech_front,speech_back,something_else,p_front,p_back,p_else,p_speech";
}

std::string prediction_csv_row(const std::string& recording_id, int second, const BlockPrediction& p) {
  auto prob = [](std::optional<float> v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(*v));
    return std::string(buf);
  };
  std::ostringstream out;
  out << recording_id << ',' << second << ',' << int(p.labels.speech_front) << ',' << int(p.labels.speech_back) << ','
      << int(p.labels.something_else) << ',' << prob(p.p_front) << ',' << prob(p.p_back) << ','
      << prob(p.p_something_else) << ',' << prob(p.p_speech);
  return out.str();
}

}  // namespace seld

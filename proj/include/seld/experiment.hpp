#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "seld/checkpoint.hpp"
#include "seld/pipeline.hpp"
#include "seld/scene_synth.hpp"
#include "seld/training.hpp"

namespace seld {

constexpr int kConfigVersion = 1;
constexpr int kArtifactVersion = 1;

struct ModelConfig {
  std::vector<int> conv_filters;
  std::vector<int> lstm_units;

  static ModelConfig defaults_for(Stage stage);
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);

struct SynthConfig {
  int scenes = 24;
  double duration_s = 30.0;
  double outdoor_share = 0.5;
  double both_speech_share = 0.06;
  ArrayGeometry geometry = ArrayGeometry::phone_default();
};

void to_json(nlohmann::json& j, const SynthConfig& c);

struct ExperimentConfig {
  int version = kConfigVersion;
  std::string data_root;      // corpus directory written by `synth`
  std::string output_dir;
  std::string manifest_path;  // defaults to <data_root>/manifest.json
  std::string features_dir;   // optional feature cache written by `features`
  std::uint64_t seed = 7;
  int rotation = 0;
  int threads = 1;
  FeatureConfig features;
  SynthConfig synth;
  ModelConfig model_stage1 = ModelConfig::defaults_for(Stage::detection);
  ModelConfig model_stage2 = ModelConfig::defaults_for(Stage::localization);
  ModelConfig model_flat = ModelConfig::defaults_for(Stage::flat);
  TrainConfig train_stage1 = TrainConfig::defaults_for(Stage::detection);
  TrainConfig train_stage2 = TrainConfig::defaults_for(Stage::localization);
  TrainConfig train_flat = TrainConfig::defaults_for(Stage::flat);
  FlatInputOptions flat_input;

  std::filesystem::path manifest() const;
  const ModelConfig& model_for(Stage stage) const;
  ModelConfig& model_for(Stage stage);
  // Seeds and thread count are filled in from the experiment fields.
  TrainConfig train_for(Stage stage) const;
  TrainConfig& train_config(Stage stage);

  // Every violated field, empty when valid. With `need_data` the corpus
  // directory and manifest must exist.
  std::vector<std::string> violations(bool need_data) const;
  // Throws ConfigError listing all violations.
  void validate(bool need_data) const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Unknown keys and type errors are reported together as a ConfigError;
// a `version` other than kConfigVersion is a VersionError.
ExperimentConfig experiment_config_from(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// FNV-1a 64 over the canonical JSON with paths and thread count removed, as
// 16 hex digits. Runs that would compute the same thing share a hash.
std::string config_hash(const ExperimentConfig& c);
std::string feature_hash(const FeatureConfig& c);
std::string fnv1a_hex(const std::string& bytes);

// ---- corpus ---------------------------------------------------------------

struct SynthResult {
  FoldManifest manifest;
  FoldStats stats;
  std::size_t blocks = 0;
};

/// Renders `specs` (or, when empty, random scenes drawn from the synth config)
/// to <out>/audio/<id>.wav, <out>/annotations.csv, <out>/scenes/<id>.json and
/// <out>/manifest.json.
SynthResult synthesize_corpus(const ExperimentConfig& cfg, const std::vector<SceneSpec>& specs,
                              const std::filesystem::path& out);

// Scene specs read from every *.json file in a directory, sorted by name.
std::vector<SceneSpec> load_scene_specs(const std::filesystem::path& dir);

struct Corpus {
  std::filesystem::path root;
  FoldManifest manifest;
  std::vector<AnnotationRow> annotations;
};

Corpus load_corpus(const ExperimentConfig& cfg);
FoldManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const FoldManifest& manifest, const std::string& config_hash);

/// Features of every block in manifest order (fold 0 first), from the feature
/// cache when configured and otherwise from the audio.
std::vector<BlockFeatures> corpus_features(const ExperimentConfig& cfg, const Corpus& corpus,
                                           const FeatureExtractor& extractor);
// Writes one stage1 and one stage2 cache entry per recording.
void write_corpus_features(const ExperimentConfig& cfg, const std::vector<BlockFeatures>& blocks,
                           const std::filesystem::path& dir);

// ---- training and evaluation ----------------------------------------------

struct Standardizers {
  Standardizer spectral;
  Standardizer spatial;
};

// Fit on every block of the rotation's training folds.
Standardizers fit_standardizers(const std::vector<BlockFeatures>& blocks, const RotationSplit& split);

nn::ModelSpec model_spec_for(const ExperimentConfig& cfg, Stage stage, const FeatureExtractor& extractor);

Split make_split(Stage stage, SplitRole role, std::vector<int> folds, const std::vector<BlockFeatures>& blocks,
                 const InputBuilder& inputs, FlatInputOptions flat);

struct StageRun {
  Checkpoint checkpoint;
  std::string log_jsonl;
  TrainResult result;
};

StageRun run_stage(const ExperimentConfig& cfg, Stage stage, const std::vector<BlockFeatures>& blocks,
                   const FeatureExtractor& extractor, const EpochCallback& on_epoch = {});

// Rebuild systems from checkpoints, checking stage tags and that the stored
// feature configuration matches `extractor`.
HierarchicalSystem hierarchical_from(const Checkpoint& stage1, const Checkpoint& stage2,
                                     const FeatureExtractor& extractor);
FlatSystem flat_from(const Checkpoint& flat, const FeatureExtractor& extractor);

struct SystemEvaluation {
  std::vector<BlockPrediction> predictions;
  F1Report report;
  std::size_t gate_violations = 0;  // direction label without detected speech
};

SystemEvaluation evaluate_hierarchical(const HierarchicalSystem& system, const std::vector<BlockFeatures>& blocks,
                                       const FeatureExtractor& extractor, int threads);
SystemEvaluation evaluate_flat(const FlatSystem& system, const std::vector<BlockFeatures>& blocks,
                               const FeatureExtractor& extractor, int threads);

std::vector<BlockFeatures> blocks_in_folds(const std::vector<BlockFeatures>& blocks, const std::vector<int>& folds);

nlohmann::json evaluation_json(const SystemEvaluation& e);
// Human-readable side-by-side table of per-label and macro scores.
std::string evaluation_table(const std::vector<std::pair<std::string, const SystemEvaluation*>>& systems);
std::string fold_stats_table(const FoldStats& stats);

}  // namespace seld

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seld/audio_io.hpp"
#include "seld/neural.hpp"
#include "seld/optim.hpp"

namespace seld {

constexpr int kFoldCount = 6;

/// Rotation r tests on fold r, validates on r+1 and r+2, trains on r+3..r+5 (mod 6).
struct RotationSplit {
  std::array<int, 3> train{};
  std::array<int, 2> validation{};
  int test = 0;
};

RotationSplit rotation_split(int rotation);

struct FoldManifest {
  std::array<std::vector<std::string>, kFoldCount> folds;
  int rotation = 0;

  // Throws ConfigError for duplicated recordings or a bad rotation index.
  void validate() const;
  // -1 when the recording is not listed.
  int fold_of(const std::string& recording_id) const;
  std::size_t recording_count() const;
};

void to_json(nlohmann::json& j, const FoldManifest& m);
void from_json(const nlohmann::json& j, FoldManifest& m);

struct RecordingInfo {
  std::string id;
  std::string scene_kind;
};

/// Whole recordings dealt round-robin to the folds, grouped by scene kind so
/// each fold keeps the corpus-wide kind proportions.
FoldManifest assign_folds(std::vector<RecordingInfo> recordings);

struct FoldStatsRow {
  int total = 0;
  int something_else = 0;
  int speech_any = 0;  // front or back
  int no_labels = 0;
  int front_only = 0;
  int back_only = 0;
  int front_and_back = 0;
  bool operator==(const FoldStatsRow&) const = default;
};

struct LabeledBlockRef {
  int fold = 0;
  LabelSet labels;
};

using FoldStats = std::array<FoldStatsRow, kFoldCount>;
FoldStats compute_fold_stats(std::span<const LabeledBlockRef> blocks);

/// Indices into the input after random oversampling: every class present is
/// drawn with replacement up to the size of the largest class. Each class
/// keeps all of its original members.
std::vector<std::size_t> oversample_balance(std::span<const int> class_ids, std::uint64_t seed);

struct LabelScore {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

LabelScore score_counts(int tp, int fp, int fn, int tn);

struct F1Report {
  std::vector<LabelScore> labels;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

/// predictions[block][label] vs targets[block][label].
F1Report f1_score(std::span<const std::vector<bool>> predictions, std::span<const std::vector<bool>> targets);

enum class Stage { detection, localization, flat };

std::string to_string(Stage stage);
Stage stage_from(const std::string& name);
std::vector<std::string> label_names(Stage stage);

struct Example {
  std::vector<float> input;  // frames x features, row-major
  std::vector<float> targets;
  int fold = 0;
  std::string recording_id;
  int second = 0;
};

enum class SplitRole { train, validation, test };

struct Split {
  SplitRole role = SplitRole::train;
  std::vector<int> folds;
  std::vector<Example> examples;
};

struct TrainConfig {
  Stage stage = Stage::detection;
  optim::OptimizerKind optimizer = optim::OptimizerKind::adam;
  optim::Hyperparameters hyper;
  int batch_size = 32;
  int max_epochs = 500;
  int patience = 25;
  std::uint64_t seed = 0;
  bool oversample = false;
  int threads = 1;

  static TrainConfig defaults_for(Stage stage);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Reads fields present in j over defaults_for(stage).
TrainConfig train_config_from(const nlohmann::json& j, Stage stage);

enum class StopRule {
  no_improvement,  // stop after `patience` epochs that do not beat the best score
  decrease,        // stop after `patience` epochs scoring below the best score
};

class EarlyStopping {
 public:
  EarlyStopping(StopRule rule, int patience);

  // Feeds one epoch's validation score; returns true when training should stop.
  bool update(double score);
  bool last_improved() const { return last_improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_score_; }
  int epochs_seen() const { return epochs_; }

 private:
  StopRule rule_;
  int patience_;
  int epochs_ = 0;
  int bad_ = 0;
  int best_epoch_ = 0;
  double best_score_ = 0.0;
  bool last_improved_ = false;
};

StopRule stop_rule_for(Stage stage);

/// Score that drives model selection: merged-speech F1 for detection, mean
/// direction F1 for localization, macro F1 for the flat model.
double selection_score(Stage stage, const F1Report& report);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  F1Report validation;
  double score = 0.0;
  bool improved = false;
};

struct TrainResult {
  nn::Model<float> model;
  optim::OptimState optimizer;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  int epochs_run = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with per-epoch validation and best-epoch checkpointing.
/// Throws std::invalid_argument for empty splits and ConfigError when split
/// provenance is inconsistent (overlapping folds, examples from foreign folds,
/// non-speech examples in localization splits).
TrainResult train_stage(nn::Model<float> model, const Split& train, const Split& validation, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

struct EvalResult {
  double loss = 0.0;
  F1Report report;
  std::vector<std::vector<float>> probabilities;
};

EvalResult evaluate_examples(const nn::Model<float>& model, std::span<const Example> examples,
                             std::span<const std::size_t> order, int threads = 1);

// One JSON line per (epoch, split).
std::string training_log_jsonl(Stage stage, std::span<const EpochRecord> log);
nlohmann::json f1_report_json(const F1Report& report, const std::vector<std::string>& names);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace seld

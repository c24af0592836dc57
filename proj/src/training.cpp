#include "seld/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "seld/errors.hpp"

namespace seld {

RotationSplit rotation_split(int rotation) {
  if (rotation < 0 || rotation >= kFoldCount) throw ConfigError("rotation must be in [0, 6)");
  RotationSplit s;
  s.test = rotation;
  s.validation = {(rotation + 1) % kFoldCount, (rotation + 2) % kFoldCount};
  s.train = {(rotation + 3) % kFoldCount, (rotation + 4) % kFoldCount, (rotation + 5) % kFoldCount};
  return s;
}

void FoldManifest::validate() const {
  if (rotation < 0 || rotation >= kFoldCount) throw ConfigError("manifest: rotation must be in [0, 6)");
  std::set<std::string> seen;
  for (int f = 0; f < kFoldCount; ++f) {
    for (const auto& id : folds[f]) {
      if (!seen.insert(id).second) throw ConfigError("manifest: recording '" + id + "' appears in more than one fold");
    }
  }
}

int FoldManifest::fold_of(const std::string& recording_id) const {
  for (int f = 0; f < kFoldCount; ++f) {
    if (std::find(folds[f].begin(), folds[f].end(), recording_id) != folds[f].end()) return f;
  }
  return -1;
}

std::size_t FoldManifest::recording_count() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.size();
  return n;
}

void to_json(nlohmann::json& j, const FoldManifest& m) {
  j = {{"version", 1}, {"rotation", m.rotation}, {"folds", m.folds}};
}

void from_json(const nlohmann::json& j, FoldManifest& m) {
  m = FoldManifest{};
  const auto& folds = j.at("folds");
  if (!folds.is_array() || folds.size() != kFoldCount) throw ConfigError("manifest: expected exactly 6 folds");
  for (int f = 0; f < kFoldCount; ++f) m.folds[f] = folds[f].get<std::vector<std::string>>();
  m.rotation = j.value("rotation", 0);
  m.validate();
}

FoldManifest assign_folds(std::vector<RecordingInfo> recordings) {
  std::stable_sort(recordings.begin(), recordings.end(), [](const RecordingInfo& a, const RecordingInfo& b) {
    return a.scene_kind != b.scene_kind ? a.scene_kind < b.scene_kind : a.id < b.id;
  });
  FoldManifest m;
  for (std::size_t i = 0; i < recordings.size(); ++i) m.folds[i % kFoldCount].push_back(recordings[i].id);
  m.validate();
  return m;
}

FoldStats compute_fold_stats(std::span<const LabeledBlockRef> blocks) {
  FoldStats stats{};
  for (const auto& b : blocks) {
    if (b.fold < 0 || b.fold >= kFoldCount) throw ConfigError("fold stats: fold index out of range");
    auto& row = stats[b.fold];
    const auto& l = b.labels;
    ++row.total;
    if (l.something_else) ++row.something_else;
    if (l.speech()) ++row.speech_any;
    if (!l.any()) ++row.no_labels;
    if (l.speech_front && !l.speech_back) ++row.front_only;
    if (l.speech_back && !l.speech_front) ++row.back_only;
    if (l.speech_front && l.speech_back) ++row.front_and_back;
  }
  return stats;
}

std::vector<std::size_t> oversample_balance(std::span<const int> class_ids, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < class_ids.size(); ++i) members[class_ids[i]].push_back(i);
  std::size_t largest = 0;
  for (const auto& [cls, idx] : members) largest = std::max(largest, idx.size());

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(largest * members.size());
  for (const auto& [cls, idx] : members) {
    out.insert(out.end(), idx.begin(), idx.end());
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    for (std::size_t k = idx.size(); k < largest; ++k) out.push_back(idx[pick(rng)]);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

LabelScore score_counts(int tp, int fp, int fn, int tn) {
  LabelScore s{tp, fp, fn, tn};
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

F1Report f1_score(std::span<const std::vector<bool>> predictions, std::span<const std::vector<bool>> targets) {
  if (predictions.size() != targets.size()) throw ShapeError("f1_score: prediction and target counts differ");
  F1Report r;
  if (targets.empty()) return r;
  const std::size_t labels = targets.front().size();
  std::vector<std::array<int, 4>> counts(labels, {0, 0, 0, 0});
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (predictions[b].size() != labels || targets[b].size() != labels) throw ShapeError("f1_score: label count mismatch");
    for (std::size_t l = 0; l < labels; ++l) {
      const bool p = predictions[b][l];
      const bool t = targets[b][l];
      ++counts[l][p ? (t ? 0 : 1) : (t ? 2 : 3)];
    }
  }
  for (const auto& c : counts) r.labels.push_back(score_counts(c[0], c[1], c[2], c[3]));
  for (const auto& s : r.labels) {
    r.macro_precision += s.precision / static_cast<double>(labels);
    r.macro_recall += s.recall / static_cast<double>(labels);
    r.macro_f1 += s.f1 / static_cast<double>(labels);
  }
  return r;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::detection:
      return "stage1";
    case Stage::localization:
      return "stage2";
    case Stage::flat:
      return "flat";
  }
  return "?";
}

Stage stage_from(const std::string& name) {
  if (name == "1" || name == "stage1" || name == "detection") return Stage::detection;
  if (name == "2" || name == "stage2" || name == "localization") return Stage::localization;
  if (name == "flat") return Stage::flat;
  throw ConfigError("unknown stage '" + name + "' (expected 1, 2 or flat)");
}

std::vector<std::string> label_names(Stage stage) {
  switch (stage) {
    case Stage::detection:
      return {"speech", "something_else"};
    case Stage::localization:
      return {"speech_front", "speech_back"};
    case Stage::flat:
      return {"speech_front", "speech_back", "something_else"};
  }
  return {};
}

TrainConfig TrainConfig::defaults_for(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == Stage::localization) {
    c.patience = 1;
    c.oversample = true;
  }
  return c;
}

void TrainConfig::validate() const {
  std::ostringstream errs;
  if (batch_size < 1) errs << " batch_size must be >= 1;";
  if (max_epochs < 1) errs << " max_epochs must be >= 1;";
  if (patience < 1) errs << " patience must be >= 1;";
  if (threads < 1) errs << " threads must be >= 1;";
  if (!(hyper.learning_rate > 0)) errs << " learning_rate must be positive;";
  if (!(hyper.beta1 >= 0 && hyper.beta1 < 1)) errs << " beta1 must be in [0, 1);";
  if (!(hyper.beta2 >= 0 && hyper.beta2 < 1)) errs << " beta2 must be in [0, 1);";
  if (!(hyper.epsilon >= 0)) errs << " epsilon must be >= 0;";
  if (!(hyper.clip_norm > 0)) errs << " clip_norm must be positive;";
  if (!errs.str().empty()) throw ConfigError("train config:" + errs.str());
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage", to_string(c.stage)},      {"optimizer", optim::to_string(c.optimizer)},
       {"hyper", c.hyper},                 {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},       {"patience", c.patience},
       {"seed", c.seed},                   {"oversample", c.oversample}};
}

TrainConfig train_config_from(const nlohmann::json& j, Stage stage) {
  TrainConfig c = TrainConfig::defaults_for(stage);
  if (j.contains("optimizer")) c.optimizer = optim::optimizer_from(j.at("optimizer").get<std::string>());
  if (j.contains("hyper")) c.hyper = j.at("hyper").get<optim::Hyperparameters>();
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.oversample = j.value("oversample", c.oversample);
  return c;
}

EarlyStopping::EarlyStopping(StopRule rule, int patience) : rule_(rule), patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::update(double score) {
  ++epochs_;
  last_improved_ = epochs_ == 1 || score > best_score_;
  if (last_improved_) {
    best_score_ = score;
    best_epoch_ = epochs_;
    bad_ = 0;
    return false;
  }
  if (rule_ == StopRule::no_improvement || score < best_score_) ++bad_;
  return bad_ >= patience_;
}

StopRule stop_rule_for(Stage stage) {
  return stage == Stage::localization ? StopRule::decrease : StopRule::no_improvement;
}

double selection_score(Stage stage, const F1Report& report) {
  switch (stage) {
    case Stage::detection:
      return report.labels.at(0).f1;
    case Stage::localization:
      return 0.5 * (report.labels.at(0).f1 + report.labels.at(1).f1);
    case Stage::flat:
      return report.macro_f1;
  }
  return 0.0;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

std::vector<bool> to_bools(std::span<const float> v, double threshold) {
  std::vector<bool> out;
  out.reserve(v.size());
  for (float x : v) out.push_back(x >= threshold);
  return out;
}

int class_id(const std::vector<float>& targets) {
  int code = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= 0.5f) code |= 1 << i;
  }
  return code;
}

void check_split(const Split& split, const char* name, Stage stage, std::size_t input_size, std::size_t labels) {
  if (split.examples.empty()) throw std::invalid_argument(std::string("train_stage: empty ") + name + " split");
  const std::set<int> folds(split.folds.begin(), split.folds.end());
  for (const auto& ex : split.examples) {
    if (!folds.contains(ex.fold)) {
      throw ConfigError(std::string("train_stage: ") + name + " example from fold " + std::to_string(ex.fold) +
                        " outside its split");
    }
    if (ex.input.size() != input_size) throw ShapeError(std::string(name) + " example does not match model input", 0);
    if (ex.targets.size() != labels) throw ShapeError(std::string(name) + " example has wrong label count");
    if (stage == Stage::localization && class_id(ex.targets) == 0) {
      throw ConfigError(std::string("train_stage: ") + name + " localization split contains a block without speech");
    }
  }
}

}  // namespace

EvalResult evaluate_examples(const nn::Model<float>& model, std::span<const Example> examples,
                             std::span<const std::size_t> order, int threads) {
  EvalResult r;
  const std::size_t n = order.size();
  r.probabilities.resize(n);
  std::vector<double> losses(n, 0.0);
  parallel_for(n, threads, [&](std::size_t k) {
    const auto& ex = examples[order[k]];
    r.probabilities[k] = model.predict(ex.input);
    losses[k] = nn::bce_loss(std::span<const float>(r.probabilities[k]), ex.targets).loss;
  });
  std::vector<std::vector<bool>> pred, truth;
  pred.reserve(n);
  truth.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    r.loss += losses[k] / static_cast<double>(n);
    pred.push_back(to_bools(r.probabilities[k], nn::kDecisionThreshold));
    truth.push_back(to_bools(examples[order[k]].targets, 0.5));
  }
  r.report = f1_score(pred, truth);
  return r;
}

TrainResult train_stage(nn::Model<float> model, const Split& train, const Split& validation, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t labels = model.output_size();
  if (labels != label_names(cfg.stage).size()) throw ShapeError("model output count does not match the stage labels");
  check_split(train, "training", cfg.stage, model.input_size(), labels);
  check_split(validation, "validation", cfg.stage, model.input_size(), labels);
  for (int f : train.folds) {
    if (std::find(validation.folds.begin(), validation.folds.end(), f) != validation.folds.end()) {
      throw ConfigError("train_stage: fold " + std::to_string(f) + " is in both training and validation splits");
    }
  }

  auto pool_of = [&](const Split& split, std::uint64_t salt) {
    if (!cfg.oversample) {
      std::vector<std::size_t> all(split.examples.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      return all;
    }
    std::vector<int> ids;
    ids.reserve(split.examples.size());
    for (const auto& ex : split.examples) ids.push_back(class_id(ex.targets));
    return oversample_balance(ids, cfg.seed ^ salt);
  };
  auto train_pool = pool_of(train, 0x7A41u);
  const auto val_pool = pool_of(validation, 0x5A11u);

  TrainResult result{model, optim::OptimState::fresh(cfg.optimizer, model.parameter_count(), cfg.hyper), {}, 0, 0};
  auto state = result.optimizer;
  EarlyStopping stopper(stop_rule_for(cfg.stage), cfg.patience);
  std::mt19937_64 rng(cfg.seed);
  const std::size_t P = model.parameter_count();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::vector<float>> example_grads(batch, std::vector<float>(P));
  std::vector<double> example_loss(batch);
  std::vector<float> grad(P);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_pool.begin(), train_pool.end(), rng);
    double train_loss = 0.0;
    for (std::size_t start = 0; start < train_pool.size(); start += batch) {
      const std::size_t count = std::min(batch, train_pool.size() - start);
      parallel_for(count, cfg.threads, [&](std::size_t k) {
        const auto& ex = train.examples[train_pool[start + k]];
        auto& g = example_grads[k];
        std::fill(g.begin(), g.end(), 0.0f);
        const auto trace = model.forward(ex.input);
        const auto loss = nn::bce_loss(trace.output(), ex.targets);
        example_loss[k] = loss.loss;
        std::vector<float> out_grad(loss.grad.begin(), loss.grad.end());
        model.backward(trace, out_grad, g);
      });
      // Fixed reduction order keeps results independent of the thread count.
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t k = 0; k < count; ++k) {
        for (std::size_t i = 0; i < P; ++i) grad[i] += example_grads[k][i];
        train_loss += example_loss[k];
      }
      const float inv = 1.0f / static_cast<float>(count);
      for (auto& g : grad) g *= inv;
      optim::step<float>(model.parameters(), grad, state);
    }

    const auto eval = evaluate_examples(model, validation.examples, val_pool, cfg.threads);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss / static_cast<double>(train_pool.size());
    rec.validation_loss = eval.loss;
    rec.validation = eval.report;
    rec.score = selection_score(cfg.stage, eval.report);
    const bool stop = stopper.update(rec.score);
    rec.improved = stopper.last_improved();
    if (rec.improved) {
      result.model = model;
      result.optimizer = state;
      result.best_epoch = epoch;
    }
    result.log.push_back(rec);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(rec);
    if (stop) break;
  }
  return result;
}

nlohmann::json f1_report_json(const F1Report& report, const std::vector<std::string>& names) {
  auto labels = nlohmann::json::array();
  for (std::size_t i = 0; i < report.labels.size(); ++i) {
    const auto& s = report.labels[i];
    labels.push_back({{"label", i < names.size() ? names[i] : std::to_string(i)},
                      {"precision", s.precision},
                      {"recall", s.recall},
                      {"f1", s.f1},
                      {"tp", s.tp},
                      {"fp", s.fp},
                      {"fn", s.fn},
                      {"tn", s.tn}});
  }
  return {{"labels", labels},
          {"macro_precision", report.macro_precision},
          {"macro_recall", report.macro_recall},
          {"macro_f1", report.macro_f1}};
}

std::string training_log_jsonl(Stage stage, std::span<const EpochRecord> log) {
  std::ostringstream out;
  const auto names = label_names(stage);
  for (const auto& r : log) {
    out << nlohmann::json{{"epoch", r.epoch}, {"split", "train"}, {"loss", r.train_loss}}.dump() << '\n';
    auto val = f1_report_json(r.validation, names);
    val["epoch"] = r.epoch;
    val["split"] = "validation";
    val["loss"] = r.validation_loss;
    val["score"] = r.score;
    val["improved"] = r.improved;
    out << val.dump() << '\n';
  }
  return out.str();
}

}  // namespace seld

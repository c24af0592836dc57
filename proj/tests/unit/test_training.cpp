#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <random>
#include <set>

#include "doctest.h"
#include "seld/errors.hpp"
#include "seld/training.hpp"

using namespace seld;

namespace {

// Reference per-fold label counts: total, something else, speech
// (front or back), no labels, front only, back only, front and back.
constexpr std::array<std::array<int, 7>, 6> kFoldTable{{
    {871, 376, 376, 213, 187, 177, 12},
    {748, 327, 310, 218, 61, 243, 6},
    {768, 187, 383, 305, 98, 271, 14},
    {892, 292, 407, 327, 173, 204, 30},
    {719, 376, 201, 307, 24, 176, 1},
    {1025, 0, 967, 58, 291, 576, 100},
}};

// Blocks realizing one table row; "something else" blocks overlap speech
// blocks exactly as much as the row's counts require.
std::vector<LabeledBlockRef> blocks_for_row(int fold, const std::array<int, 7>& row) {
  const auto [total, other, speech, none, front, back, both] = row;
  const int overlap = other + speech + none - total;
  REQUIRE(overlap >= 0);
  REQUIRE(overlap <= speech);
  REQUIRE(front + back + both == speech);
  std::vector<LabeledBlockRef> out;
  auto add = [&](int n, LabelSet l) {
    for (int i = 0; i < n; ++i) out.push_back({fold, l});
  };
  add(none, {});
  add(other - overlap, {false, false, true});
  std::vector<LabelSet> speech_blocks;
  for (int i = 0; i < front; ++i) speech_blocks.push_back({true, false, false});
  for (int i = 0; i < back; ++i) speech_blocks.push_back({false, true, false});
  for (int i = 0; i < both; ++i) speech_blocks.push_back({true, true, false});
  for (int i = 0; i < overlap; ++i) speech_blocks[static_cast<std::size_t>(i) * speech_blocks.size() / overlap].something_else = true;
  for (const auto& l : speech_blocks) out.push_back({fold, l});
  return out;
}

Example example(int fold, std::mt19937_64& rng, Stage stage = Stage::detection) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  Example ex;
  ex.fold = fold;
  ex.input.resize(8 * 6);
  for (auto& v : ex.input) v = d(rng);
  const bool a = rng() % 2 == 0;
  const bool b = rng() % 3 == 0;
  // Label a lives in the first band, label b in the last one.
  for (int t = 0; t < 8; ++t) {
    ex.input[t * 6] += a ? 1.5f : -1.5f;
    ex.input[t * 6 + 5] += b ? 1.5f : -1.5f;
  }
  if (stage == Stage::localization) {
    ex.targets = {a ? 1.0f : 0.0f, a ? 0.0f : 1.0f};
  } else {
    ex.targets = {a ? 1.0f : 0.0f, b ? 1.0f : 0.0f};
  }
  return ex;
}

std::pair<Split, Split> toy_splits(Stage stage = Stage::detection, int per_fold = 24) {
  std::mt19937_64 rng(3);
  Split train{SplitRole::train, {3, 4, 5}, {}};
  Split val{SplitRole::validation, {1, 2}, {}};
  for (int f : train.folds) {
    for (int i = 0; i < per_fold; ++i) train.examples.push_back(example(f, rng, stage));
  }
  for (int f : val.folds) {
    for (int i = 0; i < per_fold; ++i) val.examples.push_back(example(f, rng, stage));
  }
  return {train, val};
}

TrainConfig toy_config(Stage stage = Stage::detection) {
  auto cfg = TrainConfig::defaults_for(stage);
  cfg.hyper.learning_rate = 0.01;
  cfg.batch_size = 8;
  cfg.max_epochs = 6;
  cfg.patience = 3;
  cfg.seed = 11;
  return cfg;
}

nn::Model<float> toy_model(std::uint64_t seed = 1) { return nn::Model<float>(nn::ModelSpec::crnn(8, 6, {2}, {3}, 2, seed)); }

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("rotations partition the folds") {
    for (int r = 0; r < kFoldCount; ++r) {
      const auto s = rotation_split(r);
      CHECK(s.test == r);
      CHECK(s.validation == std::array<int, 2>{(r + 1) % 6, (r + 2) % 6});
      CHECK(s.train == std::array<int, 3>{(r + 3) % 6, (r + 4) % 6, (r + 5) % 6});
      std::set<int> all{s.test};
      all.insert(s.validation.begin(), s.validation.end());
      all.insert(s.train.begin(), s.train.end());
      CHECK(all.size() == 6);
    }
    CHECK_THROWS_AS(rotation_split(6), ConfigError);
    CHECK_THROWS_AS(rotation_split(-1), ConfigError);
  }

  TEST_CASE("manifest validation and lookup") {
    FoldManifest m;
    m.folds[0] = {"a", "b"};
    m.folds[3] = {"c"};
    m.validate();
    CHECK(m.fold_of("c") == 3);
    CHECK(m.fold_of("z") == -1);
    CHECK(m.recording_count() == 3);
    const auto back = nlohmann::json(m).get<FoldManifest>();
    CHECK(back.folds == m.folds);
    m.folds[5] = {"a"};
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m.folds[5].clear();
    m.rotation = 7;
    CHECK_THROWS_AS(m.validate(), ConfigError);
  }

  TEST_CASE("assign_folds deals whole recordings evenly") {
    std::vector<RecordingInfo> recs;
    for (int i = 0; i < 12; ++i) recs.push_back({"rec" + std::to_string(i), i % 2 ? "outdoor" : "indoor"});
    const auto m = assign_folds(recs);
    for (const auto& fold : m.folds) {
      CHECK(fold.size() == 2);
      int outdoor = 0;
      for (const auto& id : fold) outdoor += (std::stoi(id.substr(3)) % 2);
      CHECK(outdoor == 1);
    }
    CHECK(m.recording_count() == 12);
    std::reverse(recs.begin(), recs.end());
    CHECK(assign_folds(recs).folds == m.folds);
  }

  TEST_CASE("fold statistics reproduce the reference fold table") {
    std::vector<LabeledBlockRef> blocks;
    for (int f = 0; f < 6; ++f) {
      const auto part = blocks_for_row(f, kFoldTable[f]);
      blocks.insert(blocks.end(), part.begin(), part.end());
    }
    std::shuffle(blocks.begin(), blocks.end(), std::mt19937_64(5));
    const auto stats = compute_fold_stats(blocks);
    for (int f = 0; f < 6; ++f) {
      const auto& r = kFoldTable[f];
      CHECK(stats[f] == FoldStatsRow{r[0], r[1], r[2], r[3], r[4], r[5], r[6]});
    }
    CHECK(stats[5].total == 1025);
    CHECK(stats[5].speech_any == 967);
    CHECK(stats[5].front_and_back == 100);
    CHECK_THROWS_AS(compute_fold_stats(std::vector<LabeledBlockRef>{{6, {}}}), ConfigError);
  }

  TEST_CASE("oversampling balances every class and keeps every block") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng() % 200;
      const int classes = 1 + static_cast<int>(rng() % 8);
      std::vector<int> ids(n);
      for (auto& c : ids) c = static_cast<int>(rng() % static_cast<unsigned>(classes)) * (rng() % 4 == 0 ? 1 : 2);
      const auto idx = oversample_balance(ids, trial);

      std::map<int, std::size_t> before, after;
      for (int c : ids) ++before[c];
      for (auto i : idx) ++after[ids.at(i)];
      std::size_t largest = 0;
      for (const auto& [c, k] : before) largest = std::max(largest, k);
      CHECK(after.size() == before.size());
      for (const auto& [c, k] : after) CHECK(k == largest);
      CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == n);
      CHECK(oversample_balance(ids, trial) == idx);
    }
    CHECK(oversample_balance(std::vector<int>{}, 1).empty());
  }

  TEST_CASE("f1 examples") {
    const auto s = score_counts(2, 1, 1, 6);
    CHECK(s.precision == doctest::Approx(2.0 / 3));
    CHECK(s.recall == doctest::Approx(2.0 / 3));
    CHECK(s.f1 == doctest::Approx(2.0 / 3));
    CHECK(score_counts(0, 0, 0, 9).f1 == 0.0);
    CHECK(score_counts(4, 0, 0, 0).f1 == 1.0);

    const std::vector<std::vector<bool>> pred{{true, false}, {true, true}, {false, false}, {false, true}};
    const std::vector<std::vector<bool>> truth{{true, false}, {false, true}, {true, false}, {false, true}};
    const auto r = f1_score(pred, truth);
    CHECK(r.labels[0].tp == 1);
    CHECK(r.labels[0].fp == 1);
    CHECK(r.labels[0].fn == 1);
    CHECK(r.labels[0].tn == 1);
    CHECK(r.labels[1].f1 == 1.0);
    CHECK(r.macro_f1 == doctest::Approx((0.5 + 1.0) / 2));
    CHECK_THROWS_AS(f1_score(pred, std::span(truth).first(2)), ShapeError);
  }

  TEST_CASE("early stopping rules") {
    EarlyStopping plain(StopRule::no_improvement, 2);
    CHECK_FALSE(plain.update(0.5));
    CHECK_FALSE(plain.update(0.6));
    CHECK_FALSE(plain.update(0.6));
    CHECK(plain.update(0.55));
    CHECK(plain.best_epoch() == 2);
    CHECK(plain.best_score() == 0.6);

    EarlyStopping drop(StopRule::decrease, 2);
    for (double s : {0.5, 0.6, 0.6, 0.6}) CHECK_FALSE(drop.update(s));
    CHECK_FALSE(drop.update(0.55));
    CHECK_FALSE(drop.update(0.6));
    CHECK(drop.update(0.5));
    CHECK(drop.best_epoch() == 2);
    CHECK(drop.epochs_seen() == 7);

    EarlyStopping first(StopRule::decrease, 1);
    CHECK_FALSE(first.update(0.0));
    CHECK(first.last_improved());
    CHECK(first.update(-1.0));

    CHECK(stop_rule_for(Stage::localization) == StopRule::decrease);
    CHECK(stop_rule_for(Stage::detection) == StopRule::no_improvement);
    CHECK(stop_rule_for(Stage::flat) == StopRule::no_improvement);
    CHECK_THROWS_AS(EarlyStopping(StopRule::decrease, 0), ConfigError);
  }

  TEST_CASE("stage defaults") {
    CHECK(TrainConfig::defaults_for(Stage::localization).oversample);
    CHECK_FALSE(TrainConfig::defaults_for(Stage::detection).oversample);
    CHECK(label_names(Stage::flat) == std::vector<std::string>{"speech_front", "speech_back", "something_else"});
    CHECK(stage_from("2") == Stage::localization);
    CHECK_THROWS_AS(stage_from("3"), ConfigError);
    const auto cfg = train_config_from(nlohmann::json{{"batch_size", 4}, {"optimizer", "adamax"}}, Stage::localization);
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.optimizer == optim::OptimizerKind::adamax);
    CHECK(cfg.oversample);
  }

  TEST_CASE("training keeps the best validation epoch") {
    auto [train, val] = toy_splits();
    std::vector<EpochRecord> seen;
    const auto result = train_stage(toy_model(), train, val, toy_config(), [&](const EpochRecord& r) { seen.push_back(r); });
    REQUIRE_FALSE(result.log.empty());
    CHECK(seen.size() == result.log.size());
    CHECK(result.epochs_run == static_cast<int>(result.log.size()));
    double best = -1;
    int best_epoch = 0;
    for (const auto& r : result.log) {
      if (r.score > best) {
        best = r.score;
        best_epoch = r.epoch;
      }
    }
    CHECK(result.best_epoch == best_epoch);
    // The returned model reproduces the best epoch's validation score.
    std::vector<std::size_t> order(val.examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto eval = evaluate_examples(result.model, val.examples, order);
    CHECK(selection_score(Stage::detection, eval.report) == doctest::Approx(best));
    CHECK(result.log.back().train_loss < result.log.front().train_loss * 1.5);
  }

  TEST_CASE("training is deterministic and independent of the thread count") {
    auto [train, val] = toy_splits();
    auto cfg = toy_config();
    const auto a = train_stage(toy_model(), train, val, cfg);
    const auto b = train_stage(toy_model(), train, val, cfg);
    cfg.threads = 3;
    const auto c = train_stage(toy_model(), train, val, cfg);
    auto same = [](const TrainResult& x, const TrainResult& y) {
      return std::equal(x.model.parameters().begin(), x.model.parameters().end(), y.model.parameters().begin()) &&
             x.optimizer == y.optimizer && x.best_epoch == y.best_epoch;
    };
    CHECK(same(a, b));
    CHECK(same(a, c));
    CHECK(training_log_jsonl(Stage::detection, a.log) == training_log_jsonl(Stage::detection, c.log));
  }

  TEST_CASE("localization training with oversampling") {
    auto [train, val] = toy_splits(Stage::localization);
    auto cfg = toy_config(Stage::localization);
    cfg.max_epochs = 3;
    const auto r = train_stage(toy_model(), train, val, cfg);
    CHECK(r.epochs_run >= 1);
  }

  TEST_CASE("split provenance errors") {
    auto [train, val] = toy_splits();
    const auto cfg = toy_config();
    auto overlap = val;
    overlap.folds = {1, 3};
    CHECK_THROWS_AS(train_stage(toy_model(), train, overlap, cfg), ConfigError);
    auto foreign = train;
    foreign.examples[0].fold = 0;
    CHECK_THROWS_AS(train_stage(toy_model(), foreign, val, cfg), ConfigError);
    CHECK_THROWS_AS(train_stage(toy_model(), Split{SplitRole::train, {3}, {}}, val, cfg), std::invalid_argument);

    auto [ltrain, lval] = toy_splits(Stage::localization);
    ltrain.examples[2].targets = {0.0f, 0.0f};
    CHECK_THROWS_AS(train_stage(toy_model(), ltrain, lval, toy_config(Stage::localization)), ConfigError);

    auto bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_stage(toy_model(), train, val, bad), ConfigError);
    nn::Model<float> three(nn::ModelSpec::crnn(8, 6, {2}, {3}, 3, 1));
    CHECK_THROWS_AS(train_stage(three, train, val, cfg), ShapeError);
  }

  TEST_CASE("jsonl log has one line per epoch and split") {
    auto [train, val] = toy_splits();
    auto cfg = toy_config();
    cfg.max_epochs = 2;
    const auto r = train_stage(toy_model(), train, val, cfg);
    const auto text = training_log_jsonl(Stage::detection, r.log);
    std::size_t lines = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      CHECK_NOTHROW(static_cast<void>(nlohmann::json::parse(line)));
      ++lines;
    }
    CHECK(lines == 2 * r.log.size());
  }

  TEST_CASE("parallel_for covers every index and propagates errors") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                      if (i == 7) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
  }
}

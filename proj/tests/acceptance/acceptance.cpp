// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "../unit/oracles.hpp"
#include "json.hpp"
#include "seld/experiment.hpp"
#include "seld/neural.hpp"
#include "seld/optim.hpp"
#include "seld/scene_synth.hpp"
#include "seld/spatial_features.hpp"
#include "seld/training.hpp"

using namespace seld;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<float> to_float(const std::vector<double>& x) { return {x.begin(), x.end()}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& name) {
    path = fs::temp_directory_path() / ("seld_accept_" + name + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

LocFrameConfig short_frames() {
  LocFrameConfig cfg;
  cfg.frame_ms = 8.0;
  cfg.fft_size = 384;
  return cfg;
}

Outcome feasible_lags() {
  const double bound = 0.007 / 343.0 * 48000.0;
  std::set<int> feasible;
  for (int l = -10; l <= 10; ++l) {
    if (std::abs(l) <= std::ceil(bound)) feasible.insert(l);
  }
  if (feasible != std::set<int>{-1, 0, 1}) return {false, "feasible set is not {-1, 0, 1}"};
  LocFrameConfig defaults;
  if (defaults.max_lag_samples() != 1) return {false, "max_lag_samples = " + std::to_string(defaults.max_lag_samples())};

  auto cfg = short_frames();
  cfg.interp_factor = 1;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  std::set<int> seen;
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = oracle::bandlimited_noise(384, 900 + trial);
    const auto y = fractional_delay(x, u(rng));
    const auto g = gcc_interpolated(to_float(x), to_float(y), cfg);
    if (g.values.size() != 3) return {false, "search window has " + std::to_string(g.values.size()) + " lags"};
    seen.insert(g.peak_lag());
  }
  for (int l : seen) {
    if (!feasible.contains(l)) return {false, "peak search returned lag " + std::to_string(l)};
  }
  return {true, "200 frames, peaks in {-1, 0, 1}"};
}

Outcome gcc_agreement() {
  const auto cfg = short_frames();
  std::mt19937_64 rng(2025);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  int agree = 0;
  constexpr int kTrials = 200;
  for (int trial = 0; trial < kTrials; ++trial) {
    const auto x = oracle::bandlimited_noise(384, 70000 + trial);
    const auto y = fractional_delay(x, u(rng));
    const int got = gcc_interpolated(to_float(x), to_float(y), cfg).peak_lag();
    const int want = oracle::xcorr_argmax(oracle::oversample(x, 5), oracle::oversample(y, 5), 5);
    if (std::abs(got - want) <= 1) ++agree;
  }
  return {agree >= 190, std::to_string(agree) + "/" + std::to_string(kTrials) + " within one interpolated lag"};
}

Outcome magnitude_difference_identities() {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d(0.0f, 0.1f);
  AudioBlock block;
  block.sample_rate = 48000;
  block.channels.assign(4, std::vector<float>(48000));
  for (auto& ch : block.channels) {
    for (auto& v : ch) v = d(rng);
  }
  for (int i : {0, 1}) block.channels[i] = block.channels[i + 2];
  const auto same = mel_magnitude_difference(block);
  for (float v : same.data) {
    if (v != 0.0f) return {false, "identical channels gave " + std::to_string(v)};
  }
  for (int i : {0, 1}) {
    for (std::size_t s = 0; s < 48000; ++s) {
      block.channels[i][s] = static_cast<float>(std::exp(1.0) * block.channels[i + 2][s]);
    }
  }
  const auto scaled = mel_magnitude_difference(block);
  double worst = 0.0;
  for (float v : scaled.data) worst = std::max(worst, std::abs(static_cast<double>(v) - 1.0));
  std::ostringstream s;
  s << "identical -> 0 exactly, scaled by e -> max |D - 1| = " << worst;
  return {worst < 1e-6 && same.rows == 22 && same.cols == 40, s.str()};
}

Outcome gradient_checks() {
  const auto cases = nn::gradient_check_suite(17, 1e-4);
  bool ok = !cases.empty();
  double worst = 0.0;
  std::string worst_name;
  bool composed = false;
  for (const auto& c : cases) {
    ok = ok && c.report.checked > 0 && c.report.max_relative_error < 1e-4;
    composed = composed || c.name.find("crnn") != std::string::npos;
    if (c.report.max_relative_error >= worst) {
      worst = c.report.max_relative_error;
      worst_name = c.name;
    }
  }
  std::ostringstream s;
  s << cases.size() << " cases, worst " << worst_name << " rel err " << worst;
  return {ok && composed, s.str()};
}

template <class Step>
Outcome optimizer_checks(optim::OptimizerKind kind, Step step) {
  double worst = 0.0;
  for (double mag = 1e-3; mag <= 1e3; mag *= 1.3) {
    for (double g : {mag, -mag}) {
      const optim::Hyperparameters h;
      auto state = optim::OptimState::fresh(kind, 1, h);
      std::vector<double> p{0.25};
      step(std::span<double>(p), std::span<const double>(std::vector<double>{g}), state);
      const double want = -h.learning_rate * (g > 0 ? 1.0 : -1.0);
      worst = std::max(worst, std::abs((p[0] - 0.25) - want) / h.learning_rate);
    }
  }
  optim::Hyperparameters h;
  h.learning_rate = 0.05;
  auto state = optim::OptimState::fresh(kind, 1, h);
  std::vector<double> theta{1.0};
  for (int t = 0; t < 200; ++t) {
    const std::vector<double> grad{2.0 * theta[0]};
    step(std::span<double>(theta), std::span<const double>(grad), state);
  }
  std::ostringstream s;
  s << optim::to_string(kind) << " first-step rel err " << worst << ", |theta| after 200 steps " << std::abs(theta[0]);
  return {worst <= 1e-6 && std::abs(theta[0]) < 1e-2, s.str()};
}

Outcome optimizers() {
  const auto a = optimizer_checks(optim::OptimizerKind::adam, optim::adam_step<double>);
  const auto b = optimizer_checks(optim::OptimizerKind::adamax, optim::adamax_step<double>);
  return {a.pass && b.pass, a.detail + "; " + b.detail};
}

Outcome oversampling() {
  std::mt19937_64 rng(6);
  std::size_t trials = 0;
  for (; trials < 100; ++trials) {
    const std::size_t n = 1 + rng() % 500;
    std::vector<int> ids(n);
    // Skewed label codes, like the stage-2 direction classes.
    for (auto& c : ids) c = rng() % 10 < 7 ? 2 : static_cast<int>(1 + rng() % 3);
    const auto idx = oversample_balance(ids, trials);
    std::map<int, std::size_t> before, after;
    for (int c : ids) ++before[c];
    for (auto i : idx) ++after[ids.at(i)];
    std::size_t largest = 0;
    for (const auto& [c, k] : before) largest = std::max(largest, k);
    if (after.size() != before.size()) return {false, "a class vanished"};
    for (const auto& [c, k] : after) {
      if (k != largest) return {false, "class " + std::to_string(c) + " has " + std::to_string(k)};
    }
    if (std::set<std::size_t>(idx.begin(), idx.end()).size() != n) return {false, "distinct-block set changed"};
  }
  return {true, std::to_string(trials) + " random label sets balanced to the largest class"};
}

Outcome fold_six() {
  // Fold-6 counts: 58 unlabeled, 291 front only, 576 back
  // only, 100 front and back; no "something else" blocks.
  std::vector<LabeledBlockRef> blocks;
  auto add = [&](int n, LabelSet l) {
    for (int i = 0; i < n; ++i) blocks.push_back({5, l});
  };
  add(58, {});
  add(291, {true, false, false});
  add(576, {false, true, false});
  add(100, {true, true, false});
  std::shuffle(blocks.begin(), blocks.end(), std::mt19937_64(1));
  int total = 0, speech = 0, both = 0;
  for (const auto& b : blocks) {
    ++total;
    speech += b.labels.speech_front || b.labels.speech_back;
    both += b.labels.speech_front && b.labels.speech_back;
  }
  const auto row = compute_fold_stats(blocks)[5];
  std::ostringstream s;
  s << "total " << row.total << ", front or back " << row.speech_any << ", front and back " << row.front_and_back;
  const bool ok = total == 1025 && speech == 967 && both == 100 && row.total == 1025 && row.speech_any == 967 &&
                  row.front_and_back == 100 && row.front_only == 291 && row.back_only == 576 && row.no_labels == 58;
  return {ok, s.str()};
}

Outcome benchmark() {
  const auto start = std::chrono::steady_clock::now();
  Scratch root("bench");
  auto cfg = load_experiment_config(fs::path(SELD_SOURCE_DIR) / "configs" / "benchmark.json");
  cfg.data_root = root.path.string();
  cfg.threads = 1;
  synthesize_corpus(cfg, {}, root.path);
  const auto corpus = load_corpus(cfg);
  const FeatureExtractor extractor(cfg.features);
  const auto blocks = corpus_features(cfg, corpus, extractor);
  std::set<int> folds;
  for (const auto& b : blocks) folds.insert(b.fold);

  const auto stage1 = run_stage(cfg, Stage::detection, blocks, extractor);
  const auto stage2 = run_stage(cfg, Stage::localization, blocks, extractor);
  const auto flat = run_stage(cfg, Stage::flat, blocks, extractor);
  const auto test = blocks_in_folds(blocks, {rotation_split(cfg.rotation).test});
  const auto hier = evaluate_hierarchical(hierarchical_from(stage1.checkpoint, stage2.checkpoint, extractor), test,
                                          extractor, cfg.threads);
  const auto base = evaluate_flat(flat_from(flat.checkpoint, extractor), test, extractor, cfg.threads);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

  // Gate invariant, checked on the predictions themselves.
  std::size_t gated = 0;
  for (const auto& p : hier.predictions) {
    const bool detected = p.p_speech >= 0.5f;
    const bool ok = detected == p.p_front.has_value() && detected == p.p_back.has_value() &&
                    (detected || !p.labels.speech());
    gated += ok;
  }
  std::ostringstream s;
  s.precision(4);
  s << blocks.size() << " blocks in " << folds.size() << " folds, " << minutes << " min, hierarchical macro F1 "
    << hier.report.macro_f1 << " (flat " << base.report.macro_f1 << "), gate invariant " << gated << "/"
    << hier.predictions.size();
  const bool ok = blocks.size() >= 600 && folds.size() == 6 && minutes < 15.0 && hier.report.macro_f1 >= 0.90 &&
                  gated == hier.predictions.size() && hier.gate_violations == 0 && !test.empty();
  return {ok, s.str()};
}

int kit(const std::string& args) {
  const std::string cmd = "\"" SELD_KIT_BINARY "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  Scratch root("repro");
  ExperimentConfig c;
  for (Stage s : {Stage::detection, Stage::localization, Stage::flat}) {
    c.model_for(s) = {{4}, {4}};
    c.train_config(s).max_epochs = 3;
    c.train_config(s).batch_size = 8;
  }
  c.synth.scenes = 6;
  c.synth.duration_s = 8;
  const auto config = root.path / "config.json";
  std::ofstream(config) << nlohmann::json(c).dump(2);

  const std::vector<std::string> artifacts{"stage1.ckpt",    "stage2.ckpt",    "flat.ckpt",
                                           "stage1.log.jsonl", "stage2.log.jsonl", "flat.log.jsonl",
                                           "report.json",    "report.txt",     "predictions_hierarchical.csv",
                                           "predictions_flat.csv"};
  std::vector<std::string> outputs;
  for (const auto* run : {"a", "b"}) {
    const auto dir = root.path / run;
    const std::string common = " --config " + config.string() + " --data " + (dir / "data").string() + " --out " +
                               (dir / "out").string() + " --threads " + (run[0] == 'a' ? "1" : "2");
    const std::string synth = " --config " + config.string() + " --out " + (dir / "data").string();
    if (kit("synth" + synth) != 0) return {false, std::string("synth failed in run ") + run};
    if (kit("train --stage all" + common) != 0) return {false, std::string("train failed in run ") + run};
    if (kit("evaluate" + common) != 0) return {false, std::string("evaluate failed in run ") + run};
  }
  for (const auto& name : artifacts) {
    const auto a = root.path / "a" / "out" / name;
    const auto b = root.path / "b" / "out" / name;
    if (!fs::exists(a) || !fs::exists(b)) return {false, name + " missing"};
    if (slurp(a) != slurp(b)) return {false, name + " differs"};
  }
  if (slurp(root.path / "a" / "data" / "manifest.json") != slurp(root.path / "b" / "data" / "manifest.json")) {
    return {false, "manifest differs"};
  }
  return {true, std::to_string(artifacts.size()) + " artifacts byte-identical across runs (1 vs 2 threads)"};
}

}  // namespace

// Optional arguments pick criteria by number; no arguments runs all of them.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"feasible integer lags are {-1, 0, +1}", feasible_lags},
      {"interpolated GCC argmax matches the oversampled oracle", gcc_agreement},
      {"magnitude difference identities", magnitude_difference_identities},
      {"gradient checks for every layer and a composed CRNN", gradient_checks},
      {"Adam/Adamax first step and convergence", optimizers},
      {"oversampling balances classes and keeps every block", oversampling},
      {"fold-6 label statistics", fold_six},
      {"end-to-end benchmark", benchmark},
      {"CLI runs are bit-reproducible", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(i + 1)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << " ["
              << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

// seld_kit: synthetic corpus generation, feature extraction, training,
// evaluation and prediction for the two-stage detector/localizer.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "seld/checkpoint.hpp"
#include "seld/errors.hpp"
#include "seld/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seld;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kVersion = 4, kGradcheck = 5 };

struct Common {
  std::string config;
  std::optional<int> threads;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> rotation;
  std::optional<std::string> features;
  std::optional<int> max_epochs;
};

int threads_from_env() {
  if (const char* env = std::getenv("SELD_KIT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SELD_KIT_THREADS must be a positive integer, got '") + env + "'");
  }
  return 0;
}

// defaults < config file < flags; SELD_KIT_THREADS only fills in a missing --threads.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.threads) {
    cfg.threads = *c.threads;
  } else if (const int env = threads_from_env(); env > 0) {
    cfg.threads = env;
  }
  if (c.data) cfg.data_root = *c.data;
  if (c.out) cfg.output_dir = *c.out;
  if (c.seed) cfg.seed = *c.seed;
  if (c.rotation) cfg.rotation = *c.rotation;
  if (c.features) cfg.features_dir = *c.features;
  if (c.max_epochs) {
    for (Stage s : {Stage::detection, Stage::localization, Stage::flat}) cfg.train_config(s).max_epochs = *c.max_epochs;
  }
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

fs::path out_dir(const ExperimentConfig& cfg) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir: required (set it in the config or pass --out)");
  return cfg.output_dir;
}

std::vector<BlockFeatures> load_features(const ExperimentConfig& cfg, const FeatureExtractor& extractor) {
  const auto corpus = load_corpus(cfg);
  std::cerr << "extracting features for " << corpus.manifest.recording_count() << " recordings\n";
  return corpus_features(cfg, corpus, extractor);
}

int cmd_synth(const Common& common, const std::string& specs_dir, std::optional<int> scenes,
              std::optional<double> duration) {
  auto cfg = resolve(common);
  if (scenes) cfg.synth.scenes = *scenes;
  if (duration) cfg.synth.duration_s = *duration;
  cfg.validate(false);
  const fs::path out = common.out ? *common.out : cfg.data_root;
  if (out.empty()) throw ConfigError("synth: pass --out or set data_root");
  const auto specs = specs_dir.empty() ? std::vector<SceneSpec>{} : load_scene_specs(specs_dir);
  const auto result = synthesize_corpus(cfg, specs, out);
  std::cout << "wrote " << result.manifest.recording_count() << " recordings (" << result.blocks << " blocks) to "
            << out.string() << "\n"
            << fold_stats_table(result.stats);
  return kOk;
}

int cmd_features(const Common& common) {
  auto cfg = resolve(common);
  cfg.validate(true);
  const fs::path dir = common.out ? fs::path(*common.out) : fs::path(cfg.data_root) / "features";
  cfg.features_dir.clear();
  const FeatureExtractor extractor(cfg.features);
  const auto blocks = load_features(cfg, extractor);
  write_corpus_features(cfg, blocks, dir);
  std::cout << "wrote features for " << blocks.size() << " blocks to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Common& common, const std::string& stage_name) {
  const auto cfg = resolve(common);
  cfg.validate(true);
  const auto dir = out_dir(cfg);
  fs::create_directories(dir);
  std::vector<Stage> stages;
  if (stage_name == "all") {
    stages = {Stage::detection, Stage::localization, Stage::flat};
  } else {
    stages = {stage_from(stage_name == "1" ? "stage1" : stage_name == "2" ? "stage2" : stage_name)};
  }
  const FeatureExtractor extractor(cfg.features);
  const auto blocks = load_features(cfg, extractor);
  for (Stage stage : stages) {
    const auto name = to_string(stage);
    std::cerr << "training " << name << " (rotation " << cfg.rotation << ")\n";
    const auto run = run_stage(cfg, stage, blocks, extractor, [&](const EpochRecord& r) {
      std::cerr << "  " << name << " epoch " << r.epoch << "  train loss " << r.train_loss << "  val loss "
                << r.validation_loss << "  score " << r.score << (r.improved ? "  *" : "") << "\n";
    });
    save_checkpoint(dir / (name + ".ckpt"), run.checkpoint);
    write_file(dir / (name + ".log.jsonl"), run.log_jsonl);
    std::cout << name << ": best epoch " << run.result.best_epoch << " of " << run.result.epochs_run << ", "
              << run.checkpoint.parameters.size() << " parameters -> " << (dir / (name + ".ckpt")).string() << "\n";
  }
  return kOk;
}

std::string predictions_csv(const std::vector<BlockFeatures>& blocks, const SystemEvaluation& e) {
  std::string csv = prediction_csv_header() + "\n";
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    csv += prediction_csv_row(blocks[i].recording_id, blocks[i].second, e.predictions[i]) + "\n";
  }
  return csv;
}

int cmd_evaluate(const Common& common, bool hierarchical, bool flat, const std::string& ckpt_dir) {
  const auto cfg = resolve(common);
  cfg.validate(true);
  const auto dir = out_dir(cfg);
  const fs::path ckdir = ckpt_dir.empty() ? dir : fs::path(ckpt_dir);
  if (!hierarchical && !flat) hierarchical = flat = true;
  const FeatureExtractor extractor(cfg.features);
  const auto rot = rotation_split(cfg.rotation);
  const auto test = blocks_in_folds(load_features(cfg, extractor), {rot.test});
  if (test.empty()) throw AlignmentError("test fold " + std::to_string(rot.test) + " has no blocks");

  json report{{"format_version", kArtifactVersion},
              {"config_hash", config_hash(cfg)},
              {"rotation", cfg.rotation},
              {"test_fold", rot.test},
              {"blocks", test.size()},
              {"systems", json::object()}};
  std::vector<std::pair<std::string, SystemEvaluation>> results;
  if (hierarchical) {
    const auto system = hierarchical_from(load_checkpoint(ckdir / "stage1.ckpt"), load_checkpoint(ckdir / "stage2.ckpt"),
                                          extractor);
    results.emplace_back("hierarchical", evaluate_hierarchical(system, test, extractor, cfg.threads));
  }
  if (flat) {
    const auto system = flat_from(load_checkpoint(ckdir / "flat.ckpt"), extractor);
    results.emplace_back("flat", evaluate_flat(system, test, extractor, cfg.threads));
  }
  std::vector<std::pair<std::string, const SystemEvaluation*>> table;
  for (const auto& [name, e] : results) {
    report["systems"][name] = evaluation_json(e);
    write_file(dir / ("predictions_" + name + ".csv"), predictions_csv(test, e));
    table.emplace_back(name, &e);
  }
  const auto text = evaluation_table(table);
  write_file(dir / "report.json", report.dump(2) + "\n");
  write_file(dir / "report.txt", text);
  std::cout << text;
  for (const auto& [name, e] : results) {
    std::cout << name << " macro F1 " << e.report.macro_f1 << "\n";
  }
  return kOk;
}

int cmd_predict(const Common& common, const std::string& wav, bool flat, const std::string& ckpt_dir,
                const std::string& csv_out) {
  const auto cfg = resolve(common);
  cfg.validate(false);
  const fs::path ckdir = !ckpt_dir.empty() ? fs::path(ckpt_dir) : fs::path(out_dir(cfg));
  const FeatureExtractor extractor(cfg.features);
  const auto rec = read_wav(wav);
  // Unannotated audio: every whole second becomes a block.
  const std::vector<LabelSet> none(static_cast<std::size_t>(rec.frames() / static_cast<std::size_t>(rec.sample_rate)));
  const auto id = fs::path(wav).stem().string();
  const auto blocks = extractor.extract(rec, none, id, -1, cfg.threads);
  SystemEvaluation e;
  if (flat) {
    e = evaluate_flat(flat_from(load_checkpoint(ckdir / "flat.ckpt"), extractor), blocks, extractor, cfg.threads);
  } else {
    e = evaluate_hierarchical(
        hierarchical_from(load_checkpoint(ckdir / "stage1.ckpt"), load_checkpoint(ckdir / "stage2.ckpt"), extractor),
        blocks, extractor, cfg.threads);
  }
  const auto csv = predictions_csv(blocks, e);
  if (csv_out.empty() || csv_out == "-") {
    std::cout << csv;
  } else {
    write_file(csv_out, csv);
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  bool ok = true;
  for (const auto& c : nn::gradient_check_suite(seed)) {
    const bool pass = c.report.max_relative_error < tolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << "  checked " << c.report.checked << "  max rel err "
              << c.report.max_relative_error << "\n";
  }
  return ok ? kOk : kGradcheck;
}

int cmd_report(const Common& common, bool as_json) {
  const auto cfg = resolve(common);
  cfg.validate(false);
  const FeatureExtractor extractor(cfg.features);
  json j{{"config_hash", config_hash(cfg)}, {"models", json::object()}};
  std::ostringstream text;
  text << "config hash " << config_hash(cfg) << "\n";
  for (Stage s : {Stage::detection, Stage::localization, Stage::flat}) {
    const auto spec = model_spec_for(cfg, s, extractor);
    const auto shapes = nn::infer_shapes(spec);
    auto layers = json::array();
    text << to_string(s) << ": input " << spec.input_frames << " x " << spec.input_bands << ", "
         << nn::count_parameters(spec) << " parameters\n";
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto n = nn::layer_parameter_count(spec.layers[i], shapes[i]);
      layers.push_back({{"kind", nn::to_string(spec.layers[i].kind)},
                        {"units", spec.layers[i].units},
                        {"output_shape", shapes[i + 1]},
                        {"parameters", n}});
      std::ostringstream shape;
      for (std::size_t d = 0; d < shapes[i + 1].size(); ++d) shape << (d ? " x " : "") << shapes[i + 1][d];
      text << "  " << nn::to_string(spec.layers[i].kind) << "(" << spec.layers[i].units << ") -> " << shape.str()
           << "  [" << n << "]\n";
    }
    j["models"][to_string(s)] = {{"parameters", nn::count_parameters(spec)}, {"layers", layers}};
  }
  if (!cfg.data_root.empty()) {
    const auto corpus = load_corpus(cfg);
    std::vector<LabeledBlockRef> refs;
    for (const auto& r : corpus.annotations) {
      const int fold = corpus.manifest.fold_of(r.recording_id);
      if (fold >= 0) refs.push_back({fold, r.labels});
    }
    const auto stats = compute_fold_stats(refs);
    text << fold_stats_table(stats);
    auto rows = json::array();
    for (const auto& r : stats) {
      rows.push_back({{"total", r.total},
                      {"something_else", r.something_else},
                      {"speech_any", r.speech_any},
                      {"no_labels", r.no_labels},
                      {"front_only", r.front_only},
                      {"back_only", r.back_only},
                      {"front_and_back", r.front_and_back}});
    }
    j["fold_stats"] = rows;
  }
  std::cout << (as_json ? j.dump(2) + "\n" : text.str());
  return kOk;
}

void add_common(CLI::App* cmd, Common& c, bool data_flags = true) {
  cmd->add_option("-c,--config", c.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--threads", c.threads, "worker threads (falls back to SELD_KIT_THREADS)")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "experiment seed");
  if (!data_flags) return;
  cmd->add_option("--data", c.data, "corpus directory");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--rotation", c.rotation, "fold rotation 0-5")->check(CLI::Range(0, 5));
  cmd->add_option("--features", c.features, "feature cache directory");
  cmd->add_option("--max-epochs", c.max_epochs, "epoch cap for every stage")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage sound event detection and front/back speech localization"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "render a synthetic labeled corpus");
  add_common(synth, common);
  std::string specs_dir;
  std::optional<int> scenes;
  std::optional<double> duration;
  synth->add_option("--specs", specs_dir, "directory of scene spec JSON files (default: random scenes)");
  synth->add_option("--scenes", scenes, "number of random scenes")->check(CLI::PositiveNumber);
  synth->add_option("--duration", duration, "seconds per random scene")->check(CLI::PositiveNumber);

  auto* features = app.add_subcommand("features", "extract and cache features for a corpus");
  add_common(features, common);

  auto* train = app.add_subcommand("train", "train stage 1, stage 2 and/or the flat baseline");
  add_common(train, common);
  std::string stage = "all";
  train->add_option("--stage", stage, "1, 2, flat or all")->check(CLI::IsMember({"1", "2", "stage1", "stage2", "flat", "all"}));

  auto* evaluate = app.add_subcommand("evaluate", "score trained systems on the test fold");
  add_common(evaluate, common);
  bool hierarchical = false, flat = false;
  std::string ckpt_dir;
  evaluate->add_flag("--hierarchical", hierarchical, "score the two-stage system");
  evaluate->add_flag("--flat", flat, "score the flat baseline");
  evaluate->add_option("--checkpoints", ckpt_dir, "directory holding the checkpoints (default: output dir)");

  auto* predict = app.add_subcommand("predict", "per-second predictions for a WAV file");
  add_common(predict, common);
  std::string wav, csv_out;
  bool predict_flat = false;
  predict->add_option("wav", wav, "8-channel WAV file")->required()->check(CLI::ExistingFile);
  predict->add_flag("--flat", predict_flat, "use the flat baseline instead of the two-stage system");
  predict->add_option("--checkpoints", ckpt_dir, "directory holding the checkpoints (default: output dir)");
  predict->add_option("-o,--output", csv_out, "CSV path (default: stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer's gradients");
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;
  gradcheck->add_option("--seed", gc_seed, "seed for the test models");
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error");

  auto* report = app.add_subcommand("report", "model summaries and corpus fold statistics");
  add_common(report, common);
  bool as_json = false;
  report->add_flag("--json", as_json, "print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(common, specs_dir, scenes, duration);
    if (*features) return cmd_features(common);
    if (*train) return cmd_train(common, stage);
    if (*evaluate) return cmd_evaluate(common, hierarchical, flat, ckpt_dir);
    if (*predict) return cmd_predict(common, wav, predict_flat, ckpt_dir, csv_out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, tolerance);
    if (*report) return cmd_report(common, as_json);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVersion;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVersion;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

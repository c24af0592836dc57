#include "seld/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "seld/errors.hpp"
#include "seld/feature_cache.hpp"

namespace seld {
namespace {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over seed and salt
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t stage_salt(Stage s) {
  switch (s) {
    case Stage::detection:
      return 1;
    case Stage::localization:
      return 2;
    case Stage::flat:
      return 3;
  }
  return 0;
}

const std::vector<Stage> kStages{Stage::detection, Stage::localization, Stage::flat};

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed,
                std::vector<std::string>& errs) {
  if (!j.is_object()) {
    errs.push_back(where + ": expected an object");
    return;
  }
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) errs.push_back(where + (where.empty() ? "" : ".") + key + ": unknown field");
  }
}

// Reads j[key] into out when present, recording type errors.
template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where, std::vector<std::string>& errs) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const std::exception& e) {
    errs.push_back((where.empty() ? "" : where + ".") + key + ": " + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

const char* stage_tag(bool spatial) { return spatial ? "stage2" : "stage1"; }

}  // namespace

ModelConfig ModelConfig::defaults_for(Stage stage) {
  if (stage == Stage::localization) return {{32, 48}, {48}};
  return {{64, 96}, {64}};
}

void to_json(json& j, const ModelConfig& c) { j = {{"conv_filters", c.conv_filters}, {"lstm_units", c.lstm_units}}; }

void to_json(json& j, const SynthConfig& c) {
  j = {{"scenes", c.scenes},
       {"duration_s", c.duration_s},
       {"outdoor_share", c.outdoor_share},
       {"both_speech_share", c.both_speech_share},
       {"geometry", c.geometry}};
}

std::filesystem::path ExperimentConfig::manifest() const {
  if (!manifest_path.empty()) return manifest_path;
  return std::filesystem::path(data_root) / "manifest.json";
}

const ModelConfig& ExperimentConfig::model_for(Stage stage) const {
  return stage == Stage::detection ? model_stage1 : stage == Stage::localization ? model_stage2 : model_flat;
}

ModelConfig& ExperimentConfig::model_for(Stage stage) {
  return stage == Stage::detection ? model_stage1 : stage == Stage::localization ? model_stage2 : model_flat;
}

TrainConfig& ExperimentConfig::train_config(Stage stage) {
  return stage == Stage::detection ? train_stage1 : stage == Stage::localization ? train_stage2 : train_flat;
}

TrainConfig ExperimentConfig::train_for(Stage stage) const {
  TrainConfig c = stage == Stage::detection ? train_stage1 : stage == Stage::localization ? train_stage2 : train_flat;
  c.stage = stage;
  c.seed = mix_seed(seed, 10 + stage_salt(stage));
  c.threads = threads;
  return c;
}

std::vector<std::string> ExperimentConfig::violations(bool need_data) const {
  std::vector<std::string> errs;
  if (version != kConfigVersion) errs.push_back("version: expected " + std::to_string(kConfigVersion));
  if (rotation < 0 || rotation >= kFoldCount) errs.push_back("rotation: must be in [0, 5]");
  if (threads < 1) errs.push_back("threads: must be >= 1");
  try {
    features.validate();
  } catch (const Error& e) {
    errs.push_back(std::string("features: ") + e.what());
  }
  if (synth.scenes < 1) errs.push_back("synth.scenes: must be >= 1");
  if (!(synth.duration_s >= 1.0)) errs.push_back("synth.duration_s: must be >= 1");
  if (!(synth.outdoor_share >= 0 && synth.outdoor_share <= 1)) errs.push_back("synth.outdoor_share: must be in [0, 1]");
  if (!(synth.both_speech_share >= 0 && synth.both_speech_share <= 1)) {
    errs.push_back("synth.both_speech_share: must be in [0, 1]");
  }
  for (Stage s : kStages) {
    const auto& m = model_for(s);
    const std::string name = "models." + to_string(s);
    if (m.conv_filters.empty()) errs.push_back(name + ".conv_filters: needs at least one layer");
    for (int f : m.conv_filters) {
      if (f < 1) errs.push_back(name + ".conv_filters: entries must be >= 1");
    }
    for (int u : m.lstm_units) {
      if (u < 1) errs.push_back(name + ".lstm_units: entries must be >= 1");
    }
    try {
      train_for(s).validate();
    } catch (const Error& e) {
      errs.push_back("training." + to_string(s) + ": " + e.what());
    }
  }
  if (need_data) {
    if (data_root.empty()) {
      errs.push_back("data_root: required");
    } else if (!std::filesystem::is_directory(data_root)) {
      errs.push_back("data_root: no directory at " + data_root);
    }
    if (!std::filesystem::is_regular_file(manifest())) errs.push_back("manifest_path: no file at " + manifest().string());
    if (!features_dir.empty() && !std::filesystem::is_directory(features_dir)) {
      errs.push_back("features_dir: no directory at " + features_dir);
    }
  }
  return errs;
}

void ExperimentConfig::validate(bool need_data) const {
  const auto errs = violations(need_data);
  if (errs.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(errs.size()) + " problem" +
                    (errs.size() == 1 ? "" : "s") + "):";
  for (const auto& e : errs) msg += "\n  " + e;
  throw ConfigError(msg);
}

void to_json(json& j, const ExperimentConfig& c) {
  json models, training;
  for (Stage s : kStages) {
    models[to_string(s)] = c.model_for(s);
    auto t = json(c.train_for(s));
    t.erase("seed");
    t.erase("stage");
    training[to_string(s)] = t;
  }
  j = {{"version", c.version},
       {"data_root", c.data_root},
       {"output_dir", c.output_dir},
       {"manifest_path", c.manifest_path},
       {"features_dir", c.features_dir},
       {"seed", c.seed},
       {"rotation", c.rotation},
       {"threads", c.threads},
       {"features", c.features},
       {"synth", c.synth},
       {"models", models},
       {"training", training},
       {"flat_input", {{"mono_only", c.flat_input.mono_only}}}};
}

ExperimentConfig experiment_config_from(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig c;
  std::vector<std::string> errs;
  if (j.contains("version")) {
    if (!j.at("version").is_number_integer() || j.at("version").get<int>() != kConfigVersion) {
      throw VersionError("configuration version " + j.at("version").dump() + " is not supported (expected " +
                         std::to_string(kConfigVersion) + ")");
    }
  }
  check_keys(j, "",
             {"version", "data_root", "output_dir", "manifest_path", "features_dir", "seed", "rotation", "threads",
              "features", "synth", "models", "training", "flat_input"},
             errs);
  read_field(j, "data_root", c.data_root, "", errs);
  read_field(j, "output_dir", c.output_dir, "", errs);
  read_field(j, "manifest_path", c.manifest_path, "", errs);
  read_field(j, "features_dir", c.features_dir, "", errs);
  read_field(j, "seed", c.seed, "", errs);
  read_field(j, "rotation", c.rotation, "", errs);
  read_field(j, "threads", c.threads, "", errs);
  if (j.contains("features")) {
    const auto& f = j.at("features");
    check_keys(f, "features", {"stft", "n_mel", "fmin", "fmax", "localization"}, errs);
    try {
      c.features = f.get<FeatureConfig>();
    } catch (const std::exception& e) {
      errs.push_back(std::string("features: ") + e.what());
    }
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, "synth", {"scenes", "duration_s", "outdoor_share", "both_speech_share", "geometry"}, errs);
    read_field(s, "scenes", c.synth.scenes, "synth", errs);
    read_field(s, "duration_s", c.synth.duration_s, "synth", errs);
    read_field(s, "outdoor_share", c.synth.outdoor_share, "synth", errs);
    read_field(s, "both_speech_share", c.synth.both_speech_share, "synth", errs);
    if (s.contains("geometry")) {
      try {
        c.synth.geometry = s.at("geometry").get<ArrayGeometry>();
        c.synth.geometry.validate();
      } catch (const std::exception& e) {
        errs.push_back(std::string("synth.geometry: ") + e.what());
      }
    }
  }
  if (j.contains("models")) {
    const auto& m = j.at("models");
    check_keys(m, "models", {"stage1", "stage2", "flat"}, errs);
    for (Stage s : kStages) {
      const auto name = to_string(s);
      if (!m.is_object() || !m.contains(name)) continue;
      const auto& ms = m.at(name);
      const auto where = "models." + name;
      check_keys(ms, where, {"conv_filters", "lstm_units"}, errs);
      read_field(ms, "conv_filters", c.model_for(s).conv_filters, where, errs);
      read_field(ms, "lstm_units", c.model_for(s).lstm_units, where, errs);
    }
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, "training", {"stage1", "stage2", "flat"}, errs);
    for (Stage s : kStages) {
      const auto name = to_string(s);
      if (!t.is_object() || !t.contains(name)) continue;
      const auto& ts = t.at(name);
      check_keys(ts, "training." + name,
                 {"optimizer", "hyper", "batch_size", "max_epochs", "patience", "oversample", "threads"}, errs);
      try {
        c.train_config(s) = train_config_from(ts, s);
      } catch (const std::exception& e) {
        errs.push_back("training." + name + ": " + e.what());
      }
    }
  }
  if (j.contains("flat_input")) {
    const auto& f = j.at("flat_input");
    check_keys(f, "flat_input", {"mono_only"}, errs);
    read_field(f, "mono_only", c.flat_input.mono_only, "flat_input", errs);
  }
  if (!errs.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errs.size()) + " problem" +
                      (errs.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from(j);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& c) {
  json j = c;
  for (const char* key : {"data_root", "output_dir", "manifest_path", "features_dir", "threads"}) j.erase(key);
  for (auto& [name, t] : j["training"].items()) t.erase("threads");
  return fnv1a_hex(j.dump());
}

std::string feature_hash(const FeatureConfig& c) { return fnv1a_hex(json(c).dump()); }

// ---- corpus -----------------------------------------------------------------

std::vector<SceneSpec> load_scene_specs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("no scene spec directory at " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SceneSpec> specs;
  for (const auto& f : files) {
    try {
      auto spec = json::parse(read_text(f)).get<SceneSpec>();
      spec.validate();
      specs.push_back(std::move(spec));
    } catch (const std::exception& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  if (specs.empty()) throw ConfigError("no scene specs (*.json) in " + dir.string());
  return specs;
}

FoldManifest read_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const int version = j.value("version", -1);
  if (version != 1) throw VersionError(path.string() + ": manifest version " + std::to_string(version) + " unsupported");
  return j.get<FoldManifest>();
}

void write_manifest(const std::filesystem::path& path, const FoldManifest& manifest, const std::string& hash) {
  json j = manifest;
  j["config_hash"] = hash;
  write_text(path, j.dump(2) + "\n");
}

SynthResult synthesize_corpus(const ExperimentConfig& cfg, const std::vector<SceneSpec>& given,
                              const std::filesystem::path& out) {
  std::vector<SceneSpec> specs = given;
  if (specs.empty()) {
    CorpusOptions options;
    options.duration_s = cfg.synth.duration_s;
    options.both_speech_share = cfg.synth.both_speech_share;
    for (int i = 0; i < cfg.synth.scenes; ++i) {
      // Spread outdoor scenes evenly through the index range.
      const bool outdoor = static_cast<int>((i + 1) * cfg.synth.outdoor_share) > static_cast<int>(i * cfg.synth.outdoor_share);
      char id[32];
      std::snprintf(id, sizeof id, "scene_%03d", i);
      specs.push_back(random_scene(id, outdoor ? "outdoor" : "indoor", mix_seed(cfg.seed, 1000 + i), options));
    }
  }
  std::set<std::string> ids;
  for (const auto& s : specs) {
    if (!ids.insert(s.id).second) throw ConfigError("duplicate scene id '" + s.id + "'");
    if (s.sample_rate != cfg.features.stft.sample_rate) {
      throw ConfigError("scene '" + s.id + "': sample rate differs from the feature configuration");
    }
  }
  const auto hash = config_hash(cfg);
  std::filesystem::create_directories(out / "audio");
  std::filesystem::create_directories(out / "scenes");
  std::vector<std::vector<LabelSet>> labels(specs.size());
  parallel_for(specs.size(), cfg.threads, [&](std::size_t i) {
    auto scene = render_scene(specs[i], cfg.synth.geometry);
    write_wav(out / "audio" / (specs[i].id + ".wav"), scene.recording, SampleFormat::float32);
    json sj = specs[i];
    sj["config_hash"] = hash;
    write_text(out / "scenes" / (specs[i].id + ".json"), sj.dump(2) + "\n");
    labels[i] = std::move(scene.labels);
  });
  std::vector<AnnotationRow> rows;
  std::vector<RecordingInfo> infos;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t s = 0; s < labels[i].size(); ++s) rows.push_back({specs[i].id, static_cast<int>(s), labels[i][s]});
    infos.push_back({specs[i].id, specs[i].scene_kind});
  }
  write_annotations(out / "annotations.csv", rows);
  SynthResult result;
  result.manifest = assign_folds(infos);
  result.manifest.rotation = cfg.rotation;
  write_manifest(out / "manifest.json", result.manifest, hash);
  std::vector<LabeledBlockRef> refs;
  for (const auto& r : rows) refs.push_back({result.manifest.fold_of(r.recording_id), r.labels});
  result.stats = compute_fold_stats(refs);
  result.blocks = rows.size();
  return result;
}

Corpus load_corpus(const ExperimentConfig& cfg) {
  Corpus c;
  c.root = cfg.data_root;
  c.manifest = read_manifest(cfg.manifest());
  c.manifest.rotation = cfg.rotation;
  c.annotations = read_annotations(c.root / "annotations.csv");
  return c;
}

std::vector<BlockFeatures> corpus_features(const ExperimentConfig& cfg, const Corpus& corpus,
                                           const FeatureExtractor& extractor) {
  std::vector<std::pair<std::string, int>> recordings;
  for (int f = 0; f < kFoldCount; ++f) {
    for (const auto& id : corpus.manifest.folds[f]) recordings.emplace_back(id, f);
  }
  std::vector<std::vector<BlockFeatures>> per(recordings.size());
  const auto fhash = feature_hash(extractor.config());
  parallel_for(recordings.size(), cfg.threads, [&](std::size_t i) {
    const auto& [id, fold] = recordings[i];
    const auto labels = labels_for(corpus.annotations, id);
    if (!cfg.features_dir.empty()) {
      const auto base = std::filesystem::path(cfg.features_dir) / id;
      auto spec = read_feature_cache(base.string() + "." + stage_tag(false), fhash);
      auto spat = read_feature_cache(base.string() + "." + stage_tag(true), fhash);
      if (spec.labels != labels || spat.labels != labels) {
        throw AlignmentError("cached features for '" + id + "' disagree with the annotations");
      }
      auto& out = per[i];
      for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        out.push_back({id, spec.seconds[b], fold, labels[b], std::move(spec.blocks[b]), std::move(spat.blocks[b])});
      }
      return;
    }
    const auto rec = read_wav(corpus.root / "audio" / (id + ".wav"));
    per[i] = extractor.extract(rec, labels, id, fold, 1);
  });
  std::vector<BlockFeatures> all;
  for (auto& p : per) {
    for (auto& b : p) all.push_back(std::move(b));
  }
  return all;
}

void write_corpus_features(const ExperimentConfig& cfg, const std::vector<BlockFeatures>& blocks,
                           const std::filesystem::path& dir) {
  const auto fhash = feature_hash(cfg.features);
  const auto hash = config_hash(cfg);
  std::size_t start = 0;
  while (start < blocks.size()) {
    std::size_t end = start;
    while (end < blocks.size() && blocks[end].recording_id == blocks[start].recording_id) ++end;
    for (bool spatial : {false, true}) {
      FeatureCache c;
      c.stage = stage_tag(spatial);
      c.recording_id = blocks[start].recording_id;
      c.fold = blocks[start].fold;
      c.feature_hash = fhash;
      c.config_hash = hash;
      for (std::size_t b = start; b < end; ++b) {
        c.seconds.push_back(blocks[b].second);
        c.labels.push_back(blocks[b].labels);
        c.blocks.push_back(spatial ? blocks[b].spatial : blocks[b].spectral);
      }
      write_feature_cache(dir / (c.recording_id + "." + c.stage), c);
    }
    start = end;
  }
}

// ---- training -----------------------------------------------------------------

Standardizers fit_standardizers(const std::vector<BlockFeatures>& blocks, const RotationSplit& split) {
  std::vector<Matrix> spectral, spatial;
  for (const auto& b : blocks) {
    if (std::find(split.train.begin(), split.train.end(), b.fold) == split.train.end()) continue;
    spectral.push_back(b.spectral);
    spatial.push_back(b.spatial);
  }
  if (spectral.empty()) throw std::invalid_argument("no training blocks to fit standardizers on");
  const std::vector<int> folds(split.train.begin(), split.train.end());
  return {fit_standardizer(spectral, folds), fit_standardizer(spatial, folds)};
}

nn::ModelSpec model_spec_for(const ExperimentConfig& cfg, Stage stage, const FeatureExtractor& extractor) {
  const auto& m = cfg.model_for(stage);
  const int spatial_cols = 1 + cfg.features.localization.n_mel;
  int frames = static_cast<int>(extractor.spectral_frames());
  int bands = cfg.features.n_mel;
  int outputs = 2;
  if (stage == Stage::localization) {
    frames = static_cast<int>(extractor.spatial_frames());
    bands = spatial_cols;
  } else if (stage == Stage::flat) {
    outputs = 3;
    if (!cfg.flat_input.mono_only) bands += spatial_cols;
  }
  return nn::ModelSpec::crnn(frames, bands, m.conv_filters, m.lstm_units, outputs,
                             mix_seed(cfg.seed, 20 + stage_salt(stage)));
}

std::vector<BlockFeatures> blocks_in_folds(const std::vector<BlockFeatures>& blocks, const std::vector<int>& folds) {
  std::vector<BlockFeatures> out;
  for (const auto& b : blocks) {
    if (std::find(folds.begin(), folds.end(), b.fold) != folds.end()) out.push_back(b);
  }
  return out;
}

Split make_split(Stage stage, SplitRole role, std::vector<int> folds, const std::vector<BlockFeatures>& blocks,
                 const InputBuilder& inputs, FlatInputOptions flat) {
  Split split;
  split.role = role;
  split.folds = std::move(folds);
  for (const auto& b : blocks) {
    if (std::find(split.folds.begin(), split.folds.end(), b.fold) == split.folds.end()) continue;
    Example ex;
    ex.fold = b.fold;
    ex.recording_id = b.recording_id;
    ex.second = b.second;
    switch (stage) {
      case Stage::detection:
        ex.input = inputs.stage1(b);
        ex.targets = stage1_targets(b.labels);
        break;
      case Stage::localization:
        // Only blocks that contain speech reach the localizer.
        if (!b.labels.speech()) continue;
        ex.input = inputs.stage2(b);
        ex.targets = stage2_targets(b.labels);
        break;
      case Stage::flat:
        ex.input = inputs.flat(b, flat);
        ex.targets = flat_targets(b.labels);
        break;
    }
    split.examples.push_back(std::move(ex));
  }
  return split;
}

StageRun run_stage(const ExperimentConfig& cfg, Stage stage, const std::vector<BlockFeatures>& blocks,
                   const FeatureExtractor& extractor, const EpochCallback& on_epoch) {
  const auto rot = rotation_split(cfg.rotation);
  auto stds = fit_standardizers(blocks, rot);
  const InputBuilder inputs(extractor, stds.spectral, stds.spatial);
  const auto train = make_split(stage, SplitRole::train, {rot.train.begin(), rot.train.end()}, blocks, inputs,
                                cfg.flat_input);
  const auto validation = make_split(stage, SplitRole::validation, {rot.validation.begin(), rot.validation.end()},
                                     blocks, inputs, cfg.flat_input);
  const auto tcfg = cfg.train_for(stage);
  nn::Model<float> model(model_spec_for(cfg, stage, extractor));

  StageRun run{{}, {}, train_stage(std::move(model), train, validation, tcfg, on_epoch)};
  run.log_jsonl = training_log_jsonl(stage, run.result.log);
  auto& ck = run.checkpoint;
  ck = Checkpoint::from_model(run.result.model);
  ck.optimizer = run.result.optimizer;
  auto tj = json(tcfg);
  tj.erase("threads");
  ck.metadata = {{"format_version", kArtifactVersion},
                 {"stage", to_string(stage)},
                 {"config_hash", config_hash(cfg)},
                 {"rotation", cfg.rotation},
                 {"seed", cfg.seed},
                 {"labels", label_names(stage)},
                 {"features", extractor.config()},
                 {"standardizers", {{"spectral", stds.spectral}, {"spatial", stds.spatial}}},
                 {"flat_input", {{"mono_only", cfg.flat_input.mono_only}}},
                 {"train", tj},
                 {"best_epoch", run.result.best_epoch},
                 {"epochs_run", run.result.epochs_run},
                 {"train_examples", train.examples.size()},
                 {"validation_examples", validation.examples.size()}};
  return run;
}

namespace {

void check_checkpoint(const Checkpoint& ck, Stage expected, const FeatureExtractor& extractor) {
  const auto& md = ck.metadata;
  if (md.value("format_version", -1) != kArtifactVersion) {
    throw VersionError("checkpoint metadata version " + md.value("format_version", json(-1)).dump() +
                       " is not supported");
  }
  const auto stage = md.value("stage", std::string());
  if (stage != to_string(expected)) {
    throw ShapeError("expected a " + to_string(expected) + " checkpoint, got '" + stage + "'");
  }
  if (!md.contains("features") || md.at("features") != json(extractor.config())) {
    throw ShapeError(stage + " checkpoint was trained with a different feature configuration");
  }
}

Standardizer standardizer_of(const Checkpoint& ck, const char* which) {
  return ck.metadata.at("standardizers").at(which).get<Standardizer>();
}

SystemEvaluation finish(std::vector<BlockPrediction> predictions, const std::vector<BlockFeatures>& blocks) {
  SystemEvaluation e;
  std::vector<LabelSet> truth;
  truth.reserve(blocks.size());
  for (const auto& b : blocks) truth.push_back(b.labels);
  e.report = evaluate_joint(predictions, truth);
  for (const auto& p : predictions) {
    if ((p.labels.speech_front || p.labels.speech_back) && p.p_speech < nn::kDecisionThreshold) ++e.gate_violations;
  }
  e.predictions = std::move(predictions);
  return e;
}

}  // namespace

HierarchicalSystem hierarchical_from(const Checkpoint& stage1, const Checkpoint& stage2,
                                     const FeatureExtractor& extractor) {
  check_checkpoint(stage1, Stage::detection, extractor);
  check_checkpoint(stage2, Stage::localization, extractor);
  return {stage1.model(), stage2.model(), standardizer_of(stage1, "spectral"), standardizer_of(stage2, "spatial")};
}

FlatSystem flat_from(const Checkpoint& flat, const FeatureExtractor& extractor) {
  check_checkpoint(flat, Stage::flat, extractor);
  FlatInputOptions options;
  options.mono_only = flat.metadata.at("flat_input").value("mono_only", false);
  return {flat.model(), standardizer_of(flat, "spectral"), standardizer_of(flat, "spatial"), options};
}

SystemEvaluation evaluate_hierarchical(const HierarchicalSystem& system, const std::vector<BlockFeatures>& blocks,
                                       const FeatureExtractor& extractor, int threads) {
  std::vector<BlockPrediction> preds(blocks.size());
  parallel_for(blocks.size(), threads,
               [&](std::size_t i) { preds[i] = predict_hierarchical(blocks[i], system, extractor); });
  return finish(std::move(preds), blocks);
}

SystemEvaluation evaluate_flat(const FlatSystem& system, const std::vector<BlockFeatures>& blocks,
                               const FeatureExtractor& extractor, int threads) {
  std::vector<BlockPrediction> preds(blocks.size());
  parallel_for(blocks.size(), threads, [&](std::size_t i) { preds[i] = predict_flat(blocks[i], system, extractor); });
  return finish(std::move(preds), blocks);
}

json evaluation_json(const SystemEvaluation& e) {
  auto j = f1_report_json(e.report, kJointLabels);
  j["blocks"] = e.predictions.size();
  j["gate_violations"] = e.gate_violations;
  return j;
}

std::string evaluation_table(const std::vector<std::pair<std::string, const SystemEvaluation*>>& systems) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "label";
  for (const auto& [name, e] : systems) out << std::setw(30) << (name + "  P / R / F1");
  out << '\n';
  out << std::fixed << std::setprecision(3);
  auto cell = [&](double p, double r, double f) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(3) << p << " / " << r << " / " << f;
    out << std::setw(30) << c.str();
  };
  for (std::size_t l = 0; l < kJointLabels.size(); ++l) {
    out << std::setw(16) << kJointLabels[l];
    for (const auto& [name, e] : systems) {
      const auto& s = e->report.labels[l];
      cell(s.precision, s.recall, s.f1);
    }
    out << '\n';
  }
  out << std::setw(16) << "macro";
  for (const auto& [name, e] : systems) cell(e->report.macro_precision, e->report.macro_recall, e->report.macro_f1);
  out << '\n';
  return out.str();
}

std::string fold_stats_table(const FoldStats& stats) {
  std::ostringstream out;
  out << "fold   total  else  speech  none  front  back  both\n";
  FoldStatsRow sum;
  for (int f = 0; f < kFoldCount; ++f) {
    const auto& r = stats[f];
    char line[96];
    std::snprintf(line, sizeof line, "%4d %7d %5d %7d %5d %6d %5d %5d\n", f + 1, r.total, r.something_else,
                  r.speech_any, r.no_labels, r.front_only, r.back_only, r.front_and_back);
    out << line;
    sum.total += r.total;
    sum.something_else += r.something_else;
    sum.speech_any += r.speech_any;
    sum.no_labels += r.no_labels;
    sum.front_only += r.front_only;
    sum.back_only += r.back_only;
    sum.front_and_back += r.front_and_back;
  }
  char line[96];
  std::snprintf(line, sizeof line, " all %7d %5d %7d %5d %6d %5d %5d\n", sum.total, sum.something_else,
                sum.speech_any, sum.no_labels, sum.front_only, sum.back_only, sum.front_and_back);
  out << line;
  return out.str();
}

}  // namespace seld

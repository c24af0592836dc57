#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "seld/audio_io.hpp"
#include "seld/checkpoint.hpp"
#include "seld/errors.hpp"
#include "seld/experiment.hpp"
#include "seld/neural.hpp"
#include "seld/scene_synth.hpp"
#include "seld/spatial_features.hpp"
#include "seld/training.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace seld;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Matrix& m) {
  py::array_t<float> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::array_t<float> to_numpy(const std::vector<std::vector<float>>& channels) {
  const std::size_t n = channels.empty() ? 0 : channels.front().size();
  py::array_t<float> out({channels.size(), n});
  auto* dst = out.mutable_data();
  for (const auto& ch : channels) dst = std::copy(ch.begin(), ch.end(), dst);
  return out;
}

// (channels, samples) array to per-channel vectors.
std::vector<std::vector<float>> from_numpy(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("audio must be a 2-D (channels, samples) array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  std::vector<std::vector<float>> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r].assign(a.data() + r * cols, a.data() + (r + 1) * cols);
  return out;
}

py::array_t<double> to_numpy(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict labels_dict(const LabelSet& l) {
  py::dict d;
  d["speech_front"] = l.speech_front;
  d["speech_back"] = l.speech_back;
  d["something_else"] = l.something_else;
  return d;
}

py::dict prediction_dict(const std::string& id, int second, const BlockPrediction& p) {
  py::dict d;
  d["recording_id"] = id;
  d["second"] = second;
  d["labels"] = labels_dict(p.labels);
  d["p_speech"] = p.p_speech;
  d["p_something_else"] = p.p_something_else;
  d["p_front"] = p.p_front ? py::cast(*p.p_front) : py::none();
  d["p_back"] = p.p_back ? py::cast(*p.p_back) : py::none();
  return d;
}

MultichannelRecording recording(const FloatArray& audio, int sample_rate) {
  MultichannelRecording rec;
  rec.sample_rate = sample_rate;
  rec.channels = from_numpy(audio);
  rec.validate();
  return rec;
}

// Hierarchical or flat system rebuilt from a checkpoint directory.
class Predictor {
 public:
  Predictor(const std::string& checkpoint_dir, bool flat) : flat_(flat) {
    const std::filesystem::path dir(checkpoint_dir);
    if (flat) {
      const auto ck = load_checkpoint(dir / "flat.ckpt");
      extractor_.emplace(ck.metadata.at("features").get<FeatureConfig>());
      flat_system_.emplace(flat_from(ck, *extractor_));
    } else {
      const auto s1 = load_checkpoint(dir / "stage1.ckpt");
      const auto s2 = load_checkpoint(dir / "stage2.ckpt");
      extractor_.emplace(s1.metadata.at("features").get<FeatureConfig>());
      hierarchical_.emplace(hierarchical_from(s1, s2, *extractor_));
    }
  }

  py::list predict(const FloatArray& audio, int sample_rate, const std::string& recording_id) const {
    const auto rec = recording(audio, sample_rate);
    const std::vector<LabelSet> none(rec.frames() / static_cast<std::size_t>(rec.sample_rate));
    const auto blocks = extractor_->extract(rec, none, recording_id, -1);
    py::list out;
    for (const auto& b : blocks) {
      const auto p = flat_ ? predict_flat(b, *flat_system_, *extractor_) : predict_hierarchical(b, *hierarchical_, *extractor_);
      out.append(prediction_dict(b.recording_id, b.second, p));
    }
    return out;
  }

 private:
  bool flat_;
  std::optional<FeatureExtractor> extractor_;
  std::optional<HierarchicalSystem> hierarchical_;
  std::optional<FlatSystem> flat_system_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of seld_kit";

  static py::exception<Error> base(m, "SeldError", PyExc_RuntimeError);
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<VersionError> version_error(m, "VersionError", base.ptr());
  static py::exception<ShapeError> shape_error(m, "ShapeError", base.ptr());
  static py::exception<FormatError> format_error(m, "FormatError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(config_error.ptr(), e.what());
    } catch (const VersionError& e) {
      PyErr_SetString(version_error.ptr(), e.what());
    } catch (const ShapeError& e) {
      PyErr_SetString(shape_error.ptr(), e.what());
    } catch (const FormatError& e) {
      PyErr_SetString(format_error.ptr(), e.what());
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), e.what());
    }
  });

  m.def(
      "render_scene",
      [](const std::string& spec_json) {
        const auto spec = json::parse(spec_json).get<SceneSpec>();
        const auto scene = render_scene(spec, ArrayGeometry::phone_default());
        py::list labels;
        for (const auto& l : scene.labels) labels.append(labels_dict(l));
        return py::make_tuple(to_numpy(scene.recording.channels), scene.recording.sample_rate, labels);
      },
      py::arg("spec_json"));

  m.def(
      "random_scene",
      [](const std::string& id, const std::string& kind, std::uint64_t seed, double duration_s) {
        CorpusOptions opts;
        opts.duration_s = duration_s;
        return json(random_scene(id, kind, seed, opts)).dump();
      },
      py::arg("id"), py::arg("scene_kind"), py::arg("seed"), py::arg("duration_s") = 30.0);

  m.def(
      "fractional_delay",
      [](const DoubleArray& x, double delay) {
        const auto out = fractional_delay(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), delay);
        return to_numpy(out);
      },
      py::arg("signal"), py::arg("delay"));

  m.def(
      "read_wav",
      [](const std::string& path) {
        const auto rec = read_wav(path);
        return py::make_tuple(to_numpy(rec.channels), rec.sample_rate);
      },
      py::arg("path"));

  m.def(
      "write_wav",
      [](const std::string& path, const FloatArray& audio, int sample_rate) {
        write_wav(path, recording(audio, sample_rate));
      },
      py::arg("path"), py::arg("audio"), py::arg("sample_rate"));

  m.def(
      "block_features",
      [](const FloatArray& audio, int sample_rate) {
        AudioBlock block;
        block.sample_rate = sample_rate;
        block.channels = from_numpy(audio);
        const auto f = FeatureExtractor().extract_block(block);
        return py::make_tuple(to_numpy(f.spectral), to_numpy(f.spatial));
      },
      py::arg("audio"), py::arg("sample_rate") = 48000);

  m.def(
      "gcc",
      [](const FloatArray& x, const FloatArray& y, int interp_factor, bool phat) {
        LocFrameConfig cfg;
        cfg.fft_size = static_cast<int>(x.size());
        cfg.frame_ms = 1000.0 * static_cast<double>(x.size()) / cfg.sample_rate;
        cfg.interp_factor = interp_factor;
        cfg.phat = phat;
        const auto g = gcc_interpolated(std::span<const float>(x.data(), static_cast<std::size_t>(x.size())),
                                        std::span<const float>(y.data(), static_cast<std::size_t>(y.size())), cfg);
        return py::make_tuple(to_numpy(g.values), g.peak_lag());
      },
      py::arg("x"), py::arg("y"), py::arg("interp_factor") = 5, py::arg("phat") = true);

  m.def(
      "magnitude_difference",
      [](const FloatArray& audio, int sample_rate) {
        AudioBlock block;
        block.sample_rate = sample_rate;
        block.channels = from_numpy(audio);
        return to_numpy(mel_magnitude_difference(block));
      },
      py::arg("audio"), py::arg("sample_rate") = 48000);

  m.def(
      "parameter_count",
      [](const std::string& stage, const std::string& config_json) {
        const auto cfg = config_json.empty() ? ExperimentConfig{} : experiment_config_from(json::parse(config_json));
        return nn::count_parameters(model_spec_for(cfg, stage_from(stage), FeatureExtractor(cfg.features)));
      },
      py::arg("stage"), py::arg("config_json") = "");

  m.def(
      "gradient_check",
      [](std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& c : nn::gradient_check_suite(seed)) out.emplace_back(c.name, c.report.max_relative_error);
        return out;
      },
      py::arg("seed") = 0);

  m.def(
      "oversample_balance",
      [](const std::vector<int>& class_ids, std::uint64_t seed) { return oversample_balance(class_ids, seed); },
      py::arg("class_ids"), py::arg("seed"));

  m.def(
      "fold_stats",
      [](const std::vector<int>& folds, const std::vector<int>& codes) {
        if (folds.size() != codes.size()) throw AlignmentError("folds and label codes differ in length");
        std::vector<LabeledBlockRef> refs;
        for (std::size_t i = 0; i < folds.size(); ++i) {
          refs.push_back({folds[i], {(codes[i] & 1) != 0, (codes[i] & 2) != 0, (codes[i] & 4) != 0}});
        }
        py::list rows;
        for (const auto& r : compute_fold_stats(refs)) {
          py::dict d;
          d["total"] = r.total;
          d["something_else"] = r.something_else;
          d["speech_any"] = r.speech_any;
          d["no_labels"] = r.no_labels;
          d["front_only"] = r.front_only;
          d["back_only"] = r.back_only;
          d["front_and_back"] = r.front_and_back;
          rows.append(d);
        }
        return rows;
      },
      py::arg("folds"), py::arg("label_codes"));

  m.def(
      "f1_score",
      [](int tp, int fp, int fn, int tn) {
        const auto s = score_counts(tp, fp, fn, tn);
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

  m.def(
      "config_hash",
      [](const std::string& config_json) { return config_hash(experiment_config_from(json::parse(config_json))); },
      py::arg("config_json"));
  m.def("default_config", [] { return json(ExperimentConfig{}).dump(); });
  m.def("fnv1a_hex", [](const py::bytes& b) { return fnv1a_hex(std::string(b)); }, py::arg("data"));

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const auto ck = load_checkpoint(path);
        py::dict d;
        d["metadata"] = ck.metadata.dump();
        d["parameters"] = ck.parameters.size();
        d["has_optimizer"] = ck.optimizer.has_value();
        return d;
      },
      py::arg("path"));

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::string&, bool>(), py::arg("checkpoint_dir"), py::arg("flat") = false)
      .def("predict", &Predictor::predict, py::arg("audio"), py::arg("sample_rate"), py::arg("recording_id") = "audio");
}

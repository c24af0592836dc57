#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace seld::nn {

enum class LayerKind {
  conv2d,               // 5x5, same padding, ReLU; units = output channels
  max_pool2d,           // 2x2 over (time, band), floor
  merge_freq_channels,  // (channels, time, bands) -> (time, channels * bands)
  lstm,                 // units = hidden size
  dense_sigmoid,        // applied per time step; units = outputs
  time_max_pool,        // (time, outputs) -> (outputs)
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::conv2d;
  int units = 0;
  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  int input_frames = 0;
  int input_bands = 0;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 0;

  /// conv/pool pairs, a merge, LSTM layers, per-step sigmoid dense, then max over time.
  static ModelSpec crnn(int frames, int bands, const std::vector<int>& conv_filters, const std::vector<int>& lstm_units,
                        int outputs, std::uint64_t seed = 0);
  bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

using Shape = std::vector<int>;

/// Output shape of every layer (index 0 is the input). Throws ShapeError
/// naming the first layer whose input does not fit.
std::vector<Shape> infer_shapes(const ModelSpec& spec);
std::size_t layer_parameter_count(const LayerSpec& layer, const Shape& input);
std::size_t count_parameters(const ModelSpec& spec);

constexpr int kKernel = 5;

/// Intermediate values of one forward pass, needed by backward().
template <class T>
struct Trace {
  std::vector<std::vector<T>> activations;  // activations[0] is the input
  std::vector<std::vector<int>> argmax;     // pooling routes
  std::vector<std::vector<T>> cache;        // LSTM gates and cell states

  std::span<const T> output() const { return activations.back(); }
};

template <class T>
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  std::size_t input_size() const;
  std::size_t output_size() const;
  std::size_t parameter_count() const { return params_.size(); }
  std::size_t layer_count() const { return spec_.layers.size(); }

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> layer_parameters(std::size_t layer);
  std::span<const T> layer_parameters(std::size_t layer) const;

  // Seeded fan-in scaled uniform initialization; forget-gate biases start at 1.
  void initialize(std::uint64_t seed);

  Trace<T> forward(std::span<const T> input) const;
  std::vector<T> predict(std::span<const T> input) const;

  // Accumulates d(loss)/d(params) into param_grad given d(loss)/d(output).
  void backward(const Trace<T>& trace, std::span<const T> output_grad, std::span<T> param_grad) const;
  // Same, also returning d(loss)/d(input).
  std::vector<T> backward_with_input(const Trace<T>& trace, std::span<const T> output_grad,
                                     std::span<T> param_grad) const;

  template <class U>
  Model<U> cast() const {
    Model<U> out(spec_);
    auto dst = out.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  std::vector<T> backward_impl(const Trace<T>& trace, std::span<const T> output_grad, std::span<T> param_grad,
                               bool need_input) const;

  ModelSpec spec_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;  // layer_count + 1 entries
  std::vector<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Binary cross-entropy averaged over labels with probabilities clamped to
/// [1e-7, 1 - 1e-7]. `grad` is d(loss)/d(probability) at the clamped value,
/// i.e. with respect to the time-pooled outputs; backward() routes it to the
/// winning time step.
struct LossReport {
  double loss = 0.0;
  std::vector<double> probabilities;
  std::vector<bool> predictions;  // probability >= 0.5
  std::vector<double> grad;
};

constexpr double kProbClamp = 1e-7;
constexpr double kDecisionThreshold = 0.5;

LossReport bce_loss(std::span<const float> probabilities, std::span<const float> targets);
LossReport bce_loss(std::span<const double> probabilities, std::span<const double> targets);

/// Finite-difference check of every parameter gradient of a double model
/// under the BCE loss on a single example.
struct GradCheckReport {
  std::size_t checked = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradCheckReport gradient_check(Model<double>& model, std::span<const double> input, std::span<const double> targets,
                               double step = 1e-4);

/// Same check for the loss sum_k weights[k] * output[k], which stays smooth
/// for layers whose outputs are not probabilities. Input gradients are
/// checked too.
GradCheckReport gradient_check_projection(Model<double>& model, std::vector<double> input,
                                          std::span<const double> weights, double step = 1e-4);

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

/// Every layer kind in a minimal model, plus a composed two-conv CRNN under BCE.
std::vector<GradCheckCase> gradient_check_suite(std::uint64_t seed, double step = 1e-4);

// |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
// dominating the report.
double relative_error(double analytic, double numeric, double floor = 1e-6);

}  // namespace seld::nn

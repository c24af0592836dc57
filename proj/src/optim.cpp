#include "seld/optim.hpp"

#include <algorithm>
#include <cmath>

#include "seld/errors.hpp"

namespace seld::optim {
namespace {

template <class T>
double clip_scale(std::span<const T> grads, double clip_norm) {
  if (!std::isfinite(clip_norm)) return 1.0;
  double sq = 0.0;
  for (const T g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  return norm > clip_norm ? clip_norm / norm : 1.0;
}

template <class T>
void check_sizes(std::span<T> params, std::span<const T> grads, const OptimState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer: parameter, gradient and state sizes differ");
  }
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "adamax"; }

OptimizerKind optimizer_from(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamax") return OptimizerKind::adamax;
  throw ConfigError("unknown optimizer '" + name + "'");
}

void to_json(nlohmann::json& j, const Hyperparameters& h) {
  j = {{"learning_rate", h.learning_rate}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"epsilon", h.epsilon}};
  if (std::isfinite(h.clip_norm)) j["clip_norm"] = h.clip_norm;
}

void from_json(const nlohmann::json& j, Hyperparameters& h) {
  h = Hyperparameters{};
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.beta1 = j.value("beta1", h.beta1);
  h.beta2 = j.value("beta2", h.beta2);
  h.epsilon = j.value("epsilon", h.epsilon);
  if (j.contains("clip_norm") && !j.at("clip_norm").is_null()) h.clip_norm = j.at("clip_norm").get<double>();
}

OptimState OptimState::fresh(OptimizerKind kind, std::size_t size, Hyperparameters hyper) {
  OptimState s;
  s.kind = kind;
  s.hyper = hyper;
  s.m.assign(size, 0.0);
  s.v.assign(size, 0.0);
  return s;
}

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, OptimState& state) {
  check_sizes(params, grads, state);
  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const double scale = clip_scale(grads, h.clip_norm);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = scale * static_cast<double>(grads[i]);
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) - h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon));
  }
}

template <class T>
void adamax_step(std::span<T> params, std::span<const T> grads, OptimState& state) {
  check_sizes(params, grads, state);
  const auto& h = state.hyper;
  ++state.step;
  const double rate = h.learning_rate / (1.0 - std::pow(h.beta1, static_cast<double>(state.step)));
  const double scale = clip_scale(grads, h.clip_norm);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = scale * static_cast<double>(grads[i]);
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = std::max(h.beta2 * state.v[i], std::abs(g));
    params[i] = static_cast<T>(static_cast<double>(params[i]) - rate * state.m[i] / (state.v[i] + h.epsilon));
  }
}

template <class T>
void step(std::span<T> params, std::span<const T> grads, OptimState& state) {
  if (state.kind == OptimizerKind::adam) {
    adam_step(params, grads, state);
  } else {
    adamax_step(params, grads, state);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, OptimState&);
template void adam_step<double>(std::span<double>, std::span<const double>, OptimState&);
template void adamax_step<float>(std::span<float>, std::span<const float>, OptimState&);
template void adamax_step<double>(std::span<double>, std::span<const double>, OptimState&);
template void step<float>(std::span<float>, std::span<const float>, OptimState&);
template void step<double>(std::span<double>, std::span<const double>, OptimState&);

}  // namespace seld::optim

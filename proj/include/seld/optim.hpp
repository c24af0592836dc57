#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace seld::optim {

enum class OptimizerKind { adam, adamax };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from(const std::string& name);

struct Hyperparameters {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-9;
  // Global L2 gradient-norm clip; infinite disables it.
  double clip_norm = std::numeric_limits<double>::infinity();

  bool operator==(const Hyperparameters&) const = default;
};

void to_json(nlohmann::json& j, const Hyperparameters& h);
void from_json(const nlohmann::json& j, Hyperparameters& h);

/// First moment m and second moment v (Adam) or infinity norm u (Adamax,
/// stored in `v`), plus the step counter.
struct OptimState {
  OptimizerKind kind = OptimizerKind::adam;
  Hyperparameters hyper;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  static OptimState fresh(OptimizerKind kind, std::size_t size, Hyperparameters hyper = {});
  bool operator==(const OptimState&) const = default;
};

template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, OptimState& state);

template <class T>
void adamax_step(std::span<T> params, std::span<const T> grads, OptimState& state);

// Dispatches on state.kind.
template <class T>
void step(std::span<T> params, std::span<const T> grads, OptimState& state);

}  // namespace seld::optim

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "clamp/ops.hpp"
#include "clamp/params.hpp"

// Adaptive multi-loss aggregation: softmax task priorities blended with
// uniform weights, applied to uncertainty-weighted task losses.

namespace clamp {

inline constexpr std::size_t kNumTasks = 4;
using TaskArray = std::array<double, kNumTasks>;

enum class PriorityMode { Ema, Frozen };

struct AmaConfig {
  double alpha = 0.5;
  double tau = 1.0;
  double decay = 0.9;
  PriorityMode priority_mode = PriorityMode::Ema;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ama: alpha must lie in [0, 1]");
    if (!(tau > 0.0)) throw ConfigError("ama: tau must be positive");
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("ama: decay must lie in (0, 1)");
  }
};

// Task order everywhere: CRF, CLS, GCL, WRA.
struct LossBundle {
  double crf = 0.0;
  double cls = 0.0;
  double gcl = 0.0;
  double wra = 0.0;

  TaskArray as_array() const { return {crf, cls, gcl, wra}; }
  bool operator==(const LossBundle&) const = default;
};

inline constexpr std::array<const char*, kNumTasks> kTaskNames = {"crf", "cls", "gcl", "wra"};

struct AmaState {
  AmaConfig config;
  Tensor rho;  // sigma_i = exp(rho_i), learnable
  TaskArray pi{};
  std::optional<TaskArray> initial_losses;

  static AmaState make(const AmaConfig& cfg, ParamSet& params) {
    cfg.validate();
    AmaState s;
    s.config = cfg;
    s.rho = params.constant("ama.rho", {kNumTasks}, 0.0);
    return s;
  }

  TaskArray sigma() const {
    TaskArray out{};
    for (std::size_t i = 0; i < kNumTasks; ++i) out[i] = std::exp(rho[i]);
    return out;
  }
};

// w_hat_i = (1 - alpha) / M + alpha * softmax(pi / tau)_i
inline TaskArray priority_weights(const TaskArray& pi, double alpha, double tau) {
  if (!(tau > 0.0)) throw ParameterError("priority_weights: tau must be positive");
  double mx = pi[0] / tau;
  for (double p : pi) mx = std::max(mx, p / tau);
  TaskArray w{};
  double z = 0.0;
  for (std::size_t i = 0; i < kNumTasks; ++i) z += (w[i] = std::exp(pi[i] / tau - mx));
  for (std::size_t i = 0; i < kNumTasks; ++i)
    w[i] = (1.0 - alpha) / static_cast<double>(kNumTasks) + alpha * (w[i] / z);
  return w;
}

inline TaskArray priority_weights(const AmaState& state) {
  return priority_weights(state.pi, state.config.alpha, state.config.tau);
}

// sum_i w_hat_i * (L_i / (2 sigma_i^2) + log sigma_i), sigma = exp(rho).
// `losses` is a length-4 tensor in task order. Tasks with active[i] == false
// contribute nothing (their rho receives no gradient).
inline Tensor aggregate_loss(const Tensor& losses, const AmaState& state,
                             const std::array<bool, kNumTasks>& active = {true, true, true, true}) {
  if (losses.size() != kNumTasks) throw DimensionError("aggregate_loss: expected 4 task losses");
  for (double v : losses.values())
    if (!std::isfinite(v)) throw DataError("aggregate_loss: non-finite task loss");
  const TaskArray w = priority_weights(state);
  TaskArray mask_w{};
  for (std::size_t i = 0; i < kNumTasks; ++i) mask_w[i] = active[i] ? w[i] : 0.0;
  const Tensor weights = Tensor::vector({mask_w.begin(), mask_w.end()});
  // 1 / (2 sigma^2) = 0.5 * exp(-2 rho)
  const Tensor precision = scale(exp(scale(state.rho, -2.0)), 0.5);
  const Tensor per_task = add(mul(losses, precision), state.rho);
  return sum(mul(weights, per_task));
}

// Plain sum used when adaptive aggregation is disabled.
inline Tensor fixed_sum_loss(const Tensor& losses) { return sum(losses); }

// EMA of loss ratios L_i / L_i(first call).
inline void update_priorities(AmaState& state, const LossBundle& bundle) {
  const TaskArray l = bundle.as_array();
  if (!state.initial_losses) state.initial_losses = l;
  if (state.config.priority_mode == PriorityMode::Frozen) return;
  constexpr double eps = 1e-8;
  const double decay = state.config.decay;
  for (std::size_t i = 0; i < kNumTasks; ++i) {
    state.pi[i] = decay * state.pi[i] + (1.0 - decay) * (l[i] / std::max((*state.initial_losses)[i], eps));
  }
}

}  // namespace clamp

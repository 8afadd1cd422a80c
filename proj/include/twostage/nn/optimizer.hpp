#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/network.hpp"

namespace twostage {

enum class Algorithm { sgd_momentum, adagrad, adam };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sgd_momentum: return "sgd";
    case Algorithm::adagrad: return "adagrad";
    case Algorithm::adam: return "adam";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "sgd" || name == "sgd-momentum") return Algorithm::sgd_momentum;
  if (name == "adagrad") return Algorithm::adagrad;
  if (name == "adam") return Algorithm::adam;
  throw ArgumentError("unknown optimizer '" + name + "'");
}

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::adagrad;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double min_learning_rate = 1e-7;
  double epsilon = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int patience = 10;       // entries without improvement before halving
  int stop_patience = 20;  // entries without improvement before stopping
};

struct OptimizerState {
  OptimizerConfig config;
  double learning_rate = 0.1;
  std::vector<DenseParams> first_moment;   // velocity (sgd) or m (adam)
  std::vector<DenseParams> second_moment;  // squared-gradient sum (adagrad) or v (adam)
  long step_count = 0;

  // Plateau bookkeeping for lr_schedule_update.
  std::size_t entries_seen = 0;
  double best = 0.0;
  int plateau_counter = 0;
  int stale_entries = 0;

  OptimizerState() = default;

  OptimizerState(const OptimizerConfig& cfg, const Network& net)
      : config(cfg), learning_rate(cfg.learning_rate) {
    if (!(cfg.learning_rate >= 0.0)) throw ArgumentError("learning rate must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ArgumentError("momentum must be in [0,1)");
    if (!(cfg.min_learning_rate > 0.0)) throw ArgumentError("minimum learning rate must be > 0");
    first_moment = net.params();
    for (auto& p : first_moment) {
      p.weight.setZero();
      p.bias.setZero();
    }
    second_moment = first_moment;
  }
};

namespace detail {

template <typename Param, typename Grad, typename M1, typename M2>
void update_block(Param& theta, const Grad& g, M1& m1, M2& m2, const OptimizerState& s) {
  const double lr = s.learning_rate;
  const auto& c = s.config;
  switch (c.algorithm) {
    case Algorithm::sgd_momentum:
      m1 = c.momentum * m1 + g;
      theta -= lr * m1;
      break;
    case Algorithm::adagrad:
      m2.array() += g.array().square();
      theta.array() -= lr * g.array() / (m2.array().sqrt() + c.epsilon);
      break;
    case Algorithm::adam: {
      m1 = c.beta1 * m1 + (1.0 - c.beta1) * g;
      m2.array() = c.beta2 * m2.array() + (1.0 - c.beta2) * g.array().square();
      const double t = static_cast<double>(s.step_count);
      const double bc1 = 1.0 - std::pow(c.beta1, t);
      const double bc2 = 1.0 - std::pow(c.beta2, t);
      theta.array() -= lr * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + c.epsilon);
      break;
    }
  }
}

}  // namespace detail

// One parameter update from the gradients currently held by `net`.
//   sgd:     v <- mu v + g;          theta <- theta - lr v
//   adagrad: a <- a + g^2;           theta <- theta - lr g / (sqrt(a) + eps)
//   adam:    bias-corrected moments, beta1 0.9 / beta2 0.999 by default
inline void optimizer_step(Network& net, OptimizerState& state) {
  auto& params = net.params();
  const auto& grads = net.grads();
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("optimizer state does not match network");
  }
  ++state.step_count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::update_block(params[i].weight, grads[i].weight, state.first_moment[i].weight,
                         state.second_moment[i].weight, state);
    detail::update_block(params[i].bias, grads[i].bias, state.first_moment[i].bias,
                         state.second_moment[i].bias, state);
    if (!params[i].weight.allFinite() || !params[i].bias.allFinite()) {
      throw NumericError("optimizer step produced non-finite parameters");
    }
  }
}

struct ScheduleDecision {
  bool stop = false;
  bool halved = false;
};

// Consumes history entries not yet seen by `state`. An entry improves when it
// strictly exceeds the best so far. After `patience` consecutive non-improving
// entries the rate halves (never below the minimum) and the counter restarts;
// `stop_patience` consecutive non-improving entries raise the stop flag.
inline ScheduleDecision lr_schedule_update(OptimizerState& state, std::span<const double> history) {
  ScheduleDecision d;
  const auto& c = state.config;
  for (std::size_t i = state.entries_seen; i < history.size(); ++i) {
    const double acc = history[i];
    if (i == 0 || acc > state.best) {
      state.best = acc;
      state.plateau_counter = 0;
      state.stale_entries = 0;
      continue;
    }
    ++state.plateau_counter;
    ++state.stale_entries;
    if (state.plateau_counter >= c.patience) {
      state.learning_rate = std::max(state.learning_rate * 0.5, c.min_learning_rate);
      state.plateau_counter = 0;
      d.halved = true;
    }
  }
  state.entries_seen = history.size();
  d.stop = state.stale_entries >= c.stop_patience;
  return d;
}

}  // namespace twostage

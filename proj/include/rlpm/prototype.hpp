#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "rlpm/backward.hpp"
#include "rlpm/layers.hpp"

namespace rlpm {

struct ZerosInit {};

struct GaussianInit {
  double sigma = 0.1;
  std::uint64_t seed = 0;
};

struct PrototypeConfig {
  double lambda = 0.0;
  std::size_t steps = 100;
  double step_size = 0.1;
  std::variant<ZerosInit, GaussianInit> init = ZerosInit{};
  std::size_t target_class = 0;
};

struct PrototypeResult {
  Tensor x;
  /// Objective before the first step, then after every step.
  std::vector<double> objective_trace;
};

inline constexpr int kMaxHalvings = 20;

/// log p_c(x) - lambda * ||x||^2, with log p_c the log softmax probability.
/// Writes the gradient into `grad` when given.
inline double prototype_objective(const NetworkGraph& net, const Tensor& x, std::size_t target,
                                  double lambda, Tensor* grad = nullptr) {
  ActivationTrace trace = forward_with_trace(net, x);
  const Tensor& z = logits(net, trace);
  double m = z[0];
  for (double v : z.data()) m = std::max(m, v);
  double total = 0.0;
  for (double v : z.data()) total += std::exp(v - m);
  const double log_p = z[target] - m - std::log(total);
  double norm2 = 0.0;
  for (double v : x.data()) norm2 += v * v;
  if (grad) {
    Tensor seed(z.shape());
    for (std::size_t k = 0; k < z.size(); ++k) seed[k] = -std::exp(z[k] - m) / total;
    seed[target] += 1.0;
    *grad = backpropagate(net, trace, seed);
    for (std::size_t i = 0; i < x.size(); ++i) (*grad)[i] -= 2.0 * lambda * x[i];
  }
  return log_p - lambda * norm2;
}

inline Tensor prototype_init(const NetworkGraph& net, const PrototypeConfig& cfg) {
  if (const auto* g = std::get_if<GaussianInit>(&cfg.init)) {
    std::mt19937_64 rng(g->seed);
    return layers::gaussian(net.input_shape(), g->sigma, rng);
  }
  return Tensor(net.input_shape());
}

/// Gradient ascent on the class objective. Each step starts at step_size and
/// halves (at most kMaxHalvings times) until the objective does not decrease;
/// if no trial qualifies the iterate stays put.
inline PrototypeResult activation_maximize(const NetworkGraph& net, const PrototypeConfig& cfg) {
  check_class_index(net, cfg.target_class);
  if (!(cfg.lambda >= 0.0)) throw InputError("lambda must be non-negative");
  if (!(cfg.step_size > 0.0)) throw InputError("step size must be positive");

  PrototypeResult res{prototype_init(net, cfg), {}};
  Tensor grad;
  double current = prototype_objective(net, res.x, cfg.target_class, cfg.lambda, &grad);
  if (!std::isfinite(current)) throw NumericsError("prototype objective is not finite at the initial point");
  res.objective_trace.push_back(current);

  Tensor trial(res.x.shape());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double a = cfg.step_size;
    for (int h = 0; h <= kMaxHalvings; ++h, a *= 0.5) {
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = res.x[i] + a * grad[i];
      double value;
      try {
        value = prototype_objective(net, trial, cfg.target_class, cfg.lambda);
      } catch (const NumericsError&) {
        continue;
      }
      if (std::isfinite(value) && value >= current) {
        res.x = trial;
        current = prototype_objective(net, res.x, cfg.target_class, cfg.lambda, &grad);
        break;
      }
    }
    res.objective_trace.push_back(current);
  }
  return res;
}

}  // namespace rlpm

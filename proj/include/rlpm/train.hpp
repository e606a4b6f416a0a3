#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "rlpm/backward.hpp"

namespace rlpm {

struct LabeledExample {
  Tensor input;
  std::size_t label = 0;
};

struct TrainResult {
  NetworkGraph net;
  double accuracy = 0.0;
  double final_loss = 0.0;
};

inline std::size_t predict(const NetworkGraph& net, const Tensor& input) {
  ActivationTrace trace = forward_with_trace(net, input);
  const Tensor& z = logits(net, trace);
  return static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) -
                                  z.data().begin());
}

inline double accuracy(const NetworkGraph& net, const std::vector<LabeledExample>& data) {
  if (data.empty()) throw InputError("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (const auto& ex : data) hits += predict(net, ex.input) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Per-example SGD on softmax cross-entropy. The visiting order is reshuffled
/// every epoch from `seed`. The input graph is left untouched.
inline TrainResult train_toy(const NetworkGraph& net, const std::vector<LabeledExample>& data,
                             std::size_t epochs, double lr, std::uint64_t seed = 0) {
  if (data.empty()) throw InputError("training set is empty");
  if (!(lr > 0.0)) throw InputError("learning rate must be positive");
  for (const auto& ex : data) check_class_index(net, ex.label);

  TrainResult result{net, 0.0, 0.0};
  NetworkGraph& model = result.net;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (std::size_t idx : order) {
      const LabeledExample& ex = data[idx];
      ActivationTrace trace = forward_with_trace(model, ex.input);
      Tensor p = class_probabilities(model, trace);
      loss -= std::log(std::max(p[ex.label], 1e-300));
      p[ex.label] -= 1.0;
      ParameterGrads grads;
      backpropagate(model, trace, p, &grads);
      for (std::size_t i = 0; i < model.size(); ++i) {
        if (grads.weights[i]) model.sgd_step(i, *grads.weights[i], *grads.bias[i], lr);
      }
    }
    result.final_loss = loss / static_cast<double>(data.size());
  }
  result.accuracy = accuracy(model, data);
  return result;
}

}  // namespace rlpm

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "rlpm/forward.hpp"
#include "rlpm/kernels.hpp"

namespace rlpm {

/// Parameter gradients aligned with the graph's layers; empty tensors for
/// parameter-free layers.
struct ParameterGrads {
  std::vector<std::optional<Tensor>> weights;
  std::vector<std::optional<Tensor>> bias;
};

namespace detail {

inline bool terminal_softmax(const NetworkGraph& net) {
  return net.layers().back().kind == LayerKind::Softmax;
}

}  // namespace detail

/// Reverse-mode pass. `grad_logits` is the gradient with respect to the
/// pre-softmax scores (see `logits`). Returns the gradient with respect to the
/// network input and optionally accumulates parameter gradients.
inline Tensor backpropagate(const NetworkGraph& net, const ActivationTrace& trace,
                            const Tensor& grad_logits, ParameterGrads* params = nullptr) {
  const std::size_t n = net.size();
  std::vector<std::optional<Tensor>> grad(n);
  std::optional<Tensor> grad_input;

  auto accumulate = [&](int src, Tensor g) {
    std::optional<Tensor>& slot = src < 0 ? grad_input : grad[static_cast<std::size_t>(src)];
    if (slot) {
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    } else {
      slot = std::move(g);
    }
  };

  std::size_t top = n;
  if (detail::terminal_softmax(net)) {
    top = n - 1;
    accumulate(net.input_indices(n - 1)[0], grad_logits.reshaped(net.input_shape_of(n - 1)));
  } else {
    grad[n - 1] = grad_logits.reshaped(net.output_shape());
  }

  if (params) {
    params->weights.assign(n, std::nullopt);
    params->bias.assign(n, std::nullopt);
  }

  for (std::size_t i = top; i-- > 0;) {
    if (!grad[i]) continue;
    const Tensor& g = *grad[i];
    const LayerSpec& l = net.layer(i);
    const LayerRecord& rec = trace[i];
    const auto& srcs = net.input_indices(i);
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2D:
      case LayerKind::BatchNormFolded: {
        const Tensor& x = rec.input();
        accumulate(srcs[0], kernels::linear_transpose(l, g, *l.weights, x.shape()));
        if (params) {
          Tensor dw(l.weights->shape());
          Tensor db(l.bias->shape());
          if (l.kind == LayerKind::Dense) {
            for (std::size_t j = 0; j < x.size(); ++j) {
              for (std::size_t k = 0; k < g.size(); ++k) dw[j * g.size() + k] = x[j] * g[k];
            }
            for (std::size_t k = 0; k < g.size(); ++k) db[k] = g[k];
          } else if (l.kind == LayerKind::Conv2D) {
            kernels::conv2d_parameter_grad(x, g, l.params, dw, db);
          } else {
            const std::size_t c = dw.size();
            for (std::size_t t = 0; t < x.size(); ++t) {
              dw[t % c] += x[t] * g[t];
              db[t % c] += g[t];
            }
          }
          params->weights[i] = std::move(dw);
          params->bias[i] = std::move(db);
        }
        break;
      }
      case LayerKind::ReLU: {
        const Tensor& pre = *rec.pre_activation;
        Tensor gx(g.shape());
        for (std::size_t t = 0; t < g.size(); ++t) gx[t] = pre[t] > 0.0 ? g[t] : 0.0;
        accumulate(srcs[0], std::move(gx));
        break;
      }
      case LayerKind::MaxPool2D:
      case LayerKind::AvgPool2D:
        accumulate(srcs[0], kernels::pool_transpose(l, rec.input(), g));
        break;
      case LayerKind::Flatten:
        accumulate(srcs[0], g.reshaped(rec.input().shape()));
        break;
      case LayerKind::Softmax: {
        const Tensor& y = *rec.output;
        const std::size_t c = y.shape().back();
        Tensor gx(g.shape());
        for (std::size_t base = 0; base < y.size(); base += c) {
          double dot = 0.0;
          for (std::size_t k = 0; k < c; ++k) dot += g[base + k] * y[base + k];
          for (std::size_t k = 0; k < c; ++k) gx[base + k] = y[base + k] * (g[base + k] - dot);
        }
        accumulate(srcs[0], std::move(gx));
        break;
      }
      case LayerKind::Add:
        accumulate(srcs[0], g);
        accumulate(srcs[1], g);
        break;
    }
  }
  if (!grad_input) return Tensor(net.input_shape());
  return std::move(*grad_input);
}

/// d(pre-softmax logit of class_index) / d(input).
inline Tensor gradient(const NetworkGraph& net, const Tensor& input, std::size_t class_index) {
  check_class_index(net, class_index);
  ActivationTrace trace = forward_with_trace(net, input);
  Tensor seed({net.output_classes()});
  seed[class_index] = 1.0;
  return backpropagate(net, trace, seed);
}

/// Which side of every ReLU kink and which max-pool winner a pass took.
inline std::vector<std::size_t> activation_pattern(const NetworkGraph& net,
                                                   const ActivationTrace& trace) {
  std::vector<std::size_t> pattern;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    if (l.kind == LayerKind::ReLU) {
      for (double v : trace[i].pre_activation->data()) pattern.push_back(v > 0.0 ? 1 : 0);
    } else if (l.kind == LayerKind::MaxPool2D) {
      const Tensor& x = trace[i].input();
      kernels::for_each_pool_window(l.params, x.shape(),
                                    [&](std::size_t, std::span<const std::size_t> taps) {
                                      pattern.push_back(kernels::pool_argmax(x, taps));
                                    });
    }
  }
  return pattern;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  /// Input coordinates whose central difference straddles a ReLU or
  /// max-pool switch; they are excluded from max_rel_error.
  std::vector<std::size_t> kinks;
};

/// Compares `gradient` with central differences of the target logit.
inline GradientCheck check_gradient(const NetworkGraph& net, const Tensor& input,
                                    std::size_t class_index, double step) {
  if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
  const Tensor analytic = gradient(net, input, class_index);
  const auto base_pattern = activation_pattern(net, forward_with_trace(net, input));

  GradientCheck result;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    ActivationTrace up = forward_with_trace(net, probe);
    probe[i] = orig - step;
    ActivationTrace down = forward_with_trace(net, probe);
    probe[i] = orig;
    if (activation_pattern(net, up) != base_pattern ||
        activation_pattern(net, down) != base_pattern) {
      result.kinks.push_back(i);
      continue;
    }
    const double numeric =
        (logits(net, up)[class_index] - logits(net, down)[class_index]) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
  }
  return result;
}

}  // namespace rlpm

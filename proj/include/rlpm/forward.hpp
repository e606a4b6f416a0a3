#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rlpm/errors.hpp"
#include "rlpm/graph.hpp"
#include "rlpm/kernels.hpp"
#include "rlpm/tensor.hpp"

namespace rlpm {

/// e^{z_j} / sum_t e^{z_t}, stabilized by subtracting max(z).
inline Tensor softmax(const Tensor& z) {
  if (z.rank() != 1) throw ShapeError("softmax expects a rank-1 tensor, got " + shape_string(z.shape()));
  if (z.size() < 2) throw ArityError("softmax needs at least 2 logits");
  if (!z.all_finite()) throw NumericsError("softmax input is not finite");
  double m = z[0];
  for (double v : z.data()) m = std::max(m, v);
  Tensor out(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    total += out[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) out[i] /= total;
  return out;
}

/// Softmax applied independently at every position along the last axis.
inline Tensor softmax_last_axis(const Tensor& z) {
  const std::size_t c = z.shape().back();
  Tensor out(z.shape());
  for (std::size_t base = 0; base < z.size(); base += c) {
    double m = z[base];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, z[base + k]);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      out[base + k] = std::exp(z[base + k] - m);
      total += out[base + k];
    }
    for (std::size_t k = 0; k < c; ++k) out[base + k] /= total;
  }
  return out;
}

using TensorPtr = std::shared_ptr<const Tensor>;

struct LayerRecord {
  std::string id;
  std::vector<TensorPtr> inputs;
  /// Value entering the nonlinearity: the input for ReLU/Softmax, the output
  /// for every other kind.
  TensorPtr pre_activation;
  TensorPtr output;

  const Tensor& input(std::size_t slot = 0) const { return *inputs.at(slot); }
};

/// Per-layer activations of one forward pass, ordered like the graph.
struct ActivationTrace {
  TensorPtr network_input;
  std::vector<LayerRecord> records;

  std::size_t size() const { return records.size(); }
  const LayerRecord& operator[](std::size_t i) const { return records.at(i); }
  const Tensor& output() const { return *records.back().output; }
};

namespace detail {

inline Tensor apply_layer(const LayerSpec& l, const std::vector<TensorPtr>& in) {
  const Tensor& x = *in[0];
  switch (l.kind) {
    case LayerKind::Dense:
    case LayerKind::Conv2D:
    case LayerKind::BatchNormFolded:
      return kernels::linear_apply(l, x, *l.weights, &*l.bias);
    case LayerKind::ReLU: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return y;
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      return kernels::pool(l, x);
    case LayerKind::Flatten:
      return x.reshaped({x.size()});
    case LayerKind::Softmax:
      return softmax_last_axis(x);
    case LayerKind::Add:
      return x + *in[1];
  }
  throw InputError("unknown layer kind");
}

}  // namespace detail

/// Runs the network and records every layer's activations.
inline ActivationTrace forward_with_trace(const NetworkGraph& net, const Tensor& input) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_string(input.shape()) + " does not match network '" +
                     net.name() + "' input " + shape_string(net.input_shape()));
  }
  if (!input.all_finite()) throw NumericsError("network input contains non-finite values");
  ActivationTrace trace;
  trace.network_input = std::make_shared<const Tensor>(input);
  trace.records.reserve(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    LayerRecord rec;
    rec.id = l.id;
    for (int src : net.input_indices(i)) {
      rec.inputs.push_back(src < 0 ? trace.network_input
                                   : trace.records[static_cast<std::size_t>(src)].output);
    }
    auto out = std::make_shared<const Tensor>(detail::apply_layer(l, rec.inputs));
    if (!out->all_finite()) {
      throw NumericsError("layer '" + l.id + "' produced non-finite values");
    }
    rec.output = out;
    rec.pre_activation =
        (l.kind == LayerKind::ReLU || l.kind == LayerKind::Softmax) ? rec.inputs[0] : out;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

inline Tensor forward(const NetworkGraph& net, const Tensor& input) {
  return forward_with_trace(net, input).output();
}

/// Pre-softmax scores: the input of a terminal Softmax layer, else the output.
inline const Tensor& logits(const NetworkGraph& net, const ActivationTrace& trace) {
  if (net.layers().back().kind == LayerKind::Softmax) return trace.records.back().input();
  return trace.output();
}

/// Class probabilities of a net, applying softmax when the net ends in logits.
inline Tensor class_probabilities(const NetworkGraph& net, const ActivationTrace& trace) {
  if (net.layers().back().kind == LayerKind::Softmax) return trace.output();
  return softmax(logits(net, trace).reshaped({trace.output().size()}));
}

inline Tensor class_probabilities(const NetworkGraph& net, const Tensor& input) {
  return class_probabilities(net, forward_with_trace(net, input));
}

inline void check_class_index(const NetworkGraph& net, std::size_t class_index) {
  if (net.output_shape().size() != 1) {
    throw ShapeError("network '" + net.name() + "' does not produce a class vector");
  }
  if (class_index >= net.output_classes()) {
    throw IndexError("class index " + std::to_string(class_index) + " out of range [0, " +
                     std::to_string(net.output_classes()) + ")");
  }
}

}  // namespace rlpm

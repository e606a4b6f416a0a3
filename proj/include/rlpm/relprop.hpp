#pragma once

// Layer-wise relevance propagation over a recorded forward pass.
//
// A linear layer maps x to z_k = sum_j x_j w_jk (+ b_k). Every rule here has
// the form  R_j = sum_k q_jk / (sum_j q_jk + eps*sign) * R_k  for some
// contribution q, so each one is computed as
//     s = R_out / stabilized(z'),   R_in = x' (.) (W'^T s)
// with rule-specific (x', W'):
//     LRP-0 / LRP-eps : x,  W      (z' includes the bias; bias keeps its share)
//     z+              : x,  max(W, 0)
//     w^2             : 1,  W^2
//     z^B             : x W - low W+ - high W-  (three transposed products)
// The transposed product is the conv/dense adjoint shared with backprop.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rlpm/backward.hpp"
#include "rlpm/forward.hpp"
#include "rlpm/kernels.hpp"

namespace rlpm {

enum class Rule { LRP0, LRPEps, ZPlus, ZB, WSquare, GradientTimesInput };

inline std::string_view to_string(Rule r) {
  switch (r) {
    case Rule::LRP0: return "lrp0";
    case Rule::LRPEps: return "lrp-eps";
    case Rule::ZPlus: return "zplus";
    case Rule::ZB: return "zb";
    case Rule::WSquare: return "wsquare";
    case Rule::GradientTimesInput: return "gxi";
  }
  return "?";
}

/// Box constraint on input values for z^B. One entry broadcasts over all
/// channels, otherwise one entry per channel (last axis).
struct InputBounds {
  std::vector<double> low;
  std::vector<double> high;
};

struct RuleConfig {
  Rule rule = Rule::LRP0;
  double epsilon = 0.0;
  std::optional<InputBounds> input_bounds;

  static RuleConfig lrp0() { return {Rule::LRP0, 0.0, std::nullopt}; }
  static RuleConfig lrp_eps(double eps) { return {Rule::LRPEps, eps, std::nullopt}; }
  static RuleConfig zplus() { return {Rule::ZPlus, 0.0, std::nullopt}; }
  static RuleConfig wsquare() { return {Rule::WSquare, 0.0, std::nullopt}; }
  static RuleConfig zb(double low, double high) {
    return {Rule::ZB, 0.0, InputBounds{{low}, {high}}};
  }
  static RuleConfig gradient_times_input() { return {Rule::GradientTimesInput, 0.0, std::nullopt}; }

  void validate() const {
    if (!(epsilon >= 0.0)) throw InputError("epsilon must be non-negative");
    if (rule == Rule::LRPEps && !(epsilon > 0.0)) throw InputError("lrp-eps needs epsilon > 0");
    if ((rule == Rule::ZB) != input_bounds.has_value()) {
      throw InputError("input bounds are required by, and only valid for, the zb rule");
    }
    if (input_bounds) {
      const auto& b = *input_bounds;
      if (b.low.empty() || b.low.size() != b.high.size()) {
        throw InputError("zb bounds need matching, non-empty low/high lists");
      }
      for (std::size_t i = 0; i < b.low.size(); ++i) {
        if (!(b.low[i] < b.high[i])) throw InputError("zb bounds need low < high");
      }
    }
  }
};

/// Deep Taylor: the input-facing layers use `input_rule` (z^B for bounded
/// pixels, w^2 for unbounded ones); every other linear layer uses z+.
struct DeepTaylorPreset {
  RuleConfig input_rule = RuleConfig::wsquare();

  static DeepTaylorPreset unbounded() { return {RuleConfig::wsquare()}; }
  static DeepTaylorPreset bounded(double low, double high) { return {RuleConfig::zb(low, high)}; }
};

using Method = std::variant<RuleConfig, DeepTaylorPreset>;

inline std::string method_name(const Method& m) {
  if (const auto* p = std::get_if<DeepTaylorPreset>(&m)) {
    return "deep-taylor(" + std::string(to_string(p->input_rule.rule)) + ")";
  }
  return std::string(to_string(std::get<RuleConfig>(m).rule));
}

struct RelevanceMap {
  Tensor values;
  double start_value = 0.0;
  Method method;
  std::size_t target_class = 0;
};

/// Relevance at every layer output plus the input, from one backward pass.
struct RelevanceTrace {
  std::vector<std::optional<Tensor>> at_output;
  Tensor at_input;
  double start_value = 0.0;
};

namespace relprop_detail {

inline double stabilize(double z, double eps) { return z + eps * (z >= 0.0 ? 1.0 : -1.0); }

inline Tensor divide(const Tensor& r, const Tensor& z, double eps) {
  Tensor s(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = stabilize(z[i], eps);
    s[i] = d == 0.0 ? 0.0 : r[i] / d;
  }
  return s;
}

inline Tensor map_weights(const Tensor& w, double (*fn)(double)) {
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = fn(w[i]);
  return out;
}

inline double pos(double v) { return v > 0.0 ? v : 0.0; }
inline double neg(double v) { return v < 0.0 ? v : 0.0; }
inline double sq(double v) { return v * v; }

inline Tensor bound_tensor(const std::vector<double>& per_channel, const Shape& shape) {
  Tensor t(shape);
  const std::size_t c = shape.back();
  if (per_channel.size() != 1 && per_channel.size() != c) {
    throw ShapeError("zb bounds list " + std::to_string(per_channel.size()) +
                     " entries for " + std::to_string(c) + " channels");
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = per_channel.size() == 1 ? per_channel[0] : per_channel[i % c];
  }
  return t;
}

}  // namespace relprop_detail

/// One relevance step through a Dense, Conv2D or BatchNormFolded layer.
/// `x` is the layer's recorded input; zero denominators contribute nothing.
inline Tensor step_linear(const LayerSpec& layer, const Tensor& x, const Tensor& r_out,
                          const RuleConfig& cfg) {
  namespace d = relprop_detail;
  if (!kernels::is_linear(layer.kind)) {
    throw UnsupportedRuleError("layer '" + layer.id + "' is not a linear layer");
  }
  cfg.validate();
  const Tensor& w = *layer.weights;
  switch (cfg.rule) {
    case Rule::LRP0:
    case Rule::LRPEps: {
      Tensor z = kernels::linear_apply(layer, x, w, &*layer.bias);
      if (z.shape() != r_out.shape()) throw ShapeError("relevance shape mismatch at '" + layer.id + "'");
      Tensor c = kernels::linear_transpose(layer, d::divide(r_out, z, cfg.epsilon), w, x.shape());
      return hadamard(x, c);
    }
    case Rule::ZPlus: {
      Tensor wp = d::map_weights(w, d::pos);
      Tensor z = kernels::linear_apply(layer, x, wp, nullptr);
      if (z.shape() != r_out.shape()) throw ShapeError("relevance shape mismatch at '" + layer.id + "'");
      Tensor c = kernels::linear_transpose(layer, d::divide(r_out, z, cfg.epsilon), wp, x.shape());
      return hadamard(x, c);
    }
    case Rule::WSquare: {
      Tensor w2 = d::map_weights(w, d::sq);
      Tensor z = kernels::linear_apply(layer, Tensor(x.shape(), 1.0), w2, nullptr);
      if (z.shape() != r_out.shape()) throw ShapeError("relevance shape mismatch at '" + layer.id + "'");
      return kernels::linear_transpose(layer, d::divide(r_out, z, cfg.epsilon), w2, x.shape());
    }
    case Rule::ZB: {
      Tensor wp = d::map_weights(w, d::pos);
      Tensor wn = d::map_weights(w, d::neg);
      Tensor lo = d::bound_tensor(cfg.input_bounds->low, x.shape());
      Tensor hi = d::bound_tensor(cfg.input_bounds->high, x.shape());
      Tensor z = kernels::linear_apply(layer, x, w, nullptr);
      Tensor zl = kernels::linear_apply(layer, lo, wp, nullptr);
      Tensor zh = kernels::linear_apply(layer, hi, wn, nullptr);
      if (z.shape() != r_out.shape()) throw ShapeError("relevance shape mismatch at '" + layer.id + "'");
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] - zl[i] - zh[i];
      Tensor s = d::divide(r_out, z, cfg.epsilon);
      Tensor cx = kernels::linear_transpose(layer, s, w, x.shape());
      Tensor cl = kernels::linear_transpose(layer, s, wp, x.shape());
      Tensor ch = kernels::linear_transpose(layer, s, wn, x.shape());
      Tensor r(x.shape());
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = x[i] * cx[i] - lo[i] * cl[i] - hi[i] * ch[i];
      return r;
    }
    case Rule::GradientTimesInput:
      break;
  }
  throw UnsupportedRuleError("rule " + std::string(to_string(cfg.rule)) +
                             " has no layer-local form (layer '" + layer.id + "')");
}

/// Dense layer with weights [in, out] and no bias.
inline Tensor step_dense(const Tensor& x, const Tensor& w, const Tensor& r_out, const RuleConfig& cfg) {
  LayerSpec l;
  l.id = "dense";
  l.kind = LayerKind::Dense;
  l.params.units = w.dim(1);
  l.weights = w;
  l.bias = Tensor({w.dim(1)});
  return step_linear(l, x, r_out, cfg);
}

/// Max-pool: each output's relevance goes to its argmax (first in row-major
/// order on ties). Avg-pool: split evenly over the window.
inline Tensor step_pool(const LayerSpec& layer, const Tensor& x, const Tensor& r_out) {
  if (layer.kind != LayerKind::MaxPool2D && layer.kind != LayerKind::AvgPool2D) {
    throw UnsupportedRuleError("layer '" + layer.id + "' is not a pooling layer");
  }
  return kernels::pool_transpose(layer, x, r_out);
}

inline constexpr double kAddEpsilon = 1e-9;

/// Residual merge: relevance is split in proportion to each branch's share.
inline std::pair<Tensor, Tensor> step_add(const Tensor& a, const Tensor& b, const Tensor& r_out) {
  if (a.shape() != b.shape() || a.shape() != r_out.shape()) {
    throw ShapeError("add relevance: branch shapes differ");
  }
  Tensor ra(a.shape()), rb(b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = relprop_detail::stabilize(a[i] + b[i], kAddEpsilon);
    ra[i] = a[i] / d * r_out[i];
    rb[i] = b[i] / d * r_out[i];
  }
  return {std::move(ra), std::move(rb)};
}

/// Linear layers that see the input before any other linear layer.
inline std::vector<bool> input_facing_layers(const NetworkGraph& net) {
  std::vector<bool> upstream(net.size(), false), facing(net.size(), false);
  for (std::size_t i = 0; i < net.size(); ++i) {
    bool seen = false;
    for (int s : net.input_indices(i)) seen = seen || (s >= 0 && upstream[static_cast<std::size_t>(s)]);
    const bool linear = kernels::is_linear(net.layer(i).kind);
    facing[i] = linear && !seen;
    upstream[i] = linear || seen;
  }
  return facing;
}

namespace relprop_detail {

inline RuleConfig rule_for_layer(const Method& method, bool input_facing) {
  if (const auto* p = std::get_if<DeepTaylorPreset>(&method)) {
    return input_facing ? p->input_rule : RuleConfig::zplus();
  }
  const RuleConfig& cfg = std::get<RuleConfig>(method);
  if (cfg.rule == Rule::ZB || cfg.rule == Rule::WSquare) {
    // Input-only rules: applied at the input-facing layers, z+ above them.
    return input_facing ? cfg : RuleConfig::zplus();
  }
  return cfg;
}

inline void validate_method(const Method& method) {
  if (const auto* p = std::get_if<DeepTaylorPreset>(&method)) {
    p->input_rule.validate();
    if (p->input_rule.rule != Rule::ZB && p->input_rule.rule != Rule::WSquare) {
      throw InputError("deep taylor input rule must be zb or wsquare");
    }
  } else {
    std::get<RuleConfig>(method).validate();
  }
}

}  // namespace relprop_detail

/// Layer-by-layer backward relevance pass; `start_scale` multiplies the
/// injected logit.
inline RelevanceTrace propagate_relevance(const NetworkGraph& net, const ActivationTrace& trace,
                                          std::size_t target_class, const Method& method,
                                          double start_scale = 1.0) {
  relprop_detail::validate_method(method);
  check_class_index(net, target_class);
  const std::size_t n = net.size();
  const auto facing = input_facing_layers(net);

  RelevanceTrace out;
  out.at_output.assign(n, std::nullopt);
  std::optional<Tensor> at_input;

  auto accumulate = [&](int src, Tensor r) {
    std::optional<Tensor>& slot = src < 0 ? at_input : out.at_output[static_cast<std::size_t>(src)];
    if (slot) {
      for (std::size_t i = 0; i < r.size(); ++i) (*slot)[i] += r[i];
    } else {
      slot = std::move(r);
    }
  };

  const Tensor& z = logits(net, trace);
  out.start_value = z[target_class] * start_scale;
  Tensor seed(z.shape());
  seed[target_class] = out.start_value;

  std::size_t top = n;
  if (net.layers().back().kind == LayerKind::Softmax) {
    top = n - 1;
    accumulate(net.input_indices(n - 1)[0], std::move(seed));
  } else {
    out.at_output[n - 1] = std::move(seed);
  }

  for (std::size_t i = top; i-- > 0;) {
    if (!out.at_output[i]) continue;
    const Tensor r = *out.at_output[i];
    const LayerSpec& l = net.layer(i);
    const LayerRecord& rec = trace[i];
    const auto& srcs = net.input_indices(i);
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2D:
      case LayerKind::BatchNormFolded:
        accumulate(srcs[0],
                   step_linear(l, rec.input(), r, relprop_detail::rule_for_layer(method, facing[i])));
        break;
      case LayerKind::ReLU: {
        Tensor g(r.shape());
        const Tensor& y = *rec.output;
        for (std::size_t t = 0; t < r.size(); ++t) g[t] = y[t] > 0.0 ? r[t] : 0.0;
        accumulate(srcs[0], std::move(g));
        break;
      }
      case LayerKind::MaxPool2D:
      case LayerKind::AvgPool2D:
        accumulate(srcs[0], step_pool(l, rec.input(), r));
        break;
      case LayerKind::Flatten:
        accumulate(srcs[0], r.reshaped(rec.input().shape()));
        break;
      case LayerKind::Add: {
        auto [ra, rb] = step_add(rec.input(0), rec.input(1), r);
        accumulate(srcs[0], std::move(ra));
        accumulate(srcs[1], std::move(rb));
        break;
      }
      case LayerKind::Softmax:
        throw UnsupportedRuleError("layer '" + l.id + "': softmax is only supported as the final layer");
    }
  }
  out.at_input = at_input ? std::move(*at_input) : Tensor(net.input_shape());
  return out;
}

/// input (.) d logit_c / d input
inline RelevanceMap gradient_times_input(const NetworkGraph& net, const Tensor& input,
                                         std::size_t target_class) {
  check_class_index(net, target_class);
  ActivationTrace trace = forward_with_trace(net, input);
  Tensor seed({net.output_classes()});
  seed[target_class] = 1.0;
  Tensor g = backpropagate(net, trace, seed);
  return {hadamard(input, g), logits(net, trace)[target_class],
          RuleConfig::gradient_times_input(), target_class};
}

/// Relevance of every input value for `target_class`, starting from its
/// pre-softmax logit.
inline RelevanceMap explain(const NetworkGraph& net, const Tensor& input, std::size_t target_class,
                            const Method& method) {
  if (const auto* cfg = std::get_if<RuleConfig>(&method);
      cfg && cfg->rule == Rule::GradientTimesInput) {
    return gradient_times_input(net, input, target_class);
  }
  ActivationTrace trace = forward_with_trace(net, input);
  RelevanceTrace rt = propagate_relevance(net, trace, target_class, method);
  if (!rt.at_input.all_finite()) throw NumericsError("relevance is not finite");
  return {std::move(rt.at_input), rt.start_value, method, target_class};
}

struct ConservationReport {
  double sum_in = 0.0;
  double start_value = 0.0;
  double leak = 0.0;
};

/// leak = (start - sum R) / max(|start|, 1e-12)
inline ConservationReport conservation_report(const RelevanceMap& map) {
  ConservationReport r;
  r.sum_in = map.values.sum();
  r.start_value = map.start_value;
  r.leak = (r.start_value - r.sum_in) / std::max(std::abs(r.start_value), 1e-12);
  return r;
}

}  // namespace rlpm

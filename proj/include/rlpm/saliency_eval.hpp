#pragma once

// Pixel-flipping evaluation: remove the most relevant pixels first and watch
// the target-class probability decay. A better heatmap drops the score sooner,
// so lower area under the curve is better.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "rlpm/parallel.hpp"
#include "rlpm/relprop.hpp"

namespace rlpm {

enum class FlipPolicy { Zero, ImageMean };

inline std::string_view to_string(FlipPolicy p) { return p == FlipPolicy::Zero ? "zero" : "mean"; }

inline constexpr double kDefaultBatchFraction = 0.01;

struct FlipCurve {
  std::vector<double> fractions;
  std::vector<double> scores;
  double auc = 0.0;
  FlipPolicy policy = FlipPolicy::Zero;
  double batch_fraction = kDefaultBatchFraction;
};

/// Trapezoidal area under a piecewise-linear curve.
inline double auc(std::span<const double> fractions, std::span<const double> scores) {
  if (fractions.size() != scores.size()) throw InputError("auc: fractions and scores differ in length");
  if (fractions.size() < 2) throw InputError("auc: need at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    if (!(fractions[i] > fractions[i - 1])) throw InputError("auc: fractions must be strictly increasing");
    area += 0.5 * (fractions[i] - fractions[i - 1]) * (scores[i] + scores[i - 1]);
  }
  return area;
}

/// A "pixel" is a spatial position of a rank-3 (row, col, channel) input,
/// with relevance summed over channels; for other ranks each element is one.
struct PixelLayout {
  std::size_t pixels = 0;
  std::size_t channels = 1;
};

inline PixelLayout pixel_layout(const Shape& shape) {
  if (shape.size() == 3) return {shape[0] * shape[1], shape[2]};
  return {shape_size(shape), 1};
}

inline double target_probability(const NetworkGraph& net, const Tensor& x, std::size_t target) {
  return class_probabilities(net, x)[target];
}

/// Flips pixels in descending relevance order (row-major on ties) in batches
/// of ceil(batch_fraction * P), recording the target probability after each.
inline FlipCurve pixel_flip_curve(const NetworkGraph& net, const Tensor& input, const Tensor& relevance,
                                  std::size_t target_class, FlipPolicy policy = FlipPolicy::Zero,
                                  double batch_fraction = kDefaultBatchFraction) {
  if (relevance.shape() != input.shape()) {
    throw ShapeError("relevance map " + shape_string(relevance.shape()) + " does not match input " +
                     shape_string(input.shape()));
  }
  if (!(batch_fraction > 0.0 && batch_fraction <= 1.0)) {
    throw InputError("batch fraction must lie in (0, 1]");
  }
  check_class_index(net, target_class);
  const PixelLayout lay = pixel_layout(input.shape());

  std::vector<double> score(lay.pixels, 0.0);
  for (std::size_t i = 0; i < relevance.size(); ++i) score[i / lay.channels] += relevance[i];
  std::vector<std::size_t> order(lay.pixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  std::vector<double> fill(lay.channels, 0.0);
  if (policy == FlipPolicy::ImageMean) {
    for (std::size_t i = 0; i < input.size(); ++i) fill[i % lay.channels] += input[i];
    for (double& f : fill) f /= static_cast<double>(lay.pixels);
  }

  const auto batch = static_cast<std::size_t>(
      std::ceil(batch_fraction * static_cast<double>(lay.pixels) - 1e-12));
  const std::size_t step = std::max<std::size_t>(batch, 1);

  FlipCurve curve;
  curve.policy = policy;
  curve.batch_fraction = batch_fraction;
  Tensor x = input;
  curve.fractions.push_back(0.0);
  curve.scores.push_back(target_probability(net, x, target_class));
  std::size_t flipped = 0;
  while (flipped < lay.pixels) {
    const std::size_t end = std::min(lay.pixels, flipped + step);
    for (; flipped < end; ++flipped) {
      const std::size_t p = order[flipped];
      for (std::size_t c = 0; c < lay.channels; ++c) x[p * lay.channels + c] = fill[c];
    }
    curve.fractions.push_back(static_cast<double>(flipped) / static_cast<double>(lay.pixels));
    curve.scores.push_back(target_probability(net, x, target_class));
  }
  curve.auc = auc(curve.fractions, curve.scores);
  return curve;
}

inline FlipCurve pixel_flip_curve(const NetworkGraph& net, const Tensor& input, const RelevanceMap& map,
                                  FlipPolicy policy = FlipPolicy::Zero,
                                  double batch_fraction = kDefaultBatchFraction) {
  return pixel_flip_curve(net, input, map.values, map.target_class, policy, batch_fraction);
}

/// Uniform random relevance, seeded per image.
struct RandomBaseline {};

struct AttributionMethod {
  std::string name;
  std::variant<Method, RandomBaseline> how;

  static AttributionMethod random() { return {"random", RandomBaseline{}}; }
  static AttributionMethod of(Method m) { return {method_name(m), std::move(m)}; }
};

inline Tensor random_relevance(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

struct MethodSummary {
  std::string name;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  std::vector<double> aucs;
};

struct CompareOptions {
  FlipPolicy policy = FlipPolicy::Zero;
  double batch_fraction = kDefaultBatchFraction;
  std::uint64_t seed = 0;
  /// Class to explain for every image; the predicted class when unset.
  std::optional<std::size_t> target_class;
  std::size_t threads = 0;
};

/// Mean / population std of per-image AUCs for each method. Image i's random
/// baseline uses seed + i, so results do not depend on scheduling.
inline std::vector<MethodSummary> compare_methods(const NetworkGraph& net, const std::vector<Tensor>& inputs,
                                                  const std::vector<AttributionMethod>& methods,
                                                  const CompareOptions& opt = {}) {
  if (inputs.empty()) throw InputError("compare_methods needs at least one input");
  std::vector<MethodSummary> out(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    out[m].name = methods[m].name;
    out[m].aucs.assign(inputs.size(), 0.0);
  }
  parallel_for(inputs.size(), opt.threads, [&](std::size_t i) {
    const Tensor& x = inputs[i];
    ActivationTrace trace = forward_with_trace(net, x);
    std::size_t target = 0;
    if (opt.target_class) {
      target = *opt.target_class;
    } else {
      const Tensor& z = logits(net, trace);
      target = static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) -
                                        z.data().begin());
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      Tensor rel = std::holds_alternative<RandomBaseline>(methods[m].how)
                       ? random_relevance(x.shape(), opt.seed + i)
                       : explain(net, x, target, std::get<Method>(methods[m].how)).values;
      out[m].aucs[i] = pixel_flip_curve(net, x, rel, target, opt.policy, opt.batch_fraction).auc;
    }
  });
  for (auto& s : out) {
    const double n = static_cast<double>(s.aucs.size());
    double sum = 0.0;
    for (double a : s.aucs) sum += a;
    s.mean_auc = sum / n;
    double var = 0.0;
    for (double a : s.aucs) var += (a - s.mean_auc) * (a - s.mean_auc);
    s.std_auc = std::sqrt(var / n);
  }
  return out;
}

}  // namespace rlpm

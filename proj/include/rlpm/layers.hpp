#pragma once

// Convenience constructors for LayerSpec plus seeded weight initialization.

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "rlpm/graph.hpp"

namespace rlpm::layers {

inline LayerSpec dense(std::string id, Tensor weights, Tensor bias, std::vector<std::string> inputs = {}) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Dense;
  l.params.units = weights.rank() == 2 ? weights.dim(1) : 0;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  l.inputs = std::move(inputs);
  return l;
}

inline LayerSpec conv2d(std::string id, Tensor weights, Tensor bias, std::size_t stride = 1,
                        Padding padding = Padding::Valid, std::vector<std::string> inputs = {}) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Conv2D;
  if (weights.rank() == 4) {
    l.params.kernel_h = weights.dim(0);
    l.params.kernel_w = weights.dim(1);
    l.params.in_channels = weights.dim(2);
    l.params.out_channels = weights.dim(3);
  }
  l.params.stride = stride;
  l.params.padding = padding;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  l.inputs = std::move(inputs);
  return l;
}

inline LayerSpec simple(std::string id, LayerKind kind, std::vector<std::string> inputs = {}) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = kind;
  l.inputs = std::move(inputs);
  return l;
}

inline LayerSpec relu(std::string id, std::vector<std::string> inputs = {}) {
  return simple(std::move(id), LayerKind::ReLU, std::move(inputs));
}
inline LayerSpec flatten(std::string id, std::vector<std::string> inputs = {}) {
  return simple(std::move(id), LayerKind::Flatten, std::move(inputs));
}
inline LayerSpec softmax(std::string id, std::vector<std::string> inputs = {}) {
  return simple(std::move(id), LayerKind::Softmax, std::move(inputs));
}
inline LayerSpec add(std::string id, std::string a, std::string b) {
  return simple(std::move(id), LayerKind::Add, {std::move(a), std::move(b)});
}

inline LayerSpec pool(std::string id, LayerKind kind, std::size_t window_h, std::size_t window_w,
                      std::size_t stride, Padding padding = Padding::Valid,
                      std::vector<std::string> inputs = {}) {
  LayerSpec l = simple(std::move(id), kind, std::move(inputs));
  l.params.kernel_h = window_h;
  l.params.kernel_w = window_w;
  l.params.stride = stride;
  l.params.padding = padding;
  return l;
}

inline LayerSpec max_pool(std::string id, std::size_t window, std::vector<std::string> inputs = {}) {
  return pool(std::move(id), LayerKind::MaxPool2D, window, window, window, Padding::Valid,
              std::move(inputs));
}

inline LayerSpec avg_pool(std::string id, std::size_t window, std::vector<std::string> inputs = {}) {
  return pool(std::move(id), LayerKind::AvgPool2D, window, window, window, Padding::Valid,
              std::move(inputs));
}

inline LayerSpec batch_norm(std::string id, Tensor scale, Tensor shift,
                            std::vector<std::string> inputs = {}) {
  LayerSpec l = simple(std::move(id), LayerKind::BatchNormFolded, std::move(inputs));
  l.weights = std::move(scale);
  l.bias = std::move(shift);
  return l;
}

/// Gaussian tensor with the given standard deviation.
template <typename Rng>
Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// He-initialized dense layer with zero bias.
template <typename Rng>
LayerSpec he_dense(std::string id, std::size_t in, std::size_t out, Rng& rng,
                   std::vector<std::string> inputs = {}) {
  return dense(std::move(id), gaussian({in, out}, std::sqrt(2.0 / static_cast<double>(in)), rng),
               Tensor({out}), std::move(inputs));
}

/// He-initialized conv layer with zero bias.
template <typename Rng>
LayerSpec he_conv2d(std::string id, std::size_t kh, std::size_t kw, std::size_t in_c,
                    std::size_t out_c, Rng& rng, std::size_t stride = 1,
                    Padding padding = Padding::Valid, std::vector<std::string> inputs = {}) {
  const double fan_in = static_cast<double>(kh * kw * in_c);
  return conv2d(std::move(id), gaussian({kh, kw, in_c, out_c}, std::sqrt(2.0 / fan_in), rng),
                Tensor({out_c}), stride, padding, std::move(inputs));
}

}  // namespace rlpm::layers

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rlpm/errors.hpp"
#include "rlpm/layers.hpp"

namespace rlpm {

/// A residual stage written [L-M-N] x K: K bottleneck units of 1x1 (L),
/// 3x3 (M) and 1x1 (N) convolutions, each bridged by a shortcut.
struct BlockSpec {
  std::size_t l = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t repeats = 1;
  /// First conv of the first unit uses stride 2 (replacing a 2x2 pool).
  bool reduce_entry = false;
};

struct BlockOptions {
  std::string prefix = "block";
  /// Id of the layer feeding the block ("input" for the graph input).
  std::string input_id = std::string(kGraphInputId);
  std::uint64_t seed = 0;
};

/// Expands a BlockSpec into layers. Weights are He-initialized from
/// `options.seed`; folded norms start as identity (scale 1, shift 0). Each
/// unit ends in Add followed by ReLU. The shortcut is a strided 1x1
/// projection (plus folded norm) when the channel count or resolution
/// changes, otherwise identity.
inline std::vector<LayerSpec> build_resnet_block(const BlockSpec& spec, std::size_t in_channels,
                                                 const BlockOptions& options = {}) {
  if (in_channels == 0) throw InputError("in_channels must be at least 1");
  if (spec.l == 0 || spec.m == 0 || spec.n == 0 || spec.repeats == 0) {
    throw InputError("block depths and repeat count must be positive");
  }
  std::mt19937_64 rng(options.seed);
  std::vector<LayerSpec> out;
  std::string prev = options.input_id;
  std::size_t channels = in_channels;

  auto norm = [&](const std::string& id, std::size_t c, const std::string& src) {
    out.push_back(layers::batch_norm(id, Tensor({c}, 1.0), Tensor({c}), {src}));
  };

  for (std::size_t k = 0; k < spec.repeats; ++k) {
    const std::string u = options.prefix + "_u" + std::to_string(k + 1);
    const std::size_t stride = (k == 0 && spec.reduce_entry) ? 2 : 1;

    out.push_back(layers::he_conv2d(u + "_conv1", 1, 1, channels, spec.l, rng, stride,
                                    Padding::Valid, {prev}));
    norm(u + "_bn1", spec.l, u + "_conv1");
    out.push_back(layers::relu(u + "_relu1", {u + "_bn1"}));
    out.push_back(layers::he_conv2d(u + "_conv2", 3, 3, spec.l, spec.m, rng, 1, Padding::Same,
                                    {u + "_relu1"}));
    norm(u + "_bn2", spec.m, u + "_conv2");
    out.push_back(layers::relu(u + "_relu2", {u + "_bn2"}));
    out.push_back(layers::he_conv2d(u + "_conv3", 1, 1, spec.m, spec.n, rng, 1, Padding::Valid,
                                    {u + "_relu2"}));
    norm(u + "_bn3", spec.n, u + "_conv3");

    std::string shortcut = prev;
    if (channels != spec.n || stride != 1) {
      out.push_back(layers::he_conv2d(u + "_proj", 1, 1, channels, spec.n, rng, stride,
                                      Padding::Valid, {prev}));
      norm(u + "_proj_bn", spec.n, u + "_proj");
      shortcut = u + "_proj_bn";
    }
    out.push_back(layers::add(u + "_add", u + "_bn3", shortcut));
    out.push_back(layers::relu(u + "_out", {u + "_add"}));
    prev = u + "_out";
    channels = spec.n;
  }
  return out;
}

}  // namespace rlpm

#pragma once

// Patch classifier f -> fully convolutional f_conv -> whole-image classifier
// h = g o f. Flatten+Dense heads become convolutions whose kernel spans the
// incoming feature map, so f_conv slides f over a larger image with the same
// parameters and emits a (u, v, c) grid of patch-class probabilities.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlpm/forward.hpp"
#include "rlpm/layers.hpp"

namespace rlpm {

inline constexpr std::size_t kPatchClasses = 5;
inline constexpr std::size_t kWholeImageClasses = 3;

/// A net mapping one p x q patch to 5 softmax class probabilities, either as
/// a vector or (for all-convolutional nets) as a 1 x 1 x 5 map.
class PatchClassifier {
 public:
  explicit PatchClassifier(NetworkGraph net) : net_(std::move(net)) {
    if (net_.input_shape().size() != 3) throw ConversionError("patch classifier input must be (rows, cols, channels)");
    if (net_.output_shape() != Shape{kPatchClasses} && net_.output_shape() != Shape{1, 1, kPatchClasses}) {
      throw ConversionError("patch classifier must output " + std::to_string(kPatchClasses) + " classes, got " +
                            shape_string(net_.output_shape()));
    }
    if (net_.layers().back().kind != LayerKind::Softmax) {
      throw ConversionError("patch classifier must end in a softmax layer");
    }
    for (const LayerSpec& l : net_.layers()) {
      if (l.kind == LayerKind::Add) throw ConversionError("layer '" + l.id + "': residual merges are not convertible");
      if ((l.kind == LayerKind::Conv2D || l.kind == LayerKind::MaxPool2D || l.kind == LayerKind::AvgPool2D) &&
          l.params.padding != Padding::Valid) {
        throw ConversionError("layer '" + l.id + "': only valid padding keeps patch and whole-image outputs equal");
      }
    }
  }

  const NetworkGraph& net() const { return net_; }
  std::size_t patch_rows() const { return net_.input_shape()[0]; }
  std::size_t patch_cols() const { return net_.input_shape()[1]; }

 private:
  NetworkGraph net_;
};

/// Rewrites every Flatten+Dense pair (and the Dense layers stacked on it) as
/// convolutions. On a patch-sized input the result equals the original up to
/// a reshape of the output to (1, 1, c). A net without Flatten layers is
/// returned as is.
inline NetworkGraph dense_to_conv(const PatchClassifier& patch) {
  const NetworkGraph& net = patch.net();
  if (net.output_shape().size() == 3) return net;
  // For each rank-1 output of the original graph: the spatial shape it was
  // flattened from, which is what the converted graph keeps.
  std::vector<std::optional<Shape>> flat_from(net.size());
  std::unordered_map<std::string, std::string> rename;
  std::vector<LayerSpec> out;

  auto source_flat = [&](std::size_t i) -> std::optional<Shape> {
    int s = net.input_indices(i)[0];
    return s < 0 ? std::nullopt : flat_from[static_cast<std::size_t>(s)];
  };

  for (std::size_t i = 0; i < net.size(); ++i) {
    LayerSpec l = net.layer(i);
    for (auto& in : l.inputs) {
      if (auto it = rename.find(in); it != rename.end()) in = it->second;
    }
    const Shape& in_shape = net.input_shape_of(i);
    switch (l.kind) {
      case LayerKind::Flatten:
        flat_from[i] = in_shape.size() == 3 ? std::optional<Shape>(in_shape) : source_flat(i);
        rename[l.id] = l.inputs[0];
        continue;
      case LayerKind::Dense: {
        auto spatial = source_flat(i);
        if (!spatial) throw ConversionError("dense layer '" + l.id + "' is not preceded by a flatten");
        const Shape& s = *spatial;
        const std::size_t units = l.params.units;
        LayerSpec conv = layers::conv2d(l.id, l.weights->reshaped({s[0], s[1], s[2], units}), *l.bias, 1,
                                        Padding::Valid, l.inputs);
        flat_from[i] = Shape{1, 1, units};
        out.push_back(std::move(conv));
        continue;
      }
      case LayerKind::ReLU:
      case LayerKind::Softmax:
        flat_from[i] = source_flat(i);
        break;
      case LayerKind::BatchNormFolded:
        flat_from[i] = source_flat(i);
        if (flat_from[i] && ((*flat_from[i])[0] != 1 || (*flat_from[i])[1] != 1)) {
          throw ConversionError("layer '" + l.id + "': per-feature norm on a flattened map has no conv form");
        }
        break;
      default:
        break;
    }
    out.push_back(std::move(l));
  }
  return NetworkGraph(net.name() + "_conv", net.input_shape(), std::move(out));
}

/// Product of the strides of all conv and pool layers.
inline std::size_t effective_stride(const NetworkGraph& net) {
  std::size_t t = 1;
  for (const LayerSpec& l : net.layers()) {
    if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::MaxPool2D || l.kind == LayerKind::AvgPool2D) {
      t *= l.params.stride;
    }
  }
  return t;
}

struct WholeImageHeatmap {
  /// (u, v, c) patch-class probabilities.
  Tensor values;
  std::size_t source_rows = 0;
  std::size_t source_cols = 0;
  std::size_t stride = 1;
};

/// Grayscale images (rank 2, or one channel against a multi-channel net) are
/// replicated across the net's channels.
inline Tensor match_channels(const Tensor& image, std::size_t channels) {
  Tensor img = image.rank() == 2 ? image.reshaped({image.dim(0), image.dim(1), 1}) : image;
  if (img.rank() != 3) throw ShapeError("image must be (rows, cols[, channels]), got " + shape_string(image.shape()));
  if (img.dim(2) == channels) return img;
  if (img.dim(2) != 1) {
    throw ShapeError("image has " + std::to_string(img.dim(2)) + " channels, net expects " + std::to_string(channels));
  }
  Tensor out({img.dim(0), img.dim(1), channels});
  for (std::size_t p = 0; p < img.size(); ++p) {
    for (std::size_t c = 0; c < channels; ++c) out[p * channels + c] = img[p];
  }
  return out;
}

/// Applies the fully convolutional net to a whole image.
inline WholeImageHeatmap heatmap(const NetworkGraph& fconv, const Tensor& image) {
  const Shape& patch = fconv.input_shape();
  if (patch.size() != 3) throw ShapeError("fully convolutional net must take (rows, cols, channels)");
  Tensor m = match_channels(image, patch[2]);
  if (m.dim(0) < patch[0] || m.dim(1) < patch[1]) {
    throw ShapeError("image " + shape_string(m.shape()) + " is smaller than the patch " + shape_string(patch));
  }
  NetworkGraph bound = fconv.with_input_shape(m.shape());
  if (bound.output_shape().size() != 3) {
    throw ShapeError("net output " + shape_string(bound.output_shape()) + " is not a spatial map; convert it first");
  }
  return {forward(bound, m), m.dim(0), m.dim(1), effective_stride(fconv)};
}

/// Top layers g: max-pool over the heatmap, flatten, dense hidden layers, a
/// 3-way dense output, plus a shortcut from the per-class global maximum of
/// the heatmap projected linearly onto the 3 classes; summed, then softmax.
struct HeadConfig {
  std::size_t pool_window = 2;
  std::vector<std::size_t> hidden_widths{64};
  std::uint64_t seed = 0;
};

/// Builds h for images of shape `image_shape` (rows, cols, channels). The
/// patch layers are shared verbatim; head weights are He-initialized.
inline NetworkGraph build_whole_image_classifier(const NetworkGraph& fconv, const Shape& image_shape,
                                                 const HeadConfig& head = {}) {
  if (head.pool_window == 0) throw InputError("pool window must be at least 1");
  NetworkGraph bound = fconv.with_input_shape(image_shape);
  const Shape& hm = bound.output_shape();
  if (hm.size() != 3) throw ShapeError("fully convolutional net must produce a (u, v, c) heatmap");

  std::vector<LayerSpec> ls = bound.layers();
  const std::string heat = ls.back().id;
  std::mt19937_64 rng(head.seed);

  ls.push_back(layers::pool("head_pool", LayerKind::MaxPool2D, head.pool_window, head.pool_window,
                            head.pool_window, Padding::Same, {heat}));
  ls.push_back(layers::flatten("head_flatten", {"head_pool"}));
  const std::size_t pu = (hm[0] + head.pool_window - 1) / head.pool_window;
  const std::size_t pv = (hm[1] + head.pool_window - 1) / head.pool_window;
  std::size_t width = pu * pv * hm[2];
  std::string prev = "head_flatten";
  for (std::size_t k = 0; k < head.hidden_widths.size(); ++k) {
    const std::string id = "head_dense" + std::to_string(k + 1);
    ls.push_back(layers::he_dense(id, width, head.hidden_widths[k], rng, {prev}));
    ls.push_back(layers::relu(id + "_relu", {id}));
    prev = id + "_relu";
    width = head.hidden_widths[k];
  }
  ls.push_back(layers::he_dense("head_logits", width, kWholeImageClasses, rng, {prev}));

  ls.push_back(layers::pool("shortcut_max", LayerKind::MaxPool2D, hm[0], hm[1], 1, Padding::Valid, {heat}));
  ls.push_back(layers::flatten("shortcut_flatten", {"shortcut_max"}));
  ls.push_back(layers::he_dense("shortcut_proj", hm[2], kWholeImageClasses, rng, {"shortcut_flatten"}));

  ls.push_back(layers::add("head_add", "head_logits", "shortcut_proj"));
  ls.push_back(layers::softmax("head_softmax", {"head_add"}));
  return NetworkGraph(fconv.name() + "_whole", image_shape, std::move(ls));
}

/// h(M): three whole-image class probabilities.
inline Tensor classify_whole(const NetworkGraph& whole, const Tensor& image) {
  return forward(whole, match_channels(image, whole.input_shape().back()));
}

inline Tensor classify_whole(const NetworkGraph& fconv, const Tensor& image, const HeadConfig& head) {
  Tensor m = match_channels(image, fconv.input_shape().back());
  return classify_whole(build_whole_image_classifier(fconv, m.shape(), head), m);
}

}  // namespace rlpm

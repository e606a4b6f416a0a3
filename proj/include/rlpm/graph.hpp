#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rlpm/errors.hpp"
#include "rlpm/tensor.hpp"

namespace rlpm {

enum class LayerKind {
  Dense,
  Conv2D,
  ReLU,
  MaxPool2D,
  AvgPool2D,
  Flatten,
  Softmax,
  Add,
  BatchNormFolded,
};

enum class Padding { Valid, Same };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::AvgPool2D: return "AvgPool2D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Softmax: return "Softmax";
    case LayerKind::Add: return "Add";
    case LayerKind::BatchNormFolded: return "BatchNormFolded";
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::Conv2D, LayerKind::ReLU,
                      LayerKind::MaxPool2D, LayerKind::AvgPool2D, LayerKind::Flatten,
                      LayerKind::Softmax, LayerKind::Add, LayerKind::BatchNormFolded}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline std::string_view to_string(Padding p) { return p == Padding::Valid ? "valid" : "same"; }

/// Kind-specific hyper-parameters. Only the fields relevant to a kind are
/// read: Dense uses `units`; Conv2D uses kernel/channels/stride/padding; the
/// pools use kernel (as window), stride and padding.
struct LayerParams {
  std::size_t units = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  Padding padding = Padding::Valid;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Dense weights are [in, out]; Conv2D weights are [kh, kw, in, out];
/// BatchNormFolded stores the per-channel scale as weights and shift as bias.
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::ReLU;
  LayerParams params;
  std::optional<Tensor> weights;
  std::optional<Tensor> bias;
  /// Upstream ids. Empty means "the previous layer" (or the graph input for
  /// the first layer) and is resolved when the graph is built.
  std::vector<std::string> inputs;

  bool has_parameters() const { return weights.has_value() || bias.has_value(); }
};

inline constexpr std::string_view kGraphInputId = "input";

struct SpatialGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

/// Output extent and leading zero padding along one spatial axis.
inline SpatialGeometry spatial_geometry(std::size_t in, std::size_t kernel,
                                        std::size_t stride, Padding padding) {
  if (padding == Padding::Valid) {
    if (in < kernel) return {0, 0};
    return {(in - kernel) / stride + 1, 0};
  }
  std::size_t out = (in + stride - 1) / stride;
  std::size_t needed = (out - 1) * stride + kernel;
  std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

/// Topologically ordered, validated layer DAG with inferred shapes.
/// Immutable once constructed.
class NetworkGraph {
 public:
  NetworkGraph() = default;

  NetworkGraph(std::string name, Shape input_shape, std::vector<LayerSpec> layers)
      : name_(std::move(name)), input_shape_(std::move(input_shape)),
        layers_(std::move(layers)) {
    resolve_inputs();
    infer_shapes();
  }

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t size() const { return layers_.size(); }

  /// Input slots of layer i; -1 denotes the graph input.
  const std::vector<int>& input_indices(std::size_t i) const { return input_idx_.at(i); }
  const Shape& output_shape(std::size_t i) const { return out_shapes_.at(i); }
  const Shape& input_shape_of(std::size_t i, std::size_t slot = 0) const {
    int src = input_idx_.at(i).at(slot);
    return src < 0 ? input_shape_ : out_shapes_[static_cast<std::size_t>(src)];
  }
  const Shape& output_shape() const { return out_shapes_.back(); }

  /// Number of classes: the trailing extent of the output.
  std::size_t output_classes() const { return out_shapes_.back().back(); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Same layers bound to a different input extent (e.g. a whole image
  /// instead of a patch). Shape inference is rerun.
  NetworkGraph with_input_shape(Shape shape) const {
    return NetworkGraph(name_, std::move(shape), layers_);
  }

  /// In-place gradient step on layer i's parameters: p -= lr * dp. Used by
  /// training on its private copy of a graph.
  void sgd_step(std::size_t i, const Tensor& dw, const Tensor& db, double lr) {
    LayerSpec& l = layers_.at(i);
    if (!l.weights || !l.bias || l.weights->shape() != dw.shape() || l.bias->shape() != db.shape()) {
      throw ShapeError("gradient does not match parameters of layer '" + l.id + "'");
    }
    auto w = l.weights->data();
    for (std::size_t t = 0; t < w.size(); ++t) w[t] -= lr * dw[t];
    auto b = l.bias->data();
    for (std::size_t t = 0; t < b.size(); ++t) b[t] -= lr * db[t];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
      if (l.weights) n += l.weights->size();
      if (l.bias) n += l.bias->size();
    }
    return n;
  }

 private:
  [[noreturn]] void fail_shape(const LayerSpec& l, const std::string& what) const {
    throw ShapeError("layer '" + l.id + "' (" + std::string(to_string(l.kind)) + "): " + what);
  }

  void resolve_inputs() {
    if (layers_.empty()) throw GraphError("network has no layers");
    for (std::size_t e : input_shape_) {
      if (e == 0) throw ShapeError("input shape extents must be positive");
    }
    if (input_shape_.empty()) throw ShapeError("input shape is empty");
    index_.clear();
    input_idx_.assign(layers_.size(), {});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      LayerSpec& l = layers_[i];
      if (l.id.empty() || l.id == kGraphInputId) {
        throw GraphError("layer " + std::to_string(i) + " has reserved or empty id '" + l.id + "'");
      }
      if (l.inputs.empty()) {
        l.inputs.push_back(i == 0 ? std::string(kGraphInputId) : layers_[i - 1].id);
      }
      std::size_t arity = l.kind == LayerKind::Add ? 2 : 1;
      if (l.inputs.size() != arity) {
        throw GraphError("layer '" + l.id + "' expects " + std::to_string(arity) +
                         " input(s), got " + std::to_string(l.inputs.size()));
      }
      for (const auto& src : l.inputs) {
        if (src == kGraphInputId) {
          input_idx_[i].push_back(-1);
          continue;
        }
        auto it = index_.find(src);
        if (it == index_.end()) {
          bool later = std::any_of(layers_.begin() + static_cast<std::ptrdiff_t>(i),
                                   layers_.end(),
                                   [&](const LayerSpec& o) { return o.id == src; });
          throw GraphError("layer '" + l.id + "' reads '" + src + "' " +
                           (later ? "which does not precede it (acyclicity violation)"
                                  : "which does not exist"));
        }
        input_idx_[i].push_back(static_cast<int>(it->second));
      }
      if (!index_.emplace(l.id, i).second) throw GraphError("duplicate layer id '" + l.id + "'");
    }
    std::vector<bool> consumed(layers_.size(), false);
    bool input_used = false;
    for (const auto& srcs : input_idx_) {
      for (int s : srcs) {
        if (s < 0) input_used = true;
        else consumed[static_cast<std::size_t>(s)] = true;
      }
    }
    if (!input_used) throw GraphError("no layer reads the graph input");
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      if (!consumed[i]) {
        throw GraphError("layer '" + layers_[i].id +
                         "' is an extra output node; only the last layer may be unconsumed");
      }
    }
  }

  void expect_tensor(const LayerSpec& l, const std::optional<Tensor>& t, const Shape& shape,
                     const char* what) const {
    if (!t) fail_shape(l, std::string("missing ") + what);
    if (t->shape() != shape) {
      fail_shape(l, std::string(what) + " shape " + shape_string(t->shape()) + ", expected " +
                        shape_string(shape));
    }
  }

  void expect_no_parameters(const LayerSpec& l) const {
    if (l.has_parameters()) fail_shape(l, "layer kind carries no parameters");
  }

  void infer_shapes() {
    out_shapes_.assign(layers_.size(), {});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      const Shape& in = input_shape_of(i);
      const LayerParams& p = l.params;
      Shape out;
      switch (l.kind) {
        case LayerKind::Dense: {
          if (in.size() != 1) fail_shape(l, "expects a rank-1 input, got " + shape_string(in));
          if (p.units == 0) fail_shape(l, "units must be positive");
          expect_tensor(l, l.weights, {in[0], p.units}, "weights");
          expect_tensor(l, l.bias, {p.units}, "bias");
          out = {p.units};
          break;
        }
        case LayerKind::Conv2D: {
          if (in.size() != 3) fail_shape(l, "expects a rank-3 input, got " + shape_string(in));
          if (p.kernel_h == 0 || p.kernel_w == 0 || p.out_channels == 0) {
            fail_shape(l, "kernel extents and out_channels must be positive");
          }
          if (p.stride == 0) fail_shape(l, "stride must be at least 1");
          if (p.in_channels != in[2]) {
            fail_shape(l, "in_channels " + std::to_string(p.in_channels) + " but input has " +
                              std::to_string(in[2]));
          }
          expect_tensor(l, l.weights, {p.kernel_h, p.kernel_w, p.in_channels, p.out_channels},
                        "weights");
          expect_tensor(l, l.bias, {p.out_channels}, "bias");
          auto gh = spatial_geometry(in[0], p.kernel_h, p.stride, p.padding);
          auto gw = spatial_geometry(in[1], p.kernel_w, p.stride, p.padding);
          if (gh.out == 0 || gw.out == 0) fail_shape(l, "kernel larger than input " + shape_string(in));
          out = {gh.out, gw.out, p.out_channels};
          break;
        }
        case LayerKind::MaxPool2D:
        case LayerKind::AvgPool2D: {
          if (in.size() != 3) fail_shape(l, "expects a rank-3 input, got " + shape_string(in));
          if (p.kernel_h == 0 || p.kernel_w == 0) fail_shape(l, "pool window must be at least 1");
          if (p.stride == 0) fail_shape(l, "stride must be at least 1");
          expect_no_parameters(l);
          auto gh = spatial_geometry(in[0], p.kernel_h, p.stride, p.padding);
          auto gw = spatial_geometry(in[1], p.kernel_w, p.stride, p.padding);
          if (gh.out == 0 || gw.out == 0) fail_shape(l, "pool window larger than input " + shape_string(in));
          out = {gh.out, gw.out, in[2]};
          break;
        }
        case LayerKind::ReLU:
          expect_no_parameters(l);
          out = in;
          break;
        case LayerKind::Softmax:
          expect_no_parameters(l);
          if (in.back() < 2) fail_shape(l, "softmax needs at least 2 classes on the last axis");
          out = in;
          break;
        case LayerKind::Flatten:
          expect_no_parameters(l);
          out = {shape_size(in)};
          break;
        case LayerKind::BatchNormFolded:
          expect_tensor(l, l.weights, {in.back()}, "scale");
          expect_tensor(l, l.bias, {in.back()}, "shift");
          out = in;
          break;
        case LayerKind::Add: {
          expect_no_parameters(l);
          const Shape& other = input_shape_of(i, 1);
          if (other != in) {
            fail_shape(l, "branch shapes differ: " + shape_string(in) + " vs " + shape_string(other));
          }
          out = in;
          break;
        }
      }
      out_shapes_[i] = std::move(out);
    }
  }

  std::string name_;
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<int>> input_idx_;
  std::vector<Shape> out_shapes_;
};

}  // namespace rlpm

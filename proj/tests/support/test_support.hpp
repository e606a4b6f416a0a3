#pragma once

// Shared generators and independent oracles for the test suites. Nothing here
// calls into the kernels it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "rlpm/rlpm.hpp"

namespace rlpm::testing {

using Rng = std::mt19937_64;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

struct MlpOptions {
  std::size_t max_depth = 4;   // number of Dense layers
  std::size_t max_width = 16;
  std::size_t min_width = 2;
  std::size_t inputs = 0;      // 0: random
  std::size_t classes = 0;     // 0: random in [2, 5]
  bool bias = true;
  bool positive_weights = false;
  bool softmax = true;
};

/// Dense/ReLU stack with Gaussian weights scaled 1/sqrt(fan_in).
inline NetworkGraph random_mlp(Rng& rng, const MlpOptions& o = {}) {
  std::uniform_int_distribution<std::size_t> depth_d(1, o.max_depth);
  std::uniform_int_distribution<std::size_t> width_d(o.min_width, o.max_width);
  const std::size_t depth = depth_d(rng);
  std::size_t in = o.inputs ? o.inputs : width_d(rng);
  const std::size_t classes = o.classes ? o.classes : std::uniform_int_distribution<std::size_t>(2, 5)(rng);
  const Shape input{in};
  std::vector<LayerSpec> ls;
  for (std::size_t d = 0; d < depth; ++d) {
    const bool last = d + 1 == depth;
    const std::size_t out = last ? classes : width_d(rng);
    std::normal_distribution<double> wd(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Tensor w({in, out});
    for (double& v : w.data()) v = o.positive_weights ? std::abs(wd(rng)) : wd(rng);
    Tensor b({out});
    if (o.bias) {
      std::normal_distribution<double> bd(0.0, 0.1);
      for (double& v : b.data()) v = bd(rng);
    }
    ls.push_back(layers::dense("dense" + std::to_string(d), std::move(w), std::move(b)));
    if (!last) ls.push_back(layers::relu("relu" + std::to_string(d)));
    in = out;
  }
  if (o.softmax) ls.push_back(layers::softmax("softmax"));
  return NetworkGraph("mlp", input, std::move(ls));
}

/// Conv -> ReLU -> pool -> conv -> ReLU -> flatten -> dense net on small images.
inline NetworkGraph random_conv_net(Rng& rng, std::size_t size = 8, std::size_t channels = 2,
                                    std::size_t classes = 3, bool bias = true,
                                    LayerKind pool_kind = LayerKind::MaxPool2D) {
  std::vector<LayerSpec> ls;
  auto conv = [&](std::string id, std::size_t k, std::size_t in, std::size_t out, std::size_t stride,
                  Padding pad) {
    std::normal_distribution<double> wd(0.0, 1.0 / std::sqrt(static_cast<double>(k * k * in)));
    Tensor w({k, k, in, out});
    for (double& v : w.data()) v = wd(rng);
    Tensor b({out});
    if (bias) {
      std::normal_distribution<double> bd(0.0, 0.1);
      for (double& v : b.data()) v = bd(rng);
    }
    return layers::conv2d(std::move(id), std::move(w), std::move(b), stride, pad);
  };
  ls.push_back(conv("conv1", 3, channels, 4, 1, Padding::Same));
  ls.push_back(layers::relu("relu1"));
  ls.push_back(layers::pool("pool1", pool_kind, 2, 2, 2));
  ls.push_back(conv("conv2", 3, 4, 4, 1, Padding::Valid));
  ls.push_back(layers::relu("relu2"));
  ls.push_back(layers::flatten("flatten"));
  NetworkGraph probe("probe", {size, size, channels}, ls);
  const std::size_t features = probe.output_shape()[0];
  std::normal_distribution<double> wd(0.0, 1.0 / std::sqrt(static_cast<double>(features)));
  Tensor w({features, classes});
  for (double& v : w.data()) v = wd(rng);
  ls.push_back(layers::dense("logits", std::move(w), Tensor({classes})));
  ls.push_back(layers::softmax("softmax"));
  return NetworkGraph("convnet", {size, size, channels}, std::move(ls));
}

/// Direct convolution with explicit signed-index padding (oracle).
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, bool same) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1)), C = static_cast<long>(x.dim(2));
  const long KH = static_cast<long>(w.dim(0)), KW = static_cast<long>(w.dim(1)), O = static_cast<long>(w.dim(3));
  const long s = static_cast<long>(stride);
  long oh, ow, ph = 0, pw = 0;
  if (same) {
    oh = (H + s - 1) / s;
    ow = (W + s - 1) / s;
    ph = std::max(0L, (oh - 1) * s + KH - H) / 2;
    pw = std::max(0L, (ow - 1) * s + KW - W) / 2;
  } else {
    oh = (H - KH) / s + 1;
    ow = (W - KW) / s + 1;
  }
  Tensor y({static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), static_cast<std::size_t>(O)});
  for (long i = 0; i < oh; ++i)
    for (long j = 0; j < ow; ++j)
      for (long o = 0; o < O; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        for (long ki = 0; ki < KH; ++ki)
          for (long kj = 0; kj < KW; ++kj)
            for (long c = 0; c < C; ++c) {
              const long r = i * s + ki - ph, q = j * s + kj - pw;
              if (r < 0 || q < 0 || r >= H || q >= W) continue;
              acc += x[static_cast<std::size_t>((r * W + q) * C + c)] *
                     w[static_cast<std::size_t>(((ki * KW + kj) * C + c) * O + o)];
            }
        y[static_cast<std::size_t>((i * ow + j) * O + o)] = acc;
      }
  return y;
}

/// Valid-padding pooling oracle.
inline Tensor naive_pool(const Tensor& x, std::size_t window, std::size_t stride, bool is_max) {
  const std::size_t oh = (x.dim(0) - window) / stride + 1, ow = (x.dim(1) - window) / stride + 1;
  const std::size_t C = x.dim(2);
  Tensor y({oh, ow, C});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        double acc = is_max ? -INFINITY : 0.0;
        for (std::size_t a = 0; a < window; ++a)
          for (std::size_t b = 0; b < window; ++b) {
            const double v = x.at(i * stride + a, j * stride + b, c);
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        y.at(i, j, c) = is_max ? acc : acc / static_cast<double>(window * window);
      }
  return y;
}

/// Central-difference gradient of the pre-softmax logit (oracle).
inline Tensor finite_difference_gradient(const NetworkGraph& net, const Tensor& x, std::size_t cls,
                                         double step) {
  const bool sm = net.layers().back().kind == LayerKind::Softmax;
  auto logit = [&](const Tensor& in) {
    ActivationTrace t = forward_with_trace(net, in);
    const Tensor& z = sm ? t.records.back().input() : t.output();
    return z[cls];
  };
  Tensor g(x.shape());
  Tensor p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = p[i];
    p[i] = o + step;
    const double up = logit(p);
    p[i] = o - step;
    const double down = logit(p);
    p[i] = o;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// 16x16 grey field (0.5 +- 0.1 noise) with one 5x5 blob that is bright
/// (label 1) or dark (label 0).
inline LabeledExample blob_image(Rng& rng, std::size_t label, std::size_t size = 16) {
  std::uniform_real_distribution<double> noise(-0.1, 0.1);
  std::uniform_int_distribution<std::size_t> pos(0, size - 5);
  Tensor img({size, size, 1});
  for (double& v : img.data()) v = 0.5 + noise(rng);
  const std::size_t r0 = pos(rng), c0 = pos(rng);
  for (std::size_t r = r0; r < r0 + 5; ++r)
    for (std::size_t c = c0; c < c0 + 5; ++c) {
      const bool corner = (r == r0 || r == r0 + 4) && (c == c0 || c == c0 + 4);
      if (corner) continue;
      img.at(r, c, 0) = std::clamp((label ? 1.0 : 0.0) + 0.5 * noise(rng), 0.0, 1.0);
    }
  return {std::move(img), label};
}

inline std::vector<LabeledExample> blob_dataset(std::size_t n, std::uint64_t seed, std::size_t size = 16) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(blob_image(rng, i % 2, size));
  return out;
}

/// Bright 5x5 blob on a dark noise field (values in [0, 0.1]); label 0 puts
/// the blob in the top half, label 1 in the bottom half. Flipping the blob
/// away leaves no evidence for either class.
inline LabeledExample position_blob_image(Rng& rng, std::size_t label, std::size_t size = 16) {
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  std::uniform_int_distribution<std::size_t> row(0, size / 2 - 5), col(0, size - 5);
  Tensor img({size, size, 1});
  for (double& v : img.data()) v = noise(rng);
  const std::size_t r0 = row(rng) + (label ? size / 2 : 0), c0 = col(rng);
  for (std::size_t r = r0; r < r0 + 5; ++r)
    for (std::size_t c = c0; c < c0 + 5; ++c) img.at(r, c, 0) = 0.8 + noise(rng);
  return {std::move(img), label};
}

inline std::vector<LabeledExample> position_blob_dataset(std::size_t n, std::uint64_t seed, std::size_t size = 16) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(position_blob_image(rng, i % 2, size));
  return out;
}

/// Valid-padding conv with uniform weights in [-0.5, 0.5].
inline LayerSpec random_valid_conv(Rng& rng, std::string id, std::size_t k, std::size_t in, std::size_t out, std::size_t stride) {
  return layers::conv2d(std::move(id), random_tensor({k, k, in, out}, rng, -0.5, 0.5), random_tensor({out}, rng, -0.1, 0.1),
                        stride, Padding::Valid);
}

// conv(k1, stride s) -> ReLU -> maxpool 2 -> conv 3x3 -> ReLU -> flatten ->
// dense(hidden) -> ReLU -> dense(5) -> softmax, on a p x q x ch patch.
inline NetworkGraph random_patch_net(Rng& rng, std::size_t p, std::size_t q, std::size_t ch, std::size_t stride) {
  std::vector<LayerSpec> ls{random_valid_conv(rng, "c1", 3, ch, 4, stride), layers::relu("r1"), layers::max_pool("mp", 2),
                            random_valid_conv(rng, "c2", 3, 4, 6, 1), layers::relu("r2"), layers::flatten("flat")};
  NetworkGraph probe("probe", {p, q, ch}, ls);
  const std::size_t f = probe.output_shape()[0];
  ls.push_back(layers::dense("fc1", random_tensor({f, 8}, rng, -0.5, 0.5), random_tensor({8}, rng, -0.1, 0.1)));
  ls.push_back(layers::relu("fc1_relu"));
  ls.push_back(layers::dense("fc2", random_tensor({8, 5}, rng), random_tensor({5}, rng)));
  ls.push_back(layers::softmax("sm"));
  return NetworkGraph("patch", {p, q, ch}, std::move(ls));
}

// Patch at (r0, c0); cells past the image edge are zero.
inline Tensor crop(const Tensor& img, std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) {
  Tensor out({rows, cols, img.dim(2)});
  for (std::size_t r = 0; r < rows && r0 + r < img.dim(0); ++r)
    for (std::size_t c = 0; c < cols && c0 + c < img.dim(1); ++c)
      for (std::size_t k = 0; k < img.dim(2); ++k) out.at(r, c, k) = img.at(r0 + r, c0 + c, k);
  return out;
}

/// conv3x3(1->8) -> ReLU -> maxpool2 -> flatten -> dense(2) -> softmax.
inline NetworkGraph blob_classifier(std::uint64_t seed, std::size_t size = 16) {
  Rng rng(seed);
  std::vector<LayerSpec> ls;
  ls.push_back(layers::he_conv2d("conv1", 3, 3, 1, 8, rng));
  ls.push_back(layers::relu("relu1"));
  ls.push_back(layers::max_pool("pool1", 2));
  ls.push_back(layers::flatten("flatten"));
  const std::size_t side = (size - 2) / 2;
  ls.push_back(layers::he_dense("logits", side * side * 8, 2, rng));
  ls.push_back(layers::softmax("softmax"));
  return NetworkGraph("blob", {size, size, 1}, std::move(ls));
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    const auto stamp = static_cast<std::uint64_t>(std::random_device{}()) << 16 | counter++;
    path_ = std::filesystem::temp_directory_path() / ("rlpm_test_" + std::to_string(stamp));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace rlpm::testing

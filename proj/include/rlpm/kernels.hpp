#pragma once

// Dense / conv / pool kernels shared by inference, backprop and relevance
// propagation. The linear ops take the weight tensor explicitly so relevance
// rules can substitute modified weights (w+, w-, w^2) through the same code.

#include <cstddef>
#include <limits>

#include "rlpm/graph.hpp"
#include "rlpm/tensor.hpp"

namespace rlpm::kernels {

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Tensor y({out});
  if (bias) {
    for (std::size_t k = 0; k < out; ++k) y[k] = (*bias)[k];
  }
  auto wd = w.data();
  for (std::size_t j = 0; j < in; ++j) {
    const double xv = x[j];
    if (xv == 0.0) continue;
    const double* row = wd.data() + j * out;
    for (std::size_t k = 0; k < out; ++k) y[k] += xv * row[k];
  }
  return y;
}

inline Tensor dense_transpose(const Tensor& g, const Tensor& w) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Tensor gx({in});
  auto wd = w.data();
  for (std::size_t j = 0; j < in; ++j) {
    const double* row = wd.data() + j * out;
    double s = 0.0;
    for (std::size_t k = 0; k < out; ++k) s += row[k] * g[k];
    gx[j] = s;
  }
  return gx;
}

struct ConvGeometry {
  std::size_t in_h, in_w, in_c;
  std::size_t out_h, out_w, out_c;
  std::size_t k_h, k_w, stride;
  std::size_t pad_h, pad_w;
};

inline ConvGeometry conv_geometry(const LayerParams& p, const Shape& in, std::size_t out_c) {
  auto gh = spatial_geometry(in[0], p.kernel_h, p.stride, p.padding);
  auto gw = spatial_geometry(in[1], p.kernel_w, p.stride, p.padding);
  return {in[0], in[1], in[2], gh.out, gw.out, out_c,
          p.kernel_h, p.kernel_w, p.stride, gh.pad_before, gw.pad_before};
}

/// Maps output coordinate + kernel offset to an input coordinate; false when
/// the tap lands in zero padding.
inline bool tap(std::size_t o, std::size_t k, const ConvGeometry& g, std::size_t extent,
                std::size_t pad, std::size_t& i) {
  std::size_t pos = o * g.stride + k;
  if (pos < pad) return false;
  i = pos - pad;
  return i < extent;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const LayerParams& p) {
  const ConvGeometry g = conv_geometry(p, x.shape(), w.dim(3));
  Tensor y({g.out_h, g.out_w, g.out_c});
  auto xd = x.data();
  auto wd = w.data();
  auto yd = y.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* o = yd.data() + (oy * g.out_w + ox) * g.out_c;
      if (bias) {
        for (std::size_t co = 0; co < g.out_c; ++co) o[co] = (*bias)[co];
      }
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        std::size_t iy;
        if (!tap(oy, ky, g, g.in_h, g.pad_h, iy)) continue;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          std::size_t ix;
          if (!tap(ox, kx, g, g.in_w, g.pad_w, ix)) continue;
          const double* xp = xd.data() + (iy * g.in_w + ix) * g.in_c;
          const double* wp = wd.data() + (ky * g.k_w + kx) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double xv = xp[ci];
            if (xv == 0.0) continue;
            const double* wr = wp + ci * g.out_c;
            for (std::size_t co = 0; co < g.out_c; ++co) o[co] += xv * wr[co];
          }
        }
      }
    }
  }
  return y;
}

/// Adjoint of conv2d with respect to its input.
inline Tensor conv2d_transpose(const Tensor& gy, const Tensor& w, const LayerParams& p,
                               const Shape& in_shape) {
  const ConvGeometry g = conv_geometry(p, in_shape, w.dim(3));
  Tensor gx(in_shape);
  auto gd = gy.data();
  auto wd = w.data();
  auto xd = gx.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* go = gd.data() + (oy * g.out_w + ox) * g.out_c;
      bool any = false;
      for (std::size_t co = 0; co < g.out_c; ++co) any = any || go[co] != 0.0;
      if (!any) continue;
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        std::size_t iy;
        if (!tap(oy, ky, g, g.in_h, g.pad_h, iy)) continue;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          std::size_t ix;
          if (!tap(ox, kx, g, g.in_w, g.pad_w, ix)) continue;
          double* xp = xd.data() + (iy * g.in_w + ix) * g.in_c;
          const double* wp = wd.data() + (ky * g.k_w + kx) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double* wr = wp + ci * g.out_c;
            double s = 0.0;
            for (std::size_t co = 0; co < g.out_c; ++co) s += wr[co] * go[co];
            xp[ci] += s;
          }
        }
      }
    }
  }
  return gx;
}

inline void conv2d_parameter_grad(const Tensor& x, const Tensor& gy, const LayerParams& p,
                                  Tensor& dw, Tensor& db) {
  const ConvGeometry g = conv_geometry(p, x.shape(), dw.dim(3));
  auto xd = x.data();
  auto gd = gy.data();
  auto wd = dw.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* go = gd.data() + (oy * g.out_w + ox) * g.out_c;
      for (std::size_t co = 0; co < g.out_c; ++co) db[co] += go[co];
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        std::size_t iy;
        if (!tap(oy, ky, g, g.in_h, g.pad_h, iy)) continue;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          std::size_t ix;
          if (!tap(ox, kx, g, g.in_w, g.pad_w, ix)) continue;
          const double* xp = xd.data() + (iy * g.in_w + ix) * g.in_c;
          double* wp = wd.data() + (ky * g.k_w + kx) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double xv = xp[ci];
            if (xv == 0.0) continue;
            double* wr = wp + ci * g.out_c;
            for (std::size_t co = 0; co < g.out_c; ++co) wr[co] += xv * go[co];
          }
        }
      }
    }
  }
}

/// Per-channel scale on the last axis (folded batch norm without its shift).
inline Tensor channel_scale(const Tensor& x, const Tensor& scale, const Tensor* shift) {
  const std::size_t c = scale.size();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] * scale[i % c] + (shift ? (*shift)[i % c] : 0.0);
  }
  return y;
}

/// Applies the linear part of a parametric layer with the given weights.
inline Tensor linear_apply(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor* bias) {
  switch (l.kind) {
    case LayerKind::Dense: return dense(x, w, bias);
    case LayerKind::Conv2D: return conv2d(x, w, bias, l.params);
    case LayerKind::BatchNormFolded: return channel_scale(x, w, bias);
    default: throw InputError("layer '" + l.id + "' is not linear");
  }
}

inline Tensor linear_transpose(const LayerSpec& l, const Tensor& g, const Tensor& w,
                               const Shape& in_shape) {
  switch (l.kind) {
    case LayerKind::Dense: return dense_transpose(g, w);
    case LayerKind::Conv2D: return conv2d_transpose(g, w, l.params, in_shape);
    case LayerKind::BatchNormFolded: return channel_scale(g, w, nullptr);
    default: throw InputError("layer '" + l.id + "' is not linear");
  }
}

inline bool is_linear(LayerKind k) {
  return k == LayerKind::Dense || k == LayerKind::Conv2D || k == LayerKind::BatchNormFolded;
}

/// Visits each pool window: fn(out_index, in_indices) with only in-bounds taps.
template <typename Fn>
void for_each_pool_window(const LayerParams& p, const Shape& in, Fn&& fn) {
  const ConvGeometry g = conv_geometry(p, in, in[2]);
  std::vector<std::size_t> taps;
  taps.reserve(g.k_h * g.k_w);
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      for (std::size_t c = 0; c < g.in_c; ++c) {
        taps.clear();
        for (std::size_t ky = 0; ky < g.k_h; ++ky) {
          std::size_t iy;
          if (!tap(oy, ky, g, g.in_h, g.pad_h, iy)) continue;
          for (std::size_t kx = 0; kx < g.k_w; ++kx) {
            std::size_t ix;
            if (!tap(ox, kx, g, g.in_w, g.pad_w, ix)) continue;
            taps.push_back((iy * g.in_w + ix) * g.in_c + c);
          }
        }
        fn((oy * g.out_w + ox) * g.out_c + c, std::span<const std::size_t>(taps));
      }
    }
  }
}

/// Index of the window maximum; the first tap in row-major order wins ties.
inline std::size_t pool_argmax(const Tensor& x, std::span<const std::size_t> taps) {
  std::size_t best = taps[0];
  for (std::size_t t : taps) {
    if (x[t] > x[best]) best = t;
  }
  return best;
}

inline Tensor pool(const LayerSpec& l, const Tensor& x) {
  const ConvGeometry g = conv_geometry(l.params, x.shape(), x.dim(2));
  Tensor y({g.out_h, g.out_w, g.out_c});
  const bool is_max = l.kind == LayerKind::MaxPool2D;
  for_each_pool_window(l.params, x.shape(), [&](std::size_t o, std::span<const std::size_t> taps) {
    if (is_max) {
      y[o] = x[pool_argmax(x, taps)];
    } else {
      double s = 0.0;
      for (std::size_t t : taps) s += x[t];
      y[o] = s / static_cast<double>(taps.size());
    }
  });
  return y;
}

/// Adjoint of a pool: max routes to the argmax, avg splits evenly.
inline Tensor pool_transpose(const LayerSpec& l, const Tensor& x, const Tensor& gy) {
  Tensor gx(x.shape());
  const bool is_max = l.kind == LayerKind::MaxPool2D;
  for_each_pool_window(l.params, x.shape(), [&](std::size_t o, std::span<const std::size_t> taps) {
    if (is_max) {
      gx[pool_argmax(x, taps)] += gy[o];
    } else {
      const double share = gy[o] / static_cast<double>(taps.size());
      for (std::size_t t : taps) gx[t] += share;
    }
  });
  return gx;
}

}  // namespace rlpm::kernels

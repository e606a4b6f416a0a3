#pragma once

// Relevance heatmaps as binary PPM (P6) and grayscale tensors as PGM (P5).
// Positive relevance ramps white -> purple, negative white -> blue.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rlpm/errors.hpp"
#include "rlpm/relprop.hpp"
#include "rlpm/tensor.hpp"

namespace rlpm::render {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kPurple{160, 32, 240};
inline constexpr Rgb kBlue{0, 0, 255};

struct ColorScale {
  double gamma = 1.0;
};

/// Divides by the largest magnitude; an all-zero tensor stays zero.
inline Tensor normalize_relevance(const Tensor& values) {
  const double m = values.max_abs();
  if (m == 0.0) return Tensor(values.shape());
  Tensor out(values.shape());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / m;
  return out;
}

inline Tensor normalize_relevance(const RelevanceMap& map) { return normalize_relevance(map.values); }

/// Sums a (rows, cols, channels) map over channels.
inline Tensor collapse_channels(const Tensor& values) {
  if (values.rank() != 3) return values;
  Tensor out({values.dim(0), values.dim(1)});
  const std::size_t c = values.dim(2);
  for (std::size_t i = 0; i < values.size(); ++i) out[i / c] += values[i];
  return out;
}

inline Rgb color_for(double v, const ColorScale& scale = {}) {
  if (!(scale.gamma > 0.0)) throw InputError("gamma must be positive");
  const double t = std::pow(std::min(std::abs(v), 1.0), scale.gamma);
  const Rgb& end = v >= 0.0 ? kPurple : kBlue;
  Rgb px;
  for (std::size_t k = 0; k < 3; ++k) {
    px[k] = static_cast<std::uint8_t>(std::lround(255.0 + (static_cast<double>(end[k]) - 255.0) * t));
  }
  return px;
}

struct Extent {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

inline Extent image_extent(const Tensor& t) {
  switch (t.rank()) {
    case 1: return {1, t.dim(0)};
    case 2: return {t.dim(0), t.dim(1)};
    case 3:
      if (t.dim(2) == 1) return {t.dim(0), t.dim(1)};
      break;
    default:
      break;
  }
  throw ShapeError("cannot render tensor of shape " + shape_string(t.shape()) + " as a single-plane image");
}

inline std::string header(const char* magic, Extent e) {
  return std::string(magic) + "\n" + std::to_string(e.cols) + " " + std::to_string(e.rows) + "\n255\n";
}

/// P6 bytes for values in [-1, 1].
inline std::vector<std::uint8_t> encode_ppm(const Tensor& normalized, const ColorScale& scale = {}) {
  const Extent e = image_extent(normalized);
  const std::string h = header("P6", e);
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.reserve(h.size() + normalized.size() * 3);
  for (double v : normalized.data()) {
    const Rgb px = color_for(v, scale);
    bytes.insert(bytes.end(), px.begin(), px.end());
  }
  return bytes;
}

/// P5 bytes for values in [-1, 1]: -1 black, 0 mid-grey, +1 white.
inline std::vector<std::uint8_t> encode_pgm(const Tensor& normalized) {
  const Extent e = image_extent(normalized);
  const std::string h = header("P5", e);
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (double v : normalized.data()) {
    const double c = std::clamp(v, -1.0, 1.0);
    bytes.push_back(static_cast<std::uint8_t>(std::lround((c + 1.0) * 127.5)));
  }
  return bytes;
}

enum class ImageMode { Color, Grayscale };

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline void to_image(const Tensor& normalized, const ColorScale& scale, const std::string& path,
                     ImageMode mode = ImageMode::Color) {
  write_bytes(path, mode == ImageMode::Color ? encode_ppm(normalized, scale) : encode_pgm(normalized));
}

}  // namespace rlpm::render

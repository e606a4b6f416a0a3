#pragma once

// Input images (PGM P2/P5, raw32) and the relevance-map CSV interchange.
//
// raw32: three little-endian int32 (rows, cols, channels) followed by
// rows*cols*channels little-endian float32 values in row-major order.
// Relevance CSV: header "row,col,channel,value", one line per element.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "rlpm/errors.hpp"
#include "rlpm/tensor.hpp"

namespace rlpm::image_io {

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

struct PnmCursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw InputError("malformed PGM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw InputError("PGM value too large");
    }
    return v;
  }
};

}  // namespace detail

/// Grayscale PGM scaled to [0, 1] by maxval, shaped (rows, cols, 1).
inline Tensor read_pgm(const std::string& path) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5')) {
    throw InputError("'" + path + "' is not a P2/P5 PGM file");
  }
  const bool binary = bytes[1] == '5';
  detail::PnmCursor cur{bytes, 2};
  const std::size_t cols = cur.number();
  const std::size_t rows = cur.number();
  const std::size_t maxval = cur.number();
  if (rows == 0 || cols == 0 || maxval == 0 || maxval > 65535) throw InputError("bad PGM dimensions in '" + path + "'");
  Tensor img({rows, cols, 1});
  const double scale = 1.0 / static_cast<double>(maxval);
  if (binary) {
    ++cur.pos;  // single whitespace after maxval
    const std::size_t width = maxval < 256 ? 1 : 2;
    if (bytes.size() < cur.pos + rows * cols * width) throw InputError("truncated PGM '" + path + "'");
    for (std::size_t i = 0; i < rows * cols; ++i) {
      const std::size_t v = width == 1 ? bytes[cur.pos + i]
                                       : (std::size_t{bytes[cur.pos + 2 * i]} << 8) | bytes[cur.pos + 2 * i + 1];
      img[i] = static_cast<double>(v) * scale;
    }
  } else {
    for (std::size_t i = 0; i < rows * cols; ++i) img[i] = static_cast<double>(cur.number()) * scale;
  }
  return img;
}

inline Tensor read_raw32(const std::string& path) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() < 12) throw InputError("raw32 file '" + path + "' lacks its shape header");
  std::int32_t dims[3];
  std::memcpy(dims, bytes.data(), 12);
  for (std::int32_t d : dims) {
    if (d <= 0) throw InputError("raw32 file '" + path + "' has a non-positive extent");
  }
  const Shape shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                    static_cast<std::size_t>(dims[2])};
  const std::size_t n = shape_size(shape);
  if (bytes.size() != 12 + 4 * n) throw InputError("raw32 file '" + path + "' length does not match its header");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 12 + 4 * i, 4);
    values[i] = f;
  }
  return Tensor(shape, std::move(values));
}

inline void write_raw32(const Tensor& image, const std::string& path) {
  if (image.rank() != 3) throw ShapeError("raw32 stores (rows, cols, channels) tensors");
  std::vector<std::uint8_t> bytes(12 + 4 * image.size());
  for (std::size_t k = 0; k < 3; ++k) {
    const auto d = static_cast<std::int32_t>(image.dim(k));
    std::memcpy(bytes.data() + 4 * k, &d, 4);
  }
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float f = static_cast<float>(image[i]);
    std::memcpy(bytes.data() + 12 + 4 * i, &f, 4);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_pgm(const Tensor& unit_range, const std::string& path) {
  if (unit_range.rank() != 3 || unit_range.dim(2) != 1) throw ShapeError("PGM stores (rows, cols, 1) tensors");
  std::string h = "P5\n" + std::to_string(unit_range.dim(1)) + " " + std::to_string(unit_range.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (double v : unit_range.data()) {
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

enum class ImageFormat { Auto, Pgm, Raw32 };

inline Tensor read_image(const std::string& path, ImageFormat format = ImageFormat::Auto) {
  if (format == ImageFormat::Auto) {
    const bool pgm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0;
    format = pgm ? ImageFormat::Pgm : ImageFormat::Raw32;
  }
  return format == ImageFormat::Pgm ? read_pgm(path) : read_raw32(path);
}

/// (row, col, channel) of flat index i; rank-1 tensors use row 0, channel 0.
inline std::array<std::size_t, 3> csv_coords(const Shape& shape, std::size_t i) {
  if (shape.size() == 3) return {i / (shape[1] * shape[2]), (i / shape[2]) % shape[1], i % shape[2]};
  if (shape.size() == 2) return {i / shape[1], i % shape[1], 0};
  return {0, i, 0};
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string relevance_csv(const Tensor& values) {
  std::string out = "row,col,channel,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto c = csv_coords(values.shape(), i);
    out += std::to_string(c[0]) + ',' + std::to_string(c[1]) + ',' + std::to_string(c[2]) + ',' +
           format_double(values[i]) + '\n';
  }
  return out;
}

/// "class,probability" table, one row per class.
inline std::string probability_csv(const Tensor& probs) {
  std::string out = "class,probability\n";
  for (std::size_t k = 0; k < probs.size(); ++k) out += std::to_string(k) + ',' + format_double(probs[k]) + '\n';
  return out;
}

inline void write_relevance_csv(const Tensor& values, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << relevance_csv(values);
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Parses a relevance CSV for a tensor of the given shape; every element
/// must appear exactly once.
inline Tensor read_relevance_csv(const std::string& path, const Shape& shape) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("row,col,channel,value", 0) != 0) {
    throw InputError("'" + path + "' lacks the row,col,channel,value header");
  }
  Tensor t(shape);
  std::vector<bool> seen(t.size(), false);
  const std::size_t rows = shape.size() >= 2 ? shape[0] : 1;
  const std::size_t cols = shape.size() >= 2 ? shape[1] : shape[0];
  const std::size_t chans = shape.size() == 3 ? shape[2] : 1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::size_t r, c, ch;
    double v;
    char tail;
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf%c", &r, &c, &ch, &v, &tail) < 4) {
      throw InputError("'" + path + "' line " + std::to_string(line_no) + " is malformed");
    }
    if (r >= rows || c >= cols || ch >= chans) {
      throw InputError("'" + path + "' line " + std::to_string(line_no) + " is outside " + shape_string(shape));
    }
    const std::size_t idx = (r * cols + c) * chans + ch;
    if (seen[idx]) throw InputError("'" + path + "' repeats cell on line " + std::to_string(line_no));
    seen[idx] = true;
    t[idx] = v;
  }
  for (bool s : seen) {
    if (!s) throw InputError("'" + path + "' does not cover every element of " + shape_string(shape));
  }
  return t;
}

}  // namespace rlpm::image_io

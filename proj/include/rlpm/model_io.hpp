#pragma once

// RLPM1 container: <path>.json holds a canonical JSON manifest (sorted keys,
// no whitespace), <path>.bin holds every weight and bias as little-endian
// float32, concatenated in manifest order. blob_checksum is the IEEE CRC32
// of the whole blob.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlpm/errors.hpp"
#include "rlpm/graph.hpp"

namespace rlpm::model_io {

inline constexpr std::string_view kMagic = "RLPM1";

static_assert(std::endian::native == std::endian::little,
              "blob encoding assumes a little-endian host");

struct ModelPaths {
  std::string manifest;
  std::string blob;
};

/// `base` may be given with or without a trailing .json/.bin.
inline ModelPaths model_paths(std::string base) {
  for (std::string_view ext : {".json", ".bin"}) {
    if (base.size() > ext.size() && base.compare(base.size() - ext.size(), ext.size(), ext) == 0) {
      base.resize(base.size() - ext.size());
      break;
    }
  }
  return {base + ".json", base + ".bin"};
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large blobs in chunks.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = ::crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

using nlohmann::json;

inline json shape_json(const std::optional<Tensor>& t) {
  json arr = json::array();
  if (t) {
    for (std::size_t e : t->shape()) arr.push_back(e);
  }
  return arr;
}

inline json params_json(const LayerSpec& l) {
  const LayerParams& p = l.params;
  json j = json::object();
  switch (l.kind) {
    case LayerKind::Dense:
      j["units"] = p.units;
      break;
    case LayerKind::Conv2D:
      j["kernel"] = {p.kernel_h, p.kernel_w};
      j["in_channels"] = p.in_channels;
      j["out_channels"] = p.out_channels;
      j["stride"] = p.stride;
      j["padding"] = std::string(to_string(p.padding));
      break;
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      j["window"] = {p.kernel_h, p.kernel_w};
      j["stride"] = p.stride;
      j["padding"] = std::string(to_string(p.padding));
      break;
    default:
      break;
  }
  return j;
}

inline void append_floats(std::vector<std::uint8_t>& blob, const Tensor& t) {
  for (double v : t.data()) {
    const float f = static_cast<float>(v);
    std::uint8_t bytes[4];
    std::memcpy(bytes, &f, 4);
    blob.insert(blob.end(), bytes, bytes + 4);
  }
}

[[noreturn]] inline void bad(const std::string& what) { throw FormatError("manifest: " + what); }

inline const json& field(const json& obj, const char* key) {
  if (!obj.is_object()) bad(std::string("expected an object holding '") + key + "'");
  auto it = obj.find(key);
  if (it == obj.end()) bad(std::string("missing field '") + key + "'");
  return *it;
}

inline std::size_t as_uint(const json& v, const char* what) {
  if (!v.is_number_unsigned()) bad(std::string(what) + " must be a non-negative integer");
  const auto u = v.get<std::uint64_t>();
  if (u > (std::uint64_t{1} << 40)) bad(std::string(what) + " is implausibly large");
  return static_cast<std::size_t>(u);
}

inline Shape as_shape(const json& v, const char* what) {
  if (!v.is_array()) bad(std::string(what) + " must be an array");
  Shape s;
  for (const auto& e : v) s.push_back(as_uint(e, what));
  return s;
}

inline Padding as_padding(const json& v) {
  if (!v.is_string()) bad("padding must be a string");
  const auto& s = v.get_ref<const std::string&>();
  if (s == "valid") return Padding::Valid;
  if (s == "same") return Padding::Same;
  bad("unknown padding '" + s + "'");
}

inline std::pair<std::size_t, std::size_t> as_pair(const json& v, const char* what) {
  Shape s = as_shape(v, what);
  if (s.size() != 2) bad(std::string(what) + " must have two entries");
  return {s[0], s[1]};
}

inline LayerParams parse_params(LayerKind kind, const json& j) {
  if (!j.is_object()) bad("params must be an object");
  LayerParams p;
  switch (kind) {
    case LayerKind::Dense:
      p.units = as_uint(field(j, "units"), "units");
      break;
    case LayerKind::Conv2D:
      std::tie(p.kernel_h, p.kernel_w) = as_pair(field(j, "kernel"), "kernel");
      p.in_channels = as_uint(field(j, "in_channels"), "in_channels");
      p.out_channels = as_uint(field(j, "out_channels"), "out_channels");
      p.stride = as_uint(field(j, "stride"), "stride");
      p.padding = as_padding(field(j, "padding"));
      break;
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D:
      std::tie(p.kernel_h, p.kernel_w) = as_pair(field(j, "window"), "window");
      p.stride = as_uint(field(j, "stride"), "stride");
      p.padding = as_padding(field(j, "padding"));
      break;
    default:
      break;
  }
  return p;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

struct Span {
  std::size_t offset, len;
  std::string owner;
};

inline Tensor read_span(const std::vector<std::uint8_t>& blob, const Span& s, const Shape& shape) {
  std::size_t count = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("layer '" + s.owner + "': zero extent in stored shape");
    if (count > std::numeric_limits<std::size_t>::max() / e) {
      throw ShapeError("layer '" + s.owner + "': stored shape overflows");
    }
    count *= e;
  }
  if (shape.empty() || count * 4 != s.len) {
    throw ShapeError("layer '" + s.owner + "': shape " + shape_string(shape) + " does not match " +
                     std::to_string(s.len) + " stored bytes");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, blob.data() + s.offset + 4 * i, 4);
    values[i] = f;
  }
  return Tensor(shape, std::move(values));
}

}  // namespace detail

/// Serialized form of a graph, without touching the filesystem.
struct Encoded {
  std::string manifest;
  std::vector<std::uint8_t> blob;
};

inline Encoded encode(const NetworkGraph& net) {
  using detail::json;
  Encoded enc;
  json layers = json::array();
  for (const LayerSpec& l : net.layers()) {
    json j;
    j["id"] = l.id;
    j["kind"] = std::string(to_string(l.kind));
    j["params"] = detail::params_json(l);
    j["inputs"] = l.inputs;
    j["weight_offset"] = l.weights ? enc.blob.size() : 0;
    if (l.weights) detail::append_floats(enc.blob, *l.weights);
    j["weight_len"] = l.weights ? l.weights->size() * 4 : 0;
    j["weight_shape"] = detail::shape_json(l.weights);
    j["bias_offset"] = l.bias ? enc.blob.size() : 0;
    if (l.bias) detail::append_floats(enc.blob, *l.bias);
    j["bias_len"] = l.bias ? l.bias->size() * 4 : 0;
    j["bias_shape"] = detail::shape_json(l.bias);
    layers.push_back(std::move(j));
  }
  json m;
  m["magic"] = std::string(kMagic);
  m["name"] = net.name();
  m["input_shape"] = net.input_shape();
  m["output_classes"] = net.output_classes();
  m["layers"] = std::move(layers);
  m["blob_length"] = enc.blob.size();
  m["blob_checksum"] = crc32_of(enc.blob);
  enc.manifest = m.dump();
  return enc;
}

inline NetworkGraph decode(const std::string& manifest_text, const std::vector<std::uint8_t>& blob) {
  using detail::json;
  try {
    json m;
    try {
      m = json::parse(manifest_text);
    } catch (const json::parse_error& e) {
      detail::bad(std::string("not valid JSON: ") + e.what());
    }
    const json& magic = detail::field(m, "magic");
    if (!magic.is_string() || magic.get<std::string>() != kMagic) detail::bad("bad magic");

    const std::size_t blob_len = detail::as_uint(detail::field(m, "blob_length"), "blob_length");
    const json& crc = detail::field(m, "blob_checksum");
    if (!crc.is_number_unsigned() || crc.get<std::uint64_t>() > 0xffffffffu) {
      detail::bad("blob_checksum must be a 32-bit unsigned integer");
    }
    if (blob.size() != blob_len) {
      throw CorruptionError("blob holds " + std::to_string(blob.size()) + " bytes, manifest declares " +
                            std::to_string(blob_len));
    }
    if (crc32_of(blob) != crc.get<std::uint32_t>()) {
      throw CorruptionError("blob checksum mismatch");
    }

    const json& name = detail::field(m, "name");
    if (!name.is_string()) detail::bad("name must be a string");
    Shape input_shape = detail::as_shape(detail::field(m, "input_shape"), "input_shape");
    const std::size_t classes = detail::as_uint(detail::field(m, "output_classes"), "output_classes");

    const json& jl = detail::field(m, "layers");
    if (!jl.is_array()) detail::bad("layers must be an array");
    std::vector<detail::Span> spans;
    std::vector<LayerSpec> layers;
    for (const json& j : jl) {
      LayerSpec l;
      const json& id = detail::field(j, "id");
      if (!id.is_string()) detail::bad("layer id must be a string");
      l.id = id.get<std::string>();
      const json& kind = detail::field(j, "kind");
      if (!kind.is_string()) detail::bad("layer '" + l.id + "': kind must be a string");
      auto k = parse_layer_kind(kind.get<std::string>());
      if (!k) detail::bad("layer '" + l.id + "': unknown kind '" + kind.get<std::string>() + "'");
      l.kind = *k;
      l.params = detail::parse_params(l.kind, detail::field(j, "params"));
      const json& inputs = detail::field(j, "inputs");
      if (!inputs.is_array()) detail::bad("layer '" + l.id + "': inputs must be an array");
      for (const json& s : inputs) {
        if (!s.is_string()) detail::bad("layer '" + l.id + "': input ids must be strings");
        l.inputs.push_back(s.get<std::string>());
      }
      if (l.inputs.empty()) detail::bad("layer '" + l.id + "': inputs must be explicit");

      auto span_of = [&](const char* off_key, const char* len_key, const char* shape_key,
                         std::optional<Tensor>& dst) {
        detail::Span s{detail::as_uint(detail::field(j, off_key), off_key),
                       detail::as_uint(detail::field(j, len_key), len_key), l.id};
        Shape shape = detail::as_shape(detail::field(j, shape_key), shape_key);
        if (s.len == 0) {
          if (!shape.empty()) {
            throw ShapeError("layer '" + l.id + "': " + shape_key + " declared without data");
          }
          return;
        }
        if (s.offset % 4 != 0 || s.len % 4 != 0) {
          detail::bad("layer '" + l.id + "': span not 4-byte aligned");
        }
        if (s.offset > blob.size() || s.len > blob.size() - s.offset) {
          detail::bad("layer '" + l.id + "': span exceeds blob");
        }
        spans.push_back(s);
        dst = detail::read_span(blob, s, shape);
      };
      span_of("weight_offset", "weight_len", "weight_shape", l.weights);
      span_of("bias_offset", "bias_len", "bias_shape", l.bias);
      layers.push_back(std::move(l));
    }

    std::sort(spans.begin(), spans.end(),
              [](const auto& a, const auto& b) { return a.offset < b.offset; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].offset + spans[i - 1].len > spans[i].offset) {
        detail::bad("spans of '" + spans[i - 1].owner + "' and '" + spans[i].owner + "' overlap");
      }
    }

    NetworkGraph net(name.get<std::string>(), std::move(input_shape), std::move(layers));
    if (net.output_classes() != classes) {
      throw ShapeError("output_classes " + std::to_string(classes) + " but graph produces " +
                       std::to_string(net.output_classes()));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

inline void save(const NetworkGraph& net, const std::string& path) {
  const ModelPaths p = model_paths(path);
  const Encoded enc = encode(net);
  detail::write_file(p.blob, enc.blob);
  detail::write_file(p.manifest, std::span(reinterpret_cast<const std::uint8_t*>(enc.manifest.data()),
                                           enc.manifest.size()));
}

inline NetworkGraph load(const std::string& path) {
  const ModelPaths p = model_paths(path);
  const auto manifest = detail::read_file(p.manifest);
  const auto blob = detail::read_file(p.blob);
  return decode(std::string(manifest.begin(), manifest.end()), blob);
}

/// Name of the error class for a load failure, used in reports.
inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const CorruptionError*>(&e)) return "CorruptionError";
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const GraphError*>(&e)) return "GraphError";
  if (dynamic_cast<const IoError*>(&e)) return "IoError";
  return "Error";
}

/// Shortcut flavor of one residual Add layer.
struct ResidualUnit {
  std::string add_id;
  bool identity = false;
};

/// An Add whose one operand is an ancestor of the other has an identity
/// shortcut; otherwise both branches transform the input (projection).
inline std::vector<ResidualUnit> residual_units(const NetworkGraph& net) {
  auto is_ancestor = [&](int anc, int node) {
    if (anc < 0) return true;
    std::vector<int> stack{node};
    std::vector<bool> seen(net.size(), false);
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      if (v == anc) return true;
      if (v < 0 || seen[static_cast<std::size_t>(v)]) continue;
      seen[static_cast<std::size_t>(v)] = true;
      for (int s : net.input_indices(static_cast<std::size_t>(v))) stack.push_back(s);
    }
    return false;
  };
  std::vector<ResidualUnit> units;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (net.layer(i).kind != LayerKind::Add) continue;
    const auto& s = net.input_indices(i);
    units.push_back({net.layer(i).id, is_ancestor(s[0], s[1]) || is_ancestor(s[1], s[0])});
  }
  return units;
}

struct ValidationReport {
  bool ok = false;
  std::string text;
};

inline std::string describe(const NetworkGraph& net) {
  std::ostringstream os;
  os << "model: " << net.name() << "\n";
  os << "input: " << shape_string(net.input_shape()) << "\n";
  os << "output_classes: " << net.output_classes() << "\n";
  os << "layers: " << net.size() << "\n";
  os << "parameters: " << net.parameter_count() << "\n";
  os << "index,id,kind,inputs,output_shape,parameters\n";
  for (std::size_t i = 0; i < net.size(); ++i) {
    const LayerSpec& l = net.layer(i);
    std::size_t params = (l.weights ? l.weights->size() : 0) + (l.bias ? l.bias->size() : 0);
    os << i << ',' << l.id << ',' << to_string(l.kind) << ',';
    for (std::size_t k = 0; k < l.inputs.size(); ++k) os << (k ? "+" : "") << l.inputs[k];
    os << ',' << shape_string(net.output_shape(i)) << ',' << params << "\n";
  }
  const auto units = residual_units(net);
  os << "residual_units: " << units.size() << "\n";
  for (const auto& u : units) {
    os << "  " << u.add_id << ": " << (u.identity ? "identity" : "projection") << " shortcut\n";
  }
  return os.str();
}

/// Loads and describes a model; failures are reported, not thrown.
inline ValidationReport validate(const std::string& path) {
  ValidationReport r;
  try {
    NetworkGraph net = load(path);
    r.text = describe(net) + "status: OK\n";
    r.ok = true;
  } catch (const Error& e) {
    r.text = "status: INVALID\nerror: " + error_kind(e) + ": " + e.what() + "\n";
  }
  return r;
}

}  // namespace rlpm::model_io

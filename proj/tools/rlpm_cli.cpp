// rlpm: inference, relevance maps, pixel flipping, prototypes, patch->whole
// conversion and model validation from the command line.
//
// Exit codes: 0 ok, 1 usage, 2 data/model error, 3 numerics error.
// The resolved configuration is logged to stderr; stdout carries results only.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rlpm/rlpm.hpp"

namespace fs = std::filesystem;
using namespace rlpm;

namespace {

constexpr double kDefaultEpsilon = 1e-6;

/// Shortest round-trip decimal form, e.g. 1e-06.
std::string shortest(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct UsageError : Error {
  using Error::Error;
};

class ConfigLog {
 public:
  explicit ConfigLog(std::string cmd) : cmd_(std::move(cmd)) {}

  template <typename T>
  ConfigLog& add(const std::string& key, const T& value) {
    std::ostringstream os;
    os << value;
    entries_.emplace_back(key, os.str());
    return *this;
  }
  ConfigLog& add(const std::string& key, double value) { return add(key, shortest(value)); }

  void emit() const {
    for (const auto& [k, v] : entries_) std::cerr << "config " << cmd_ << "." << k << " = " << v << "\n";
  }

 private:
  std::string cmd_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

image_io::ImageFormat parse_format(const std::string& s) {
  if (s == "auto") return image_io::ImageFormat::Auto;
  if (s == "pgm") return image_io::ImageFormat::Pgm;
  return image_io::ImageFormat::Raw32;
}

/// Reads an image and replicates grayscale across the model's channels.
Tensor load_input(const NetworkGraph& net, const std::string& path, const std::string& format) {
  Tensor img = image_io::read_image(path, parse_format(format));
  const Shape& want = net.input_shape();
  if (want.size() == 3) img = match_channels(img, want[2]);
  if (img.shape() != want) {
    throw ShapeError("image '" + path + "' has shape " + shape_string(img.shape()) + ", model '" + net.name() +
                     "' expects " + shape_string(want));
  }
  return img;
}

std::pair<double, double> parse_bounds(const std::string& s) {
  double lo = 0.0, hi = 0.0;
  char comma = 0, tail = 0;
  if (std::sscanf(s.c_str(), "%lf%c%lf%c", &lo, &comma, &hi, &tail) != 3 || comma != ',') {
    throw UsageError("--bounds expects LO,HI, got '" + s + "'");
  }
  return {lo, hi};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const std::vector<std::string> kRuleNames{"lrp0", "lrp-eps", "zplus", "zb", "wsquare", "deep-taylor", "gxi"};

Method method_for(const std::string& rule, double epsilon, const std::optional<std::pair<double, double>>& bounds) {
  if (rule == "lrp0") return RuleConfig::lrp0();
  if (rule == "lrp-eps") return RuleConfig::lrp_eps(epsilon);
  if (rule == "zplus") return RuleConfig::zplus();
  if (rule == "wsquare") return RuleConfig::wsquare();
  if (rule == "gxi") return RuleConfig::gradient_times_input();
  if (rule == "zb") {
    if (!bounds) throw UsageError("rule zb needs --bounds LO,HI");
    return RuleConfig::zb(bounds->first, bounds->second);
  }
  if (rule == "deep-taylor") {
    return bounds ? Method(DeepTaylorPreset::bounded(bounds->first, bounds->second))
                  : Method(DeepTaylorPreset::unbounded());
  }
  throw UsageError("unknown rule '" + rule + "'");
}

FlipPolicy parse_policy(const std::string& s) { return s == "mean" ? FlipPolicy::ImageMean : FlipPolicy::Zero; }

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string model, image, format = "auto";
};

int run_infer(const InferArgs& a) {
  ConfigLog("infer").add("model", a.model).add("image", a.image).add("format", a.format).emit();
  NetworkGraph net = model_io::load(a.model);
  Tensor x = load_input(net, a.image, a.format);
  std::cout << image_io::probability_csv(class_probabilities(net, x));
  return 0;
}

struct ExplainArgs {
  std::string model, image, format = "auto", rule, out, png_out, bounds;
  std::size_t cls = 0;
  std::optional<double> epsilon;
};

int run_explain(const ExplainArgs& a) {
  const double eps = a.epsilon.value_or(a.rule == "lrp-eps" ? kDefaultEpsilon : 0.0);
  std::optional<std::pair<double, double>> bounds;
  if (!a.bounds.empty()) bounds = parse_bounds(a.bounds);
  ConfigLog log("explain");
  log.add("model", a.model).add("image", a.image).add("format", a.format).add("class", a.cls).add("rule", a.rule);
  log.add("epsilon", eps).add("bounds", a.bounds.empty() ? std::string("none") : a.bounds);
  log.add("out", a.out).add("png_out", a.png_out.empty() ? std::string("none") : a.png_out).emit();

  const Method method = method_for(a.rule, eps, bounds);
  NetworkGraph net = model_io::load(a.model);
  Tensor x = load_input(net, a.image, a.format);
  RelevanceMap map = explain(net, x, a.cls, method);
  image_io::write_relevance_csv(map.values, a.out);
  if (!a.png_out.empty()) {
    render::to_image(render::normalize_relevance(render::collapse_channels(map.values)), {}, a.png_out);
  }
  const ConservationReport rep = conservation_report(map);
  std::cout << "method,class,start_value,relevance_sum,leak\n"
            << method_name(method) << ',' << a.cls << ',' << image_io::format_double(rep.start_value) << ','
            << image_io::format_double(rep.sum_in) << ',' << image_io::format_double(rep.leak) << "\n";
  return 0;
}

struct FlipArgs {
  std::string model, image, format = "auto", map, policy = "zero";
  double batch = kDefaultBatchFraction;
  std::optional<std::size_t> cls;
};

int run_flip(const FlipArgs& a) {
  NetworkGraph net = model_io::load(a.model);
  Tensor x = load_input(net, a.image, a.format);
  const std::size_t target = a.cls.value_or(predict(net, x));
  ConfigLog("flip")
      .add("model", a.model).add("image", a.image).add("format", a.format).add("map", a.map)
      .add("policy", a.policy).add("batch", a.batch)
      .add("class", std::to_string(target) + (a.cls ? "" : " (predicted)"))
      .emit();
  Tensor rel = image_io::read_relevance_csv(a.map, x.shape());
  FlipCurve c = pixel_flip_curve(net, x, rel, target, parse_policy(a.policy), a.batch);
  std::cout << "fraction,score\n";
  for (std::size_t i = 0; i < c.fractions.size(); ++i) {
    std::cout << image_io::format_double(c.fractions[i]) << ',' << image_io::format_double(c.scores[i]) << "\n";
  }
  std::cout << "auc," << fixed6(c.auc) << "\n";
  return 0;
}

struct CompareArgs {
  std::string model, images, rules = "deep-taylor", format = "auto", policy = "zero", bounds;
  double batch = kDefaultBatchFraction, epsilon = kDefaultEpsilon;
  std::uint64_t seed = 0;
  std::optional<std::size_t> cls;
  bool summary = false;
};

int run_compare(const CompareArgs& a) {
  std::optional<std::pair<double, double>> bounds;
  if (!a.bounds.empty()) bounds = parse_bounds(a.bounds);
  std::vector<AttributionMethod> methods{AttributionMethod::random()};
  std::vector<std::string> labels{"random"};
  for (const std::string& r : split_list(a.rules)) {
    if (r == "random") continue;
    methods.push_back(AttributionMethod::of(method_for(r, a.epsilon, bounds)));
    labels.push_back(r);
  }

  std::vector<fs::path> files;
  if (!fs::is_directory(a.images)) throw IoError("'" + a.images + "' is not a directory");
  for (const auto& e : fs::directory_iterator(a.images)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".raw" || ext == ".raw32")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .pgm/.raw images in '" + a.images + "'");

  const std::size_t threads = thread_count_from_env();
  std::string rule_list;
  for (std::size_t m = 0; m < labels.size(); ++m) rule_list += (m ? "," : "") + labels[m];
  ConfigLog("compare")
      .add("model", a.model).add("images", a.images).add("image_count", files.size()).add("rules", rule_list)
      .add("epsilon", a.epsilon).add("bounds", a.bounds.empty() ? std::string("none") : a.bounds)
      .add("policy", a.policy).add("batch", a.batch).add("seed", a.seed)
      .add("class", a.cls ? std::to_string(*a.cls) : std::string("predicted")).add("threads", threads)
      .emit();

  NetworkGraph net = model_io::load(a.model);
  std::vector<Tensor> inputs;
  for (const auto& f : files) inputs.push_back(load_input(net, f.string(), a.format));
  CompareOptions opt;
  opt.policy = parse_policy(a.policy);
  opt.batch_fraction = a.batch;
  opt.seed = a.seed;
  opt.target_class = a.cls;
  opt.threads = threads;
  const auto table = compare_methods(net, inputs, methods, opt);

  std::cout << "method,image_id,auc\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    for (std::size_t m = 0; m < table.size(); ++m) {
      std::cout << labels[m] << ',' << files[i].stem().string() << ',' << fixed6(table[m].aucs[i]) << "\n";
    }
  }
  std::ostream& sum = a.summary ? std::cout : std::cerr;
  if (a.summary) sum << "\n";
  sum << "method,mean_auc,std_auc\n";
  for (std::size_t m = 0; m < table.size(); ++m) {
    sum << labels[m] << ',' << fixed6(table[m].mean_auc) << ',' << fixed6(table[m].std_auc) << "\n";
  }
  return 0;
}

struct PrototypeArgs {
  std::string model, out, trace;
  std::size_t cls = 0, steps = 100;
  double lambda = 0.0, step_size = 0.1, sigma = 0.1;
  std::optional<std::uint64_t> seed;
};

int run_prototype(const PrototypeArgs& a) {
  PrototypeConfig cfg;
  cfg.lambda = a.lambda;
  cfg.steps = a.steps;
  cfg.step_size = a.step_size;
  cfg.target_class = a.cls;
  if (a.seed) cfg.init = GaussianInit{a.sigma, *a.seed};
  ConfigLog("prototype")
      .add("model", a.model).add("class", a.cls).add("lambda", a.lambda).add("steps", a.steps)
      .add("step_size", a.step_size)
      .add("init", a.seed ? "gaussian(sigma=" + shortest(a.sigma) + ", seed=" + std::to_string(*a.seed) + ")"
                          : std::string("zeros"))
      .add("out", a.out).add("trace", a.trace.empty() ? std::string("none") : a.trace)
      .emit();

  NetworkGraph net = model_io::load(a.model);
  PrototypeResult r = activation_maximize(net, cfg);
  Tensor plane = render::collapse_channels(r.x);
  render::to_image(render::normalize_relevance(plane), {}, a.out, render::ImageMode::Grayscale);

  std::ostringstream csv;
  csv << "step,objective\n";
  for (std::size_t k = 0; k < r.objective_trace.size(); ++k) {
    csv << k << ',' << image_io::format_double(r.objective_trace[k]) << "\n";
  }
  const std::string text = csv.str();
  if (!a.trace.empty()) render::write_bytes(a.trace, std::vector<std::uint8_t>(text.begin(), text.end()));
  std::cout << text;
  return 0;
}

struct ConvertArgs {
  std::string patch_model, out, image_size, hidden = "64";
  std::size_t pool = 2;
  std::uint64_t seed = 0;
};

int run_convert(const ConvertArgs& a) {
  NetworkGraph patch = model_io::load(a.patch_model);
  PatchClassifier pc(patch);
  Shape image{pc.patch_rows() * 4, pc.patch_cols() * 4, patch.input_shape()[2]};
  if (!a.image_size.empty()) {
    std::size_t r = 0, c = 0;
    char comma = 0, tail = 0;
    if (std::sscanf(a.image_size.c_str(), "%zu%c%zu%c", &r, &comma, &c, &tail) != 3 || comma != ',' || r == 0 || c == 0) {
      throw UsageError("--image-size expects ROWS,COLS, got '" + a.image_size + "'");
    }
    image[0] = r;
    image[1] = c;
  }
  HeadConfig head;
  head.pool_window = a.pool;
  head.seed = a.seed;
  head.hidden_widths.clear();
  for (const std::string& h : split_list(a.hidden)) {
    std::size_t w = 0;
    char tail = 0;
    if (std::sscanf(h.c_str(), "%zu%c", &w, &tail) != 1 || w == 0) throw UsageError("bad --hidden width '" + h + "'");
    head.hidden_widths.push_back(w);
  }
  ConfigLog("convert")
      .add("patch_model", a.patch_model).add("out", a.out).add("image_size", shape_string(image))
      .add("pool", a.pool).add("hidden", a.hidden.empty() ? std::string("none") : a.hidden).add("seed", a.seed)
      .emit();

  NetworkGraph fconv = dense_to_conv(pc);
  NetworkGraph whole = build_whole_image_classifier(fconv, image, head);
  model_io::save(whole, a.out);
  const NetworkGraph bound = fconv.with_input_shape(image);
  std::cout << "patch_shape," << shape_string(patch.input_shape()) << "\n"
            << "image_shape," << shape_string(image) << "\n"
            << "effective_stride," << effective_stride(fconv) << "\n"
            << "heatmap_shape," << shape_string(bound.output_shape()) << "\n"
            << "parameters," << whole.parameter_count() << "\n";
  return 0;
}

int run_validate(const std::string& model) {
  ConfigLog("validate").add("model", model).emit();
  const model_io::ValidationReport r = model_io::validate(model);
  std::cout << r.text;
  return r.ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rlpm: relevance propagation and Deep Taylor explanations for CNNs"};
  app.require_subcommand(1);
  const std::vector<std::string> formats{"auto", "pgm", "raw32"};

  InferArgs infer_a;
  auto* infer_c = app.add_subcommand("infer", "Print class probabilities as CSV");
  infer_c->add_option("--model", infer_a.model, "Model path (base, .json or .bin)")->required();
  infer_c->add_option("--image", infer_a.image, "Input image (PGM or raw32)")->required();
  infer_c->add_option("--format", infer_a.format, "Image format")->check(CLI::IsMember(formats));

  ExplainArgs ex;
  auto* explain_c = app.add_subcommand("explain", "Write a relevance map CSV");
  explain_c->add_option("--model", ex.model)->required();
  explain_c->add_option("--image", ex.image)->required();
  explain_c->add_option("--format", ex.format)->check(CLI::IsMember(formats));
  explain_c->add_option("--class", ex.cls, "Class to explain")->required();
  explain_c->add_option("--rule", ex.rule)->required()->check(CLI::IsMember(kRuleNames));
  explain_c->add_option("--epsilon", ex.epsilon, "Stabilizer for lrp-eps (default 1e-6)");
  explain_c->add_option("--bounds", ex.bounds, "Input range LO,HI for zb / bounded deep-taylor");
  explain_c->add_option("--out", ex.out, "Relevance CSV (row,col,channel,value)")->required();
  explain_c->add_option("--png-out", ex.png_out, "Heatmap image (binary PPM)");

  FlipArgs fl;
  auto* flip_c = app.add_subcommand("flip", "Pixel-flipping curve and AUC for a relevance map");
  flip_c->add_option("--model", fl.model)->required();
  flip_c->add_option("--image", fl.image)->required();
  flip_c->add_option("--format", fl.format)->check(CLI::IsMember(formats));
  flip_c->add_option("--map", fl.map, "Relevance CSV")->required();
  flip_c->add_option("--policy", fl.policy)->check(CLI::IsMember({"zero", "mean"}));
  flip_c->add_option("--batch", fl.batch, "Fraction of pixels per flip batch");
  flip_c->add_option("--class", fl.cls, "Target class (default: predicted)");

  CompareArgs cmp;
  auto* compare_c = app.add_subcommand("compare", "Per-image AUC table for several methods plus a random baseline");
  compare_c->add_option("--model", cmp.model)->required();
  compare_c->add_option("--images", cmp.images, "Directory of .pgm/.raw images")->required();
  compare_c->add_option("--rules", cmp.rules, "Comma-separated rules");
  compare_c->add_option("--format", cmp.format)->check(CLI::IsMember(formats));
  compare_c->add_option("--seed", cmp.seed, "Random baseline seed (image i uses seed + i)");
  compare_c->add_option("--policy", cmp.policy)->check(CLI::IsMember({"zero", "mean"}));
  compare_c->add_option("--batch", cmp.batch);
  compare_c->add_option("--epsilon", cmp.epsilon);
  compare_c->add_option("--bounds", cmp.bounds);
  compare_c->add_option("--class", cmp.cls);
  compare_c->add_flag("--summary", cmp.summary, "Append mean/std per method to stdout");

  PrototypeArgs pr;
  auto* proto_c = app.add_subcommand("prototype", "Activation maximization for one class");
  proto_c->add_option("--model", pr.model)->required();
  proto_c->add_option("--class", pr.cls)->required();
  proto_c->add_option("--lambda", pr.lambda)->required();
  proto_c->add_option("--steps", pr.steps)->required();
  proto_c->add_option("--step-size", pr.step_size)->required();
  proto_c->add_option("--seed", pr.seed, "Gaussian init seed (zeros when absent)");
  proto_c->add_option("--sigma", pr.sigma, "Gaussian init standard deviation");
  proto_c->add_option("--out", pr.out, "Prototype image (PGM)")->required();
  proto_c->add_option("--trace", pr.trace, "Objective trace CSV");

  ConvertArgs cv;
  auto* convert_c = app.add_subcommand("convert", "Patch classifier -> whole-image classifier");
  convert_c->add_option("--patch-model", cv.patch_model)->required();
  convert_c->add_option("--out", cv.out)->required();
  convert_c->add_option("--image-size", cv.image_size, "ROWS,COLS (default 4x the patch)");
  convert_c->add_option("--pool", cv.pool, "Heatmap max-pool window");
  convert_c->add_option("--hidden", cv.hidden, "Comma-separated hidden widths");
  convert_c->add_option("--seed", cv.seed, "Head initialization seed");

  std::string validate_model;
  auto* validate_c = app.add_subcommand("validate", "Check a model file and print its layer table");
  validate_c->add_option("--model", validate_model)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*infer_c) return run_infer(infer_a);
    if (*explain_c) return run_explain(ex);
    if (*flip_c) return run_flip(fl);
    if (*compare_c) return run_compare(cmp);
    if (*proto_c) return run_prototype(pr);
    if (*convert_c) return run_convert(cv);
    if (*validate_c) return run_validate(validate_model);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const NumericsError& e) {
    std::cerr << "numerics error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

#include "dflm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dflm {

namespace {

const std::set<std::string> kRunKeys = {
    "scale",      "problem",  "m",          "dt",         "dt_max",          "ns",
    "nr",         "nb",       "lr",         "lr_final",   "beta1",           "beta2",
    "eps",
    "inner_steps", "iterations", "seed",    "mode",       "hidden",          "activation",
    "boundary_weight", "eval_grid", "eval_stride", "log_stride", "log_wall_time",
    "checkpoint_stride", "output_dir"};

const std::set<std::string> kSweepKeys = {"dt_values",    "dt_preset",   "ns_values",
                                          "trials",       "bias_n_outer", "bias_margin",
                                          "bias_gradient_samples"};

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

class Reader {
 public:
  explicit Reader(const KeyValueDoc& doc) : doc_(doc) {}

  bool has(const std::string& key) const { return doc_.has(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    const auto it = doc_.entries.find(key);
    const std::string where =
        it != doc_.entries.end() ? doc_.source + ":" + std::to_string(it->second.line) + ": " : "";
    throw ConfigError(where + key + ": " + why);
  }

  std::string raw(const std::string& key) const { return doc_.entries.at(key).raw; }

  std::string str(const std::string& key) const {
    std::string v = raw(key);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    if (v.find_first_of("\"[]") != std::string::npos) fail(key, "expected a string");
    return v;
  }

  double number(const std::string& key, const std::string& text) const {
    double v = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
      fail(key, "expected a finite number, got '" + text + "'");
    }
    return v;
  }

  double real(const std::string& key) const { return number(key, raw(key)); }

  long long integer(const std::string& key, const std::string& text) const {
    long long v = 0;
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec == std::errc() && ptr == last) return v;
    // Accept integral values written in floating notation such as 2e4.
    const double d = number(key, text);
    if (d != std::floor(d) || std::abs(d) > 9.0e18) fail(key, "expected an integer, got '" + text + "'");
    return static_cast<long long>(d);
  }

  int int32(const std::string& key) const {
    const long long v = integer(key, raw(key));
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      fail(key, "integer out of range");
    }
    return static_cast<int>(v);
  }

  std::uint64_t uint64(const std::string& key) const {
    const std::string text = raw(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail(key, "expected an unsigned integer");
    return v;
  }

  bool boolean(const std::string& key) const {
    const std::string v = raw(key);
    if (v == "true") return true;
    if (v == "false") return false;
    fail(key, "expected true or false");
  }

  std::vector<std::string> items(const std::string& key) const {
    const std::string v = raw(key);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') fail(key, "expected an array [a, b, ...]");
    std::vector<std::string> out;
    std::string inner = v.substr(1, v.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) fail(key, "empty array element");
      out.push_back(item);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : items(key)) out.push_back(number(key, s));
    return out;
  }

  std::vector<int> ints(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : items(key)) out.push_back(static_cast<int>(integer(key, s)));
    return out;
  }

 private:
  const KeyValueDoc& doc_;
};

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out + "]";
}

void apply_scale_defaults(RunConfig& cfg) {
  if (cfg.scale == Scale::paper) {
    cfg.train.iterations = 150000;
    cfg.train.hidden = {200, 200, 200};
    cfg.train.eval_grid = 1001;
  } else {
    cfg.train.iterations = 20000;
    cfg.train.hidden = {64, 64, 64};
    cfg.train.eval_grid = 201;
  }
}

Scale read_scale(const Reader& r, bool paper_scale) {
  if (paper_scale) return Scale::paper;
  if (!r.has("scale")) return Scale::desk;
  const std::string s = r.str("scale");
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  r.fail("scale", "expected \"desk\" or \"paper\"");
}

void check_known(const KeyValueDoc& doc, bool allow_sweep) {
  for (const auto& [key, entry] : doc.entries) {
    if (kRunKeys.count(key) || (allow_sweep && kSweepKeys.count(key))) continue;
    throw ConfigError(doc.source + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
  }
}

RunConfig read_run(const KeyValueDoc& doc, bool paper_scale) {
  const Reader r(doc);
  RunConfig cfg;
  cfg.scale = read_scale(r, paper_scale);
  apply_scale_defaults(cfg);
  TrainConfig& t = cfg.train;
  if (r.has("problem")) cfg.problem.name = r.str("problem");
  if (r.has("m")) cfg.problem.m = r.int32("m");
  if (r.has("dt")) t.horizon = r.real("dt");
  if (r.has("dt_max")) t.max_step = r.real("dt_max");
  if (r.has("ns")) t.walkers = r.int32("ns");
  if (r.has("nr")) t.interior_points = r.int32("nr");
  if (r.has("nb")) t.boundary_points = r.int32("nb");
  if (r.has("lr")) t.adam.learning_rate = r.real("lr");
  if (r.has("lr_final")) t.final_learning_rate = r.real("lr_final");
  if (r.has("beta1")) t.adam.beta1 = r.real("beta1");
  if (r.has("beta2")) t.adam.beta2 = r.real("beta2");
  if (r.has("eps")) t.adam.epsilon = r.real("eps");
  if (r.has("inner_steps")) t.inner_steps = r.int32("inner_steps");
  if (r.has("iterations")) t.iterations = r.int32("iterations");
  if (r.has("seed")) t.seed = r.uint64("seed");
  if (r.has("mode")) {
    try {
      t.mode = parse_walker_mode(r.str("mode"));
    } catch (const std::invalid_argument& e) {
      r.fail("mode", e.what());
    }
  }
  if (r.has("hidden")) t.hidden = r.ints("hidden");
  if (r.has("activation")) {
    try {
      t.activation = nn::parse_activation(r.str("activation"));
    } catch (const std::invalid_argument& e) {
      r.fail("activation", e.what());
    }
  }
  if (r.has("boundary_weight")) t.boundary_weight = r.real("boundary_weight");
  if (r.has("eval_grid")) t.eval_grid = r.int32("eval_grid");
  if (r.has("eval_stride")) t.eval_stride = r.int32("eval_stride");
  if (r.has("log_stride")) t.log_stride = r.int32("log_stride");
  if (r.has("log_wall_time")) t.log_wall_time = r.boolean("log_wall_time");
  if (r.has("checkpoint_stride")) cfg.checkpoint_stride = r.int32("checkpoint_stride");
  if (r.has("output_dir")) cfg.output_dir = r.str("output_dir");
  return cfg;
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& source) {
  KeyValueDoc doc;
  doc.source = source;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    bool in_string = false;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_string = !in_string;
      if (line[i] == '#' && !in_string) {
        cut = i;
        break;
      }
    }
    const std::string body = trim(std::string_view(line).substr(0, cut));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        })) {
      throw ConfigError(source + ":" + std::to_string(number) + ": invalid key '" + key + "'");
    }
    if (value.empty()) {
      throw ConfigError(source + ":" + std::to_string(number) + ": missing value for '" + key + "'");
    }
    if (!doc.entries.emplace(key, Entry{value, number}).second) {
      throw ConfigError(source + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

PdeProblem make_problem(const ProblemSpec& spec) {
  if (spec.name == "poisson") return poisson_problem(spec.m);
  throw ConfigError("problem: unknown problem '" + spec.name + "' (available: poisson)");
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  const TrainConfig& x = a.train;
  const TrainConfig& y = b.train;
  return a.scale == b.scale && a.problem == b.problem && a.output_dir == b.output_dir &&
         a.checkpoint_stride == b.checkpoint_stride && x.horizon == y.horizon &&
         x.max_step == y.max_step && x.walkers == y.walkers &&
         x.interior_points == y.interior_points && x.boundary_points == y.boundary_points &&
         x.adam.learning_rate == y.adam.learning_rate &&
         x.final_learning_rate == y.final_learning_rate && x.adam.beta1 == y.adam.beta1 &&
         x.adam.beta2 == y.adam.beta2 && x.adam.epsilon == y.adam.epsilon &&
         x.inner_steps == y.inner_steps && x.iterations == y.iterations && x.seed == y.seed &&
         x.mode == y.mode && x.hidden == y.hidden && x.activation == y.activation &&
         x.boundary_weight == y.boundary_weight && x.eval_grid == y.eval_grid &&
         x.eval_stride == y.eval_stride && x.log_stride == y.log_stride &&
         x.log_wall_time == y.log_wall_time;
}

bool operator==(const SweepSpec& a, const SweepSpec& b) {
  return a.dt_values == b.dt_values && a.dt_preset == b.dt_preset && a.ns_values == b.ns_values &&
         a.trials == b.trials && a.base == b.base && a.output_dir == b.output_dir &&
         a.bias_n_outer == b.bias_n_outer && a.bias_margin == b.bias_margin &&
         a.bias_gradient_samples == b.bias_gradient_samples;
}

std::vector<double> dt_ladder(const std::string& preset) {
  double base = 0.0;
  if (preset == "scaled") {
    base = 1e-4;
  } else if (preset == "literal") {
    base = 1.0;
  } else {
    throw ConfigError("dt_preset: expected \"scaled\" or \"literal\"");
  }
  std::vector<double> out;
  for (int p = 0; p <= 9; ++p) out.push_back(std::ldexp(base, p));
  return out;
}

void validate(const RunConfig& cfg) {
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.problem.m <= 0) throw ConfigError("m must be positive");
  if (cfg.checkpoint_stride < 0) throw ConfigError("checkpoint_stride must be non-negative");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must be nonempty");
  make_problem(cfg.problem);
}

void validate(const SweepSpec& spec) {
  validate(spec.base);
  if (spec.dt_values.empty()) throw ConfigError("dt_values must be nonempty");
  for (double dt : spec.dt_values) {
    if (!(dt > 0.0)) throw ConfigError("dt_values must all be positive");
  }
  if (spec.ns_values.empty()) throw ConfigError("ns_values must be nonempty");
  for (int ns : spec.ns_values) {
    if (ns <= 0) throw ConfigError("ns_values must all be positive");
  }
  if (spec.trials < 1) throw ConfigError("trials must be at least 1");
  if (spec.bias_n_outer < 100) throw ConfigError("bias_n_outer must be at least 100");
  if (spec.bias_margin < 0.0) throw ConfigError("bias_margin must be non-negative");
  if (spec.bias_gradient_samples < 1) throw ConfigError("bias_gradient_samples must be positive");
}

RunConfig parse_run_config(const KeyValueDoc& doc, bool paper_scale) {
  check_known(doc, false);
  RunConfig cfg = read_run(doc, paper_scale);
  validate(cfg);
  return cfg;
}

SweepSpec parse_sweep_spec(const KeyValueDoc& doc, bool paper_scale) {
  check_known(doc, true);
  const Reader r(doc);
  SweepSpec spec;
  spec.base = read_run(doc, paper_scale);
  spec.trials = spec.base.scale == Scale::paper ? 10 : 3;
  spec.output_dir = "runs/sweep";
  if (r.has("output_dir")) spec.output_dir = r.str("output_dir");
  if (r.has("dt_preset")) spec.dt_preset = r.str("dt_preset");
  spec.dt_values = r.has("dt_values") ? r.reals("dt_values") : dt_ladder(spec.dt_preset);
  if (r.has("ns_values")) spec.ns_values = r.ints("ns_values");
  if (r.has("trials")) spec.trials = r.int32("trials");
  if (r.has("bias_n_outer")) spec.bias_n_outer = r.int32("bias_n_outer");
  if (r.has("bias_margin")) spec.bias_margin = r.real("bias_margin");
  if (r.has("bias_gradient_samples")) spec.bias_gradient_samples = r.int32("bias_gradient_samples");
  spec.base.output_dir = spec.output_dir;
  validate(spec);
  return spec;
}

std::variant<RunConfig, SweepSpec> load_config(const std::filesystem::path& path, bool paper_scale) {
  const KeyValueDoc doc = KeyValueDoc::load(path);
  for (const auto& key : kSweepKeys) {
    if (doc.has(key)) return parse_sweep_spec(doc, paper_scale);
  }
  return parse_run_config(doc, paper_scale);
}

std::string to_config_text(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::ostringstream out;
  out << "scale = " << quote(cfg.scale == Scale::paper ? "paper" : "desk") << '\n'
      << "problem = " << quote(cfg.problem.name) << '\n'
      << "m = " << cfg.problem.m << '\n'
      << "dt = " << format_double(t.horizon) << '\n'
      << "dt_max = " << format_double(t.max_step) << '\n'
      << "ns = " << t.walkers << '\n'
      << "nr = " << t.interior_points << '\n'
      << "nb = " << t.boundary_points << '\n'
      << "lr = " << format_double(t.adam.learning_rate) << '\n'
      << "lr_final = " << format_double(t.final_learning_rate) << '\n'
      << "beta1 = " << format_double(t.adam.beta1) << '\n'
      << "beta2 = " << format_double(t.adam.beta2) << '\n'
      << "eps = " << format_double(t.adam.epsilon) << '\n'
      << "inner_steps = " << t.inner_steps << '\n'
      << "iterations = " << t.iterations << '\n'
      << "seed = " << t.seed << '\n'
      << "mode = " << quote(std::string(to_string(t.mode))) << '\n'
      << "hidden = " << join(t.hidden) << '\n'
      << "activation = " << quote(std::string(nn::to_string(t.activation))) << '\n'
      << "boundary_weight = " << format_double(t.boundary_weight) << '\n'
      << "eval_grid = " << t.eval_grid << '\n'
      << "eval_stride = " << t.eval_stride << '\n'
      << "log_stride = " << t.log_stride << '\n'
      << "log_wall_time = " << (t.log_wall_time ? "true" : "false") << '\n'
      << "checkpoint_stride = " << cfg.checkpoint_stride << '\n'
      << "output_dir = " << quote(cfg.output_dir) << '\n';
  return out.str();
}

std::string to_config_text(const SweepSpec& spec) {
  RunConfig base = spec.base;
  base.output_dir = spec.output_dir;
  std::ostringstream out;
  out << to_config_text(base) << "dt_preset = " << quote(spec.dt_preset) << '\n'
      << "dt_values = " << join(spec.dt_values) << '\n'
      << "ns_values = " << join(spec.ns_values) << '\n'
      << "trials = " << spec.trials << '\n'
      << "bias_n_outer = " << spec.bias_n_outer << '\n'
      << "bias_margin = " << format_double(spec.bias_margin) << '\n'
      << "bias_gradient_samples = " << spec.bias_gradient_samples << '\n';
  return out.str();
}

}  // namespace dflm

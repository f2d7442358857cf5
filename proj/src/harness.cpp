#include "dflm/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace dflm::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

json config_echo(const std::string& text) {
  json obj = json::object();
  for (const auto& [key, entry] : KeyValueDoc::parse(text).entries) obj[key] = entry.raw;
  return obj;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> json_optional(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

FunctionEvaluator poisson_evaluator(int m) {
  return FunctionEvaluator(
      2, [m](std::span<const double> x) { return poisson_exact(x, m); },
      [m](std::span<const double> x, std::span<double> g) { poisson_exact_gradient(x, m, g); });
}

double sine_field(std::span<const double> x) {
  return std::sin(2.0 * std::numbers::pi * x[0]) * std::sin(2.0 * std::numbers::pi * x[1]);
}

// ---- analysis parameters ---------------------------------------------------

class ParamReader {
 public:
  ParamReader(const Params& params, std::string which) : params_(params), which_(std::move(which)) {}

  bool has(const std::string& key) {
    used_.insert(key);
    return params_.count(key) != 0;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return to_real(key, params_.at(key));
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const double v = to_real(key, params_.at(key));
    if (v != std::floor(v) || std::abs(v) > std::numeric_limits<int>::max()) {
      throw UsageError(which_ + ": " + key + " must be an integer");
    }
    return static_cast<int>(v);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(params_.at(key), &pos);
      if (pos != params_.at(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw UsageError(which_ + ": " + key + " must be an unsigned integer");
    }
  }

  std::string text(const std::string& key, const std::string& fallback) {
    return has(key) ? params_.at(key) : fallback;
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string& v = params_.at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError(which_ + ": " + key + " must be true or false");
  }

  std::vector<double> reals(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    std::vector<double> out;
    std::stringstream ss(params_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_real(key, item));
    if (out.empty()) throw UsageError(which_ + ": " + key + " must be a nonempty list");
    return out;
  }

  std::vector<int> ints(const std::string& key, std::vector<int> fallback) {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (double v : reals(key, {})) {
      if (v != std::floor(v)) throw UsageError(which_ + ": " + key + " must hold integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  /// Rejects parameters the analysis never asked for.
  void finish() const {
    for (const auto& [key, value] : params_) {
      if (!used_.count(key)) throw UsageError(which_ + ": unknown parameter '" + key + "'");
    }
  }

 private:
  double to_real(const std::string& key, const std::string& s) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      throw UsageError(which_ + ": " + key + " expects a number, got '" + s + "'");
    }
  }

  const Params& params_;
  std::string which_;
  std::set<std::string> used_;
};

// Mean over trials per (dt, ns) of converged_loss_mean, then slopes.
json sweep_slopes(const std::vector<SummaryRow>& rows) {
  std::map<std::pair<double, int>, std::pair<double, int>> cells;
  for (const auto& r : rows) {
    auto& c = cells[{r.dt, r.ns}];
    c.first += r.converged_loss_mean;
    c.second += 1;
  }
  std::set<double> dts;
  std::set<int> nss;
  for (const auto& [key, v] : cells) {
    dts.insert(key.first);
    nss.insert(key.second);
  }
  json out = {{"dt_slopes", json::array()}, {"ns_slopes", json::array()}};
  for (int ns : nss) {
    std::vector<double> x, y;
    for (double dt : dts) {
      const auto it = cells.find({dt, ns});
      if (it == cells.end()) continue;
      x.push_back(dt);
      y.push_back(it->second.first / it->second.second);
    }
    if (x.size() >= 2) out["dt_slopes"].push_back({{"ns", ns}, {"slope", analysis::fit_loglog_slope(x, y)}});
  }
  for (double dt : dts) {
    std::vector<double> x, y;
    for (int ns : nss) {
      const auto it = cells.find({dt, ns});
      if (it == cells.end()) continue;
      x.push_back(ns);
      y.push_back(it->second.first / it->second.second);
    }
    if (x.size() >= 2) out["ns_slopes"].push_back({{"dt", dt}, {"slope", analysis::fit_loglog_slope(x, y)}});
  }
  return out;
}

// ---- individual analyses ---------------------------------------------------

int analyze_bias(ParamReader& p, const fs::path& out_dir, std::ostream& log) {
  BiasSuiteSettings s;
  const std::string field = p.text("field", "linear");
  if (field == "linear") {
    s.field = BiasField::linear;
  } else if (field == "poisson") {
    s.field = BiasField::poisson;
  } else {
    throw UsageError("bias: field must be linear or poisson");
  }
  s.m = p.integer("m", s.m);
  s.dt_values = p.reals("dt", s.dt_values);
  s.ns_values = p.ints("ns", s.ns_values);
  s.n_outer = p.integer("n_outer", s.n_outer);
  s.margin = p.real("margin", s.margin);
  s.max_step = p.real("max_step", s.max_step);
  s.seed = p.seed("seed", s.seed);
  s.gradient_samples = p.integer("gradient_samples", s.gradient_samples);
  p.finish();

  BiasSuiteResult r;
  try {
    r = bias_suite(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("bias: ") + e.what());
  }
  std::ostringstream csv;
  analysis::write_bias_csv(csv, r.reports);
  write_text_atomic(out_dir / "bias_report.csv", csv.str());
  json summary = {{"field", field},
                  {"dt_slopes", r.dt_slopes},
                  {"ns_slopes", r.ns_slopes},
                  {"passed", r.passed},
                  {"failures", r.failures}};
  write_json(out_dir / "bias_summary.json", summary);
  for (const auto& rep : r.reports) {
    log << "dt=" << rep.horizon << " ns=" << rep.walkers << " estimated=" << rep.estimated_bias
        << " predicted=" << rep.predicted_bias << " se=" << rep.std_error << '\n';
  }
  for (const auto& f : r.failures) log << "FAIL: " << f << '\n';
  return r.passed ? kSuccess : kAssertionFailure;
}

int analyze_chebyshev(ParamReader& p, const fs::path& out_dir, std::ostream& log) {
  analysis::ChebyshevSettings s;
  const int m = p.integer("m", 1);
  s.horizon = p.real("dt", s.horizon);
  s.max_step = p.real("max_step", s.max_step);
  s.walkers = p.integer("ns", s.walkers);
  s.epsilon = p.real("eps", s.epsilon);
  s.trials = p.integer("trials", s.trials);
  s.seed = p.seed("seed", s.seed);
  const std::vector<double> x = p.reals("x", {0.1, 0.2});
  p.finish();
  if (x.size() != 2) throw UsageError("chebyshev: x must have two coordinates");

  const PdeProblem problem = poisson_problem(m);
  if (!problem.domain.contains_open(x)) throw UsageError("chebyshev: x must lie inside the domain");
  analysis::ChebyshevReport r;
  try {
    r = analysis::chebyshev_check(poisson_evaluator(m), problem, x, s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("chebyshev: ") + e.what());
  }
  json doc = {{"x", x},
              {"dt", s.horizon},
              {"ns", s.walkers},
              {"eps", s.epsilon},
              {"trials", s.trials},
              {"tail_probability", r.tail_probability},
              {"tail_std_error", r.tail_std_error},
              {"bound", r.bound},
              {"exceeds_bound", r.exceeds_bound},
              {"exceeds_twice_bound", r.exceeds_twice_bound}};
  write_json(out_dir / "chebyshev_report.json", doc);
  log << "tail=" << r.tail_probability << " +- " << r.tail_std_error << " bound=" << r.bound << '\n';
  if (r.exceeds_bound) log << "note: tail exceeds the bound with constant 1\n";
  return r.exceeds_twice_bound ? kAssertionFailure : kSuccess;
}

int analyze_folded_normal(ParamReader& p, const fs::path& out_dir, std::ostream& log) {
  const int samples = p.integer("samples", 100000);
  const int tight = p.integer("tight_samples", 1000000);
  const std::uint64_t seed = p.seed("seed", 0);
  p.finish();
  FoldedNormalSuiteResult r;
  try {
    r = folded_normal_suite(samples, tight, seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("folded-normal: ") + e.what());
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "mu_norm,sigma,k,mc_estimate,std_error,bound,holds\n";
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    const auto& rep = r.reports[i];
    csv << r.mu_norms[i] << ',' << r.sigmas[i] << ',' << r.dims[i] << ',' << rep.mc_estimate << ','
        << rep.std_error << ',' << rep.bound << ',' << (rep.holds ? 1 : 0) << '\n';
    if (!rep.holds) log << "FAIL: |mu|=" << r.mu_norms[i] << " sigma=" << r.sigmas[i] << " k=" << r.dims[i] << '\n';
  }
  write_text_atomic(out_dir / "folded_normal.csv", csv.str());
  log << "tightness gap at mu=0, k=1: " << r.tight_rel_gap << '\n';
  return r.passed ? kSuccess : kAssertionFailure;
}

int analyze_learning_bound(ParamReader& p, const fs::path& out_dir, std::ostream& log) {
  const double dt = p.real("dt", 1e-2);
  const int order = p.integer("order", kDefaultQuadratureOrder);
  p.finish();
  if (!(dt >= 0.0)) throw UsageError("learning-bound: dt must be non-negative");
  LearningBoundSuiteResult r;
  try {
    r = learning_bound_suite(dt, order);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("learning-bound: ") + e.what());
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "family,x1,x2,measured,bound,holds,asserted\n";
  for (const auto& c : r.cases) {
    csv << c.family << ',' << c.report.x[0] << ',' << c.report.x[1] << ',' << c.report.measured << ','
        << c.report.bound << ',' << (c.report.holds ? 1 : 0) << ',' << (c.asserted ? 1 : 0) << '\n';
    if (!c.report.holds) {
      log << (c.asserted ? "FAIL: " : "reported: ") << c.family << " at (" << c.report.x[0] << ", "
          << c.report.x[1] << ") measured " << c.report.measured << " > bound " << c.report.bound << '\n';
    }
  }
  write_text_atomic(out_dir / "learning_bound.csv", csv.str());
  return r.passed ? kSuccess : kAssertionFailure;
}

int analyze_decay(ParamReader& p, const fs::path& out_dir, std::ostream& log) {
  const std::vector<double> dts = p.reals("dt", {1e-4, 1e-3, 1e-2});
  const int grid = p.integer("grid", 201);
  const bool force = p.flag("force", true);
  p.finish();
  DecaySuiteResult r;
  try {
    r = decay_suite(dts, grid, force);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("decay: ") + e.what());
  }
  std::ostringstream csv;
  csv.precision(17);
  csv << "dt,diff_norm,predicted,u_norm,interior_nodes\n";
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    const auto& row = r.table.rows[i];
    csv << row.horizon << ',' << row.diff_norm << ',' << r.predicted[i] << ',' << row.u_norm << ','
        << row.interior_nodes << '\n';
    log << "dt=" << row.horizon << " ||Tu-u||=" << row.diff_norm << " predicted=" << r.predicted[i]
        << " rel_gap=" << r.rel_gap[i] << '\n';
  }
  write_text_atomic(out_dir / "decay.csv", csv.str());
  write_json(out_dir / "decay_summary.json",
             {{"slope", std::isfinite(r.table.slope) ? json(r.table.slope) : json(nullptr)},
              {"passed", r.passed}});
  return r.passed ? kSuccess : kAssertionFailure;
}

// ---- sweep cells -------------------------------------------------------------

json run_training_cell(const SweepSpec& spec, double dt, int ns, int trial, const fs::path& dir,
                       std::ostream& log) {
  RunConfig cfg = spec.base;
  cfg.train.horizon = dt;
  cfg.train.walkers = ns;
  cfg.train.seed = cell_seed(spec.base.train.seed, dt, ns, trial);
  cfg.output_dir = dir.string();
  const TrainOutcome outcome = run_train(cfg, log);
  json entry = {{"dt", dt}, {"ns", ns}, {"trial", trial}, {"seed", cfg.train.seed},
                {"dir", dir.filename().string()}};
  if (outcome.diverged || outcome.metrics.empty()) {
    entry["status"] = "diverged";
    return entry;
  }
  entry["status"] = "complete";
  entry["final_interior_loss"] = outcome.metrics.back().interior_loss;
  entry["final_rel_l2"] = optional_json(outcome.metrics.back().relative_l2_error);
  entry["converged_loss_mean"] = converged_loss_mean(outcome.metrics);
  return entry;
}

json run_bias_cell(const SweepSpec& spec, double dt, int ns, int trial, const fs::path& dir) {
  make_dirs(dir);
  const PdeProblem problem = make_problem(spec.base.problem);
  const FunctionEvaluator u(2, problem.exact_solution, problem.exact_gradient);
  analysis::BiasSettings s;
  s.horizon = dt;
  s.max_step = spec.base.train.max_step;
  s.walkers = ns;
  s.n_outer = spec.bias_n_outer;
  s.margin = spec.bias_margin;
  s.mode = spec.base.train.mode;
  s.seed = cell_seed(spec.base.train.seed, dt, ns, trial);
  s.gradient_samples = spec.bias_gradient_samples;
  const analysis::BiasReport r = analysis::estimate_bias(u, problem, s);
  std::ostringstream csv;
  const analysis::BiasReport one[] = {r};
  analysis::write_bias_csv(csv, one);
  write_text_atomic(dir / "bias_report.csv", csv.str());
  return {{"dt", dt},
          {"ns", ns},
          {"trial", trial},
          {"seed", s.seed},
          {"dir", dir.filename().string()},
          {"status", "complete"},
          {"final_interior_loss", r.empirical_loss},
          {"final_rel_l2", nullptr},
          {"converged_loss_mean", r.empirical_loss},
          {"estimated_bias", r.estimated_bias},
          {"predicted_bias", r.predicted_bias},
          {"std_error", r.std_error},
          {"n_outer", r.n_outer}};
}

SummaryRow summary_from(const json& e) {
  SummaryRow row;
  row.dt = e.at("dt").get<double>();
  row.ns = e.at("ns").get<int>();
  row.trial = e.at("trial").get<int>();
  row.final_interior_loss = e.at("final_interior_loss").get<double>();
  row.final_rel_l2 = json_optional(e.at("final_rel_l2"));
  row.converged_loss_mean = e.at("converged_loss_mean").get<double>();
  return row;
}

}  // namespace

std::uint64_t cell_seed(std::uint64_t base_seed, double dt, int ns, int trial) {
  return hash_key(base_seed, {std::bit_cast<std::uint64_t>(dt), static_cast<std::uint64_t>(ns),
                              static_cast<std::uint64_t>(trial)});
}

std::string cell_name(double dt, int ns, int trial) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "dt_%.10g_ns_%d_trial_%d", dt, ns, trial);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

TrainOutcome run_train(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const PdeProblem problem = make_problem(cfg.problem);
  const fs::path dir(cfg.output_dir);
  make_dirs(dir / "checkpoints");
  const std::string config_text = to_config_text(cfg);
  write_text_atomic(dir / "config.toml", config_text);

  json manifest = {{"format", "dflm-run-manifest"},
                   {"code_version", kCodeVersion},
                   {"seed", cfg.train.seed},
                   {"config", config_echo(config_text)},
                   {"config_text", config_text},
                   {"status", "running"},
                   {"started_at", utc_timestamp()},
                   {"finished_at", nullptr},
                   {"outputs", json::array({"config.toml", "metrics.csv"})}};
  const fs::path manifest_path = dir / "manifest.json";
  write_json(manifest_path, manifest);

  TrainOutcome outcome;
  nn::Network last_good;
  try {
    std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    write_metrics_header(metrics);

    TrainCallbacks callbacks;
    callbacks.on_row = [&](const MetricsRow& row) {
      write_metrics_row(metrics, row);
      if (!metrics) throw std::runtime_error("write failed: metrics.csv");
    };
    callbacks.on_iteration = [&](int n, const nn::Network& net) {
      last_good = net;
      if (cfg.checkpoint_stride > 0 && n % cfg.checkpoint_stride == 0) {
        const std::string name = "checkpoints/iter_" + std::to_string(n) + ".json";
        nn::save_checkpoint(net, dir / name);
        manifest["outputs"].push_back(name);
      }
    };

    try {
      TrainResult result = train(cfg.train, problem, callbacks);
      outcome.metrics = std::move(result.metrics);
      outcome.network = std::move(result.network);
      outcome.completed = true;
    } catch (const TrainingDiverged& e) {
      outcome.diverged = true;
      log << "training diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
      const std::string name = "checkpoints/diverged_iter_" + std::to_string(e.iteration()) + ".json";
      if (last_good.layer_dims.empty()) {
        last_good = nn::init_network(cfg.train.layer_dims(problem.domain.dim()), cfg.train.activation,
                                     cfg.train.seed);
      }
      nn::save_checkpoint(last_good, dir / name);
      manifest["outputs"].push_back(name);
      manifest["diverged_at"] = e.iteration();
      outcome.network = last_good;
    }
    metrics.flush();
    if (!metrics) throw std::runtime_error("write failed: metrics.csv");

    if (outcome.completed) {
      nn::save_checkpoint(outcome.network, dir / "final.json");
      manifest["outputs"].push_back("final.json");
      if (!outcome.metrics.empty()) {
        const MetricsRow& last = outcome.metrics.back();
        manifest["final_interior_loss"] = last.interior_loss;
        manifest["final_rel_l2"] = optional_json(last.relative_l2_error);
        log << "final interior loss " << fmt17(last.interior_loss);
        if (last.relative_l2_error) log << ", relative L2 error " << fmt17(*last.relative_l2_error);
        log << '\n';
      }
    }
    manifest["status"] = outcome.completed ? "complete" : "diverged";
    manifest["finished_at"] = utc_timestamp();
    write_json(manifest_path, manifest);
  } catch (...) {
    manifest["status"] = "incomplete";
    manifest["finished_at"] = utc_timestamp();
    try {
      write_json(manifest_path, manifest);
    } catch (...) {
    }
    throw;
  }
  return outcome;
}

void write_summary_csv(std::ostream& out, std::vector<SummaryRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::tie(a.dt, a.ns, a.trial) < std::tie(b.dt, b.ns, b.trial);
  });
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << fmt17(r.dt) << ',' << r.ns << ',' << r.trial << ',' << fmt17(r.final_interior_loss) << ','
        << (r.final_rel_l2 ? fmt17(*r.final_rel_l2) : std::string()) << ','
        << fmt17(r.converged_loss_mean) << '\n';
  }
}

std::vector<SummaryRow> run_sweep(const SweepSpec& spec, bool bias_mode, std::ostream& log) {
  validate(spec);
  const fs::path root(spec.output_dir);
  make_dirs(root);
  const fs::path manifest_path = root / "sweep_manifest.json";
  const std::string config_text = to_config_text(spec);
  const std::string mode = bias_mode ? "bias" : "training";

  json manifest;
  if (fs::exists(manifest_path)) {
    manifest = read_json(manifest_path);
    if (manifest.value("config_text", "") != config_text || manifest.value("mode", "") != mode) {
      throw std::runtime_error(root.string() +
                               " already holds a sweep with a different configuration or mode");
    }
  } else {
    manifest = {{"format", "dflm-sweep-manifest"},
                {"code_version", kCodeVersion},
                {"mode", mode},
                {"seed", spec.base.train.seed},
                {"config", config_echo(config_text)},
                {"config_text", config_text},
                {"started_at", utc_timestamp()},
                {"cells", json::array()}};
    write_text_atomic(root / "config.toml", config_text);
  }
  manifest["status"] = "running";
  manifest["finished_at"] = nullptr;

  std::set<std::string> done;
  for (const auto& c : manifest["cells"]) done.insert(c.at("dir").get<std::string>());

  auto rewrite_outputs = [&]() {
    std::vector<SummaryRow> rows;
    std::vector<analysis::BiasReport> reports;
    for (const auto& c : manifest["cells"]) {
      if (c.at("status") != "complete") continue;
      rows.push_back(summary_from(c));
      if (bias_mode) {
        analysis::BiasReport r;
        r.horizon = c.at("dt").get<double>();
        r.walkers = c.at("ns").get<int>();
        r.estimated_bias = c.at("estimated_bias").get<double>();
        r.predicted_bias = c.at("predicted_bias").get<double>();
        r.std_error = c.at("std_error").get<double>();
        r.n_outer = c.at("n_outer").get<int>();
        reports.push_back(r);
      }
    }
    std::ostringstream summary;
    write_summary_csv(summary, rows);
    write_text_atomic(root / "summary.csv", summary.str());
    if (bias_mode) {
      std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
        return std::tie(a.horizon, a.walkers) < std::tie(b.horizon, b.walkers);
      });
      std::ostringstream csv;
      analysis::write_bias_csv(csv, reports);
      write_text_atomic(root / "bias_report.csv", csv.str());
      write_json(root / "bias_slopes.json", sweep_slopes(rows));
    }
    return rows;
  };

  try {
    for (double dt : spec.dt_values) {
      for (int ns : spec.ns_values) {
        for (int trial = 0; trial < spec.trials; ++trial) {
          const std::string name = cell_name(dt, ns, trial);
          if (done.count(name)) {
            log << "skip " << name << " (already complete)\n";
            continue;
          }
          log << "run " << name << '\n';
          const fs::path dir = root / name;
          json entry = bias_mode ? run_bias_cell(spec, dt, ns, trial, dir)
                                 : run_training_cell(spec, dt, ns, trial, dir, log);
          manifest["cells"].push_back(std::move(entry));
          done.insert(name);
          write_json(manifest_path, manifest);
          rewrite_outputs();
        }
      }
    }
    std::vector<SummaryRow> rows = rewrite_outputs();
    manifest["status"] = "complete";
    manifest["finished_at"] = utc_timestamp();
    write_json(manifest_path, manifest);
    return rows;
  } catch (...) {
    manifest["status"] = "incomplete";
    try {
      write_json(manifest_path, manifest);
    } catch (...) {
    }
    throw;
  }
}

double evaluate_checkpoint(const fs::path& checkpoint, int grid_n, int m) {
  if (grid_n < 2) throw std::invalid_argument("grid must be at least 2");
  if (m < 1) throw std::invalid_argument("m must be positive");
  const nn::Network net = nn::load_checkpoint(checkpoint);
  if (net.layer_dims.front() != 2) throw std::invalid_argument("checkpoint input dimension must be 2");
  const PdeProblem problem = poisson_problem(m);
  return relative_l2_error(NetworkEvaluator(net), problem.exact_solution, problem.domain, grid_n);
}

int run_analysis(const std::string& which, const Params& params, const fs::path& out_dir,
                 std::ostream& log) {
  static const std::map<std::string, int (*)(ParamReader&, const fs::path&, std::ostream&)> table = {
      {"bias", analyze_bias},
      {"chebyshev", analyze_chebyshev},
      {"folded-normal", analyze_folded_normal},
      {"learning-bound", analyze_learning_bound},
      {"decay", analyze_decay}};
  const auto it = table.find(which);
  if (it == table.end()) {
    throw UsageError("unknown analysis '" + which +
                     "' (expected bias, chebyshev, folded-normal, learning-bound or decay)");
  }
  ParamReader reader(params, which);
  make_dirs(out_dir);
  return it->second(reader, out_dir, log);
}

BiasSuiteResult bias_suite(const BiasSuiteSettings& s) {
  if (s.dt_values.empty() || s.ns_values.empty()) throw std::invalid_argument("empty dt or ns list");
  const bool linear = s.field == BiasField::linear;
  PdeProblem problem;
  std::optional<FunctionEvaluator> u;
  if (linear) {
    // Large box so a 4 sqrt(dt) interior margin leaves room at every dt.
    const ScalarField g = [](std::span<const double> x) { return x[0]; };
    problem = laplace_problem(BoxDomain::cube(2, -2.0, 2.0), g);
    u.emplace(2, g, [](std::span<const double>, std::span<double> grad) {
      grad[0] = 1.0;
      grad[1] = 0.0;
    });
  } else {
    problem = poisson_problem(s.m);
    u.emplace(poisson_evaluator(s.m));
  }

  BiasSuiteResult result;
  const std::size_t nd = s.dt_values.size();
  const std::size_t nn_ = s.ns_values.size();
  for (double dt : s.dt_values) {
    for (int ns : s.ns_values) {
      analysis::BiasSettings b;
      b.horizon = dt;
      b.max_step = s.max_step;
      b.walkers = ns;
      b.n_outer = s.n_outer;
      if (s.margin >= 0.0) {
        b.margin = s.margin;
      } else if (!linear) {
        b.margin = 0.0;
      }
      b.seed = s.seed;
      b.gradient_samples = s.gradient_samples;
      result.reports.push_back(analysis::estimate_bias(*u, problem, b));
    }
  }
  auto at = [&](std::size_t i, std::size_t j) -> const analysis::BiasReport& {
    return result.reports[i * nn_ + j];
  };
  const double slope_tol = linear ? 0.05 : 0.15;
  for (std::size_t i = 0; i < nd; ++i) {
    for (std::size_t j = 0; j < nn_; ++j) {
      const auto& r = at(i, j);
      std::ostringstream where;
      where << "dt=" << r.horizon << " ns=" << r.walkers;
      if (linear) {
        const double expected = r.horizon / r.walkers;
        if (std::abs(r.estimated_bias - expected) > 4.0 * r.std_error) {
          result.failures.push_back(where.str() + ": estimated bias " + fmt17(r.estimated_bias) +
                                    " is not within 4 standard errors of " + fmt17(expected));
        }
      } else {
        const double ratio = r.estimated_bias / r.predicted_bias;
        if (!(ratio >= 0.5 && ratio <= 2.0)) {
          result.failures.push_back(where.str() + ": estimated/predicted ratio " + fmt17(ratio));
        }
      }
    }
  }
  for (std::size_t j = 0; j < nn_; ++j) {
    if (nd < 2) {
      result.dt_slopes.push_back(kNaN);
      continue;
    }
    std::vector<double> x, y;
    for (std::size_t i = 0; i < nd; ++i) {
      x.push_back(at(i, j).horizon);
      y.push_back(at(i, j).estimated_bias);
    }
    const double slope = analysis::fit_loglog_slope(x, y);
    result.dt_slopes.push_back(slope);
    if (std::abs(slope - 1.0) > slope_tol) {
      result.failures.push_back("slope against dt at ns=" + std::to_string(s.ns_values[j]) + " is " +
                                fmt17(slope));
    }
  }
  for (std::size_t i = 0; i < nd; ++i) {
    if (nn_ < 2) {
      result.ns_slopes.push_back(kNaN);
      continue;
    }
    std::vector<double> x, y;
    for (std::size_t j = 0; j < nn_; ++j) {
      x.push_back(at(i, j).walkers);
      y.push_back(at(i, j).estimated_bias);
    }
    const double slope = analysis::fit_loglog_slope(x, y);
    result.ns_slopes.push_back(slope);
    if (std::abs(slope + 1.0) > slope_tol) {
      result.failures.push_back("slope against ns at dt=" + fmt17(s.dt_values[i]) + " is " + fmt17(slope));
    }
  }
  result.passed = result.failures.empty();
  return result;
}

FoldedNormalSuiteResult folded_normal_suite(int n_samples, int tight_samples, std::uint64_t seed) {
  FoldedNormalSuiteResult r;
  bool ok = true;
  for (int k : {1, 2}) {
    for (double mu_norm : {0.0, 0.5, 1.0, 2.0, 4.0}) {
      for (double sigma : {0.1, 0.5, 1.0, 2.0, 4.0}) {
        const std::vector<double> mu(static_cast<std::size_t>(k), mu_norm / std::sqrt(double(k)));
        const auto rep = analysis::folded_normal_bound_check(mu, sigma, n_samples, seed);
        ok = ok && rep.holds;
        r.reports.push_back(rep);
        r.mu_norms.push_back(mu_norm);
        r.sigmas.push_back(sigma);
        r.dims.push_back(k);
      }
    }
  }
  const std::vector<double> zero{0.0};
  const auto tight = analysis::folded_normal_bound_check(zero, 1.0, tight_samples, seed + 1);
  r.tight_rel_gap = std::abs(tight.mc_estimate - tight.bound) / tight.bound;
  r.passed = ok && r.tight_rel_gap <= 0.01;
  return r;
}

DecaySuiteResult decay_suite(std::span<const double> horizons, int grid_n, bool force) {
  const PdeProblem problem = laplace_problem(BoxDomain::unit_square(), sine_field);
  analysis::DecayOptions options;
  options.grid_n = grid_n;
  options.target.force = force;
  DecaySuiteResult r;
  r.table = analysis::learning_decay_sweep(sine_field, problem, horizons, options);
  r.passed = true;
  for (const auto& row : r.table.rows) {
    const double k2 = 2.0 * std::pow(2.0 * std::numbers::pi, 2);   // |k|^2 for the sinusoid
    const double pred = (1.0 - std::exp(-0.5 * k2 * row.horizon)) * row.u_norm;
    r.predicted.push_back(pred);
    const double gap = pred > 0.0 ? std::abs(row.diff_norm - pred) / pred : std::abs(row.diff_norm);
    r.rel_gap.push_back(gap);
    if (!(gap <= 0.02)) r.passed = false;
  }
  return r;
}

LearningBoundSuiteResult learning_bound_suite(double horizon, int order) {
  LearningBoundSuiteResult r;
  const BoxDomain unit = BoxDomain::unit_square();
  const std::vector<std::vector<double>> points = {{0.0, 0.0}, {0.2, -0.1}, {-0.3, 0.25}, {0.1, 0.35}};

  struct Coeffs {
    std::string tag;
    std::vector<double> v;
    double g;
  };
  const std::vector<Coeffs> coeffs = {{"V=0,G=0", {}, 0.0},
                                      {"V=(1,-1),G=0", {1.0, -1.0}, 0.0},
                                      {"V=(1,-1),G=0.7", {1.0, -1.0}, 0.7},
                                      {"V=0,G=-2", {}, -2.0}};
  auto make = [&](const Coeffs& c) {
    PdeProblem p = laplace_problem(unit);
    if (!c.v.empty()) p = with_constant_drift(std::move(p), c.v);
    if (c.g != 0.0) p = with_constant_force(std::move(p), c.g);
    return p;
  };

  const FunctionEvaluator linear(
      2, [](std::span<const double> x) { return x[0] - 0.5 * x[1]; },
      [](std::span<const double>, std::span<double> g) {
        g[0] = 1.0;
        g[1] = -0.5;
      });
  const FunctionEvaluator constant(
      2, [](std::span<const double>) { return 0.3; },
      [](std::span<const double>, std::span<double> g) { g[0] = g[1] = 0.0; });
  const FunctionEvaluator sine(2, sine_field, [](std::span<const double> x, std::span<double> g) {
    const double w = 2.0 * std::numbers::pi;
    g[0] = w * std::cos(w * x[0]) * std::sin(w * x[1]);
    g[1] = w * std::sin(w * x[0]) * std::cos(w * x[1]);
  });

  for (const auto& c : coeffs) {
    const PdeProblem p = make(c);
    for (const auto& x : points) {
      r.cases.push_back({"linear " + c.tag, analysis::learning_bound_check(linear, p, x, horizon, order), true});
      r.cases.push_back({"constant " + c.tag, analysis::learning_bound_check(constant, p, x, horizon, order), true});
    }
  }
  // Odd symmetry in x1 about 0 makes the smoothed sinusoid vanish there.
  const PdeProblem plain = make(coeffs[0]);
  for (const std::vector<double>& x : {std::vector<double>{0.0, 0.1}, {0.0, 0.3}, {0.0, -0.2}}) {
    r.cases.push_back({"sine V=0,G=0", analysis::learning_bound_check(sine, plain, x, horizon, order), true});
  }
  for (const std::vector<double>& x : {std::vector<double>{0.25, 0.25}, {0.1, 0.2}, {-0.3, 0.15}}) {
    r.cases.push_back({"sine V=0,G=0", analysis::learning_bound_check(sine, plain, x, horizon, order), false});
  }
  r.passed = std::all_of(r.cases.begin(), r.cases.end(),
                         [](const LearningBoundCase& c) { return !c.asserted || c.report.holds; });
  return r;
}

}  // namespace dflm::harness

#include "dflm/config.hpp"
#include "dflm/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dflm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dflm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("minimal config fills defaults") {
  const RunConfig c = parse_run_config(KeyValueDoc::parse("problem = \"poisson\"\nm = 1\n"));
  CHECK(c.train.interior_points == 2000);
  CHECK(c.train.boundary_points == 400);
  CHECK(c.train.adam.beta1 == 0.99);
  CHECK(c.train.adam.beta2 == 0.99);
  CHECK(c.train.iterations == 20000);
  CHECK(c.train.hidden == std::vector<int>{64, 64, 64});

  const RunConfig p = parse_run_config(KeyValueDoc::parse("m = 1\n"), true);
  CHECK(p.train.iterations == 150000);
  CHECK(p.train.hidden == std::vector<int>{200, 200, 200});
  CHECK(p.train.eval_grid == 1001);
}

TEST_CASE("config errors carry line or field") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(KeyValueDoc::parse(text, "cfg"));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("dt = 0\n").find("dt") != std::string::npos);
  CHECK(message("dt = -1e-3\n").find("dt") != std::string::npos);
  CHECK(message("m = 1\nbogus = 3\n").find("cfg:2") != std::string::npos);
  CHECK(message("m = 1\nbogus = 3\n").find("bogus") != std::string::npos);
  CHECK(message("m 1\n").find("cfg:1") != std::string::npos);
  CHECK(message("m = 1\nm = 2\n").find("duplicate") != std::string::npos);
  CHECK(message("ns = 2.5\n").find("ns") != std::string::npos);
  CHECK(message("problem = \"heat\"\n").find("problem") != std::string::npos);
  CHECK(message("mode = \"Z\"\n").find("mode") != std::string::npos);
  CHECK(message("# comment\nm = 1 # trailing\n").empty());
}

TEST_CASE("config round trip") {
  RunConfig c = parse_run_config(KeyValueDoc::parse(
      "dt = 0.0123456789012345678\nns = 7\nhidden = [3, 5]\nactivation = \"tanh\"\nmode = \"X_process\"\n"
      "seed = 18446744073709551615\nlog_wall_time = true\nlr = 3.3e-4\nlr_final = 1e-5\n"));
  CHECK(parse_run_config(KeyValueDoc::parse(to_config_text(c))) == c);

  SweepSpec s = parse_sweep_spec(KeyValueDoc::parse("dt_values = [1e-3, 2.5e-3]\nns_values = [1, 4]\ntrials = 2\n"));
  CHECK(s.dt_values == std::vector<double>{1e-3, 2.5e-3});
  CHECK(parse_sweep_spec(KeyValueDoc::parse(to_config_text(s))) == s);

  SweepSpec d = parse_sweep_spec(KeyValueDoc::parse("trials = 1\n"));
  CHECK(d.dt_values.size() == 10);
  CHECK(d.dt_values.front() == 1e-4);
  CHECK(d.dt_values.back() == doctest::Approx(5.12e-2));
  CHECK(d.ns_values == std::vector<int>{1, 4, 10, 40, 100, 400});
  const auto lit = dt_ladder("literal");
  CHECK(lit.back() == 512.0);
  CHECK_THROWS_AS(parse_sweep_spec(KeyValueDoc::parse("trials = 0\n")), ConfigError);
  CHECK_THROWS_AS(parse_sweep_spec(KeyValueDoc::parse("ns_values = []\n")), ConfigError);
}

TEST_CASE("load_config picks the kind") {
  const fs::path dir = fresh_dir("load");
  std::ofstream(dir / "run.toml") << "m = 1\n";
  std::ofstream(dir / "sweep.toml") << "m = 1\ntrials = 1\n";
  CHECK(std::holds_alternative<RunConfig>(load_config(dir / "run.toml")));
  CHECK(std::holds_alternative<SweepSpec>(load_config(dir / "sweep.toml")));
  CHECK_THROWS_AS(load_config(dir / "missing.toml"), ConfigError);
}

TEST_CASE("cell seeds depend on values, not positions") {
  const auto a = harness::cell_seed(0, 1e-3, 4, 0);
  CHECK(a == harness::cell_seed(0, 1e-3, 4, 0));
  CHECK(a != harness::cell_seed(0, 1e-3, 4, 1));
  CHECK(a != harness::cell_seed(0, 2e-3, 4, 0));
  CHECK(a != harness::cell_seed(1, 1e-3, 4, 0));
  CHECK(harness::cell_name(0.005, 40, 2) == "dt_0.005_ns_40_trial_2");
}

TEST_CASE("run_train writes manifest, metrics and checkpoints") {
  const fs::path dir = fresh_dir("train");
  RunConfig c = parse_run_config(KeyValueDoc::parse(
      "nr = 16\nnb = 8\nns = 2\niterations = 4\nhidden = [4]\ncheckpoint_stride = 2\neval_grid = 11\n"));
  c.output_dir = (dir / "run").string();
  std::ostringstream log;
  const auto out = harness::run_train(c, log);
  CHECK(out.completed);
  CHECK(fs::exists(dir / "run" / "checkpoints" / "iter_2.json"));
  CHECK(fs::exists(dir / "run" / "checkpoints" / "iter_4.json"));
  CHECK(nn::load_checkpoint(dir / "run" / "final.json") == out.network);
  const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["config"]["nr"] == "16");
  CHECK(manifest["config"].contains("beta2"));
  CHECK(manifest["code_version"] == harness::kCodeVersion);
  const std::string first = slurp(dir / "run" / "metrics.csv");

  // The echoed config reproduces the run exactly.
  RunConfig again = parse_run_config(KeyValueDoc::parse(manifest["config_text"].get<std::string>()));
  CHECK(again == c);
  harness::run_train(again, log);
  CHECK(slurp(dir / "run" / "metrics.csv") == first);
}

TEST_CASE("evaluate_checkpoint") {
  const fs::path dir = fresh_dir("eval");
  nn::Network zero = nn::init_network(std::vector<int>{2, 4, 1}, nn::Activation::ReLU, 0);
  zero.weights.back().setZero();
  nn::save_checkpoint(zero, dir / "zero.json");
  CHECK(harness::evaluate_checkpoint(dir / "zero.json", 51, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(harness::evaluate_checkpoint(dir / "zero.json", 1, 1), std::invalid_argument);
}

TEST_CASE("training sweep: rows, determinism and resume") {
  const fs::path dir = fresh_dir("sweep");
  SweepSpec s = parse_sweep_spec(KeyValueDoc::parse(
      "dt_values = [1e-3, 2e-3]\nns_values = [1, 2]\ntrials = 1\nnr = 8\nnb = 4\niterations = 3\n"
      "hidden = [4]\neval_grid = 11\n"));
  s.output_dir = (dir / "a").string();
  std::ostringstream log;
  const auto rows = harness::run_sweep(s, false, log);
  CHECK(rows.size() == 4);
  const std::string summary = slurp(dir / "a" / "summary.csv");
  CHECK(summary.rfind(harness::kSummaryHeader, 0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 5);

  s.output_dir = (dir / "b").string();
  harness::run_sweep(s, false, log);
  CHECK(slurp(dir / "b" / "summary.csv") == summary);

  // Rerunning the finished sweep skips every cell and keeps the summary.
  std::ostringstream relog;
  harness::run_sweep(s, false, relog);
  CHECK(relog.str().find("run ") == std::string::npos);
  CHECK(slurp(dir / "b" / "summary.csv") == summary);

  // A different config in the same directory is refused.
  SweepSpec other = s;
  other.trials = 2;
  CHECK_THROWS(harness::run_sweep(other, false, log));
}

TEST_CASE("bias-mode sweep slopes") {
  const fs::path dir = fresh_dir("bias_sweep");
  SweepSpec s = parse_sweep_spec(KeyValueDoc::parse(
      "dt_values = [1e-3, 4e-3]\nns_values = [1, 8]\ntrials = 1\nbias_n_outer = 4000\nbias_gradient_samples = 1000\n"));
  s.output_dir = dir.string();
  std::ostringstream log;
  harness::run_sweep(s, true, log);
  const auto slopes = nlohmann::json::parse(slurp(dir / "bias_slopes.json"));
  for (const auto& e : slopes["dt_slopes"]) CHECK(std::abs(e["slope"].get<double>() - 1.0) < 0.15);
  for (const auto& e : slopes["ns_slopes"]) CHECK(std::abs(e["slope"].get<double>() + 1.0) < 0.15);
  CHECK(fs::exists(dir / "bias_report.csv"));
}

TEST_CASE("run_analysis dispatch") {
  const fs::path dir = fresh_dir("analysis");
  std::ostringstream log;
  CHECK_THROWS_AS(harness::run_analysis("nope", {}, dir, log), harness::UsageError);
  CHECK_THROWS_AS(harness::run_analysis("folded-normal", {{"typo", "1"}}, dir, log), harness::UsageError);
  CHECK(harness::run_analysis("folded-normal", {{"samples", "20000"}, {"tight_samples", "400000"}}, dir, log) ==
        harness::kSuccess);
  CHECK(harness::run_analysis("learning-bound", {}, dir, log) == harness::kSuccess);
  CHECK(harness::run_analysis("bias", {{"n_outer", "3000"}, {"gradient_samples", "100"}, {"ns", "1,4"}}, dir, log) ==
        harness::kSuccess);
  CHECK(fs::exists(dir / "bias_report.csv"));
}

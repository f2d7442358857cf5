// Command-line front end: train, sweep, analyze, evaluate.

#include "dflm/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace dflm;
namespace h = dflm::harness;

void apply_worker_cap() {
  const char* env = std::getenv("DFLM_WORKERS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw h::UsageError("DFLM_WORKERS must be a positive integer");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

h::Params parse_params(const std::vector<std::string>& items) {
  h::Params params;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw h::UsageError("analysis parameters must look like key=value, got '" + item + "'");
    }
    params[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return params;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Derivative-free loss training and analysis for elliptic PDEs"};
  app.require_subcommand(1);

  std::string config_path;
  bool paper_scale = false;
  auto* train = app.add_subcommand("train", "Train one network from a config file");
  train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_flag("--paper-scale", paper_scale, "Use the full-scale defaults");

  bool bias_mode = false;
  auto* sweep = app.add_subcommand("sweep", "Run a dt x N_s sweep");
  sweep->add_option("--config", config_path, "Sweep config file")->required()->check(CLI::ExistingFile);
  sweep->add_flag("--bias-mode", bias_mode, "Freeze the exact solution and estimate the loss bias");
  sweep->add_flag("--paper-scale", paper_scale, "Use the full-scale defaults");

  std::string which;
  std::vector<std::string> raw_params;
  std::string out_dir = "runs/analysis";
  auto* analyze = app.add_subcommand("analyze", "Run an analysis: bias, chebyshev, folded-normal, learning-bound, decay");
  analyze->add_option("which", which, "Analysis name")->required();
  analyze->add_option("params", raw_params, "key=value parameters");
  analyze->add_option("--out", out_dir, "Report directory");

  std::string checkpoint;
  int grid = 201;
  int m = 1;
  auto* evaluate = app.add_subcommand("evaluate", "Relative L2 error of a checkpoint");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--grid", grid, "Grid nodes per axis")->check(CLI::Range(2, 100000));
  evaluate->add_option("--m", m, "Wavenumber of the exact solution")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? h::kSuccess : h::kUsageError;
  }

  try {
    apply_worker_cap();
    if (*train) {
      auto cfg = load_config(config_path, paper_scale);
      if (!std::holds_alternative<RunConfig>(cfg)) {
        throw h::UsageError(config_path + " is a sweep config; use the sweep subcommand");
      }
      const auto outcome = h::run_train(std::get<RunConfig>(cfg), std::cout);
      return outcome.completed ? h::kSuccess : h::kAssertionFailure;
    }
    if (*sweep) {
      auto cfg = load_config(config_path, paper_scale);
      SweepSpec spec;
      if (std::holds_alternative<SweepSpec>(cfg)) {
        spec = std::get<SweepSpec>(cfg);
      } else {
        spec = parse_sweep_spec(KeyValueDoc::load(config_path), paper_scale);
      }
      const auto rows = h::run_sweep(spec, bias_mode, std::cout);
      std::cout << rows.size() << " cells in " << spec.output_dir << "/summary.csv\n";
      return h::kSuccess;
    }
    if (*analyze) {
      const int code = h::run_analysis(which, parse_params(raw_params), out_dir, std::cout);
      std::cout << (code == h::kSuccess ? "PASS" : "FAIL") << ' ' << which << '\n';
      return code;
    }
    if (*evaluate) {
      const double err = h::evaluate_checkpoint(checkpoint, grid, m);
      std::printf("%.17g\n", err);
      return h::kSuccess;
    }
  } catch (const h::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return h::kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return h::kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return h::kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return h::kAssertionFailure;
  }
  return h::kUsageError;
}

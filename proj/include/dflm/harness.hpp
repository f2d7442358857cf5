#pragma once

#include "dflm/analysis.hpp"
#include "dflm/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dflm::harness {

inline constexpr const char* kCodeVersion = "dflm 0.1.0";

/// Exit codes shared by every subcommand.
enum ExitCode : int { kSuccess = 0, kAssertionFailure = 1, kUsageError = 2 };

/// Bad command-line input; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stable per-cell seed from the cell's values (not its position in the grid).
std::uint64_t cell_seed(std::uint64_t base_seed, double dt, int ns, int trial);

/// Directory name of a sweep cell, e.g. "dt_0.005_ns_40_trial_0".
std::string cell_name(double dt, int ns, int trial);

/// ISO-8601 UTC timestamp.
std::string utc_timestamp();

// ---------------------------------------------------------------------------
// train / sweep / evaluate
// ---------------------------------------------------------------------------

struct TrainOutcome {
  bool completed = false;
  bool diverged = false;
  std::vector<MetricsRow> metrics;
  nn::Network network;
};

/// Trains into cfg.output_dir: manifest.json, metrics.csv, checkpoints/.
/// Throws std::runtime_error on I/O failure (the manifest is left "incomplete").
TrainOutcome run_train(const RunConfig& cfg, std::ostream& log);

struct SummaryRow {
  double dt = 0.0;
  int ns = 0;
  int trial = 0;
  double final_interior_loss = 0.0;
  std::optional<double> final_rel_l2;
  double converged_loss_mean = 0.0;
};

inline constexpr const char* kSummaryHeader =
    "dt,ns,trial,final_interior_loss,final_rel_l2,converged_loss_mean";
void write_summary_csv(std::ostream& out, std::vector<SummaryRow> rows);

/// Runs every (dt, ns, trial) cell not yet recorded in the sweep manifest and
/// rewrites summary.csv. In bias mode the exact solution is frozen and each
/// cell is an empirical-loss bias estimate; bias_report.csv and
/// bias_slopes.json are written too. Returns the summary rows.
std::vector<SummaryRow> run_sweep(const SweepSpec& spec, bool bias_mode, std::ostream& log);

/// Relative L2 error of a checkpoint against the Poisson solution with
/// wavenumber m on a grid_n x grid_n grid.
double evaluate_checkpoint(const std::filesystem::path& checkpoint, int grid_n, int m);

// ---------------------------------------------------------------------------
// analysis suites
// ---------------------------------------------------------------------------

using Params = std::map<std::string, std::string>;

/// Dispatches `which` with `key=value` params, writes reports into out_dir and
/// returns an exit code. Unknown names or params throw UsageError.
int run_analysis(const std::string& which, const Params& params,
                 const std::filesystem::path& out_dir, std::ostream& log);

/// Frozen-u bias grid over dt_values x ns_values.
enum class BiasField { linear, poisson };

struct BiasSuiteSettings {
  BiasField field = BiasField::linear;
  int m = 1;
  std::vector<double> dt_values = {1e-3, 4e-3, 1.6e-2};
  std::vector<int> ns_values = {1, 4, 16};
  int n_outer = 20000;
  /// Negative: default for the field (4 sqrt(dt) for linear, 0 for poisson).
  double margin = -1.0;
  double max_step = 1e-3;
  std::uint64_t seed = 0;
  int gradient_samples = 100000;
};

struct BiasSuiteResult {
  std::vector<analysis::BiasReport> reports;
  /// Slope against dt at each fixed ns (NaN when only one dt).
  std::vector<double> dt_slopes;
  /// Slope against ns at each fixed dt (NaN when only one ns).
  std::vector<double> ns_slopes;
  bool passed = false;
  std::vector<std::string> failures;
};

/// Linear field: u = x1 on (-2, 2)^2 (boundary data u), expected bias dt/N_s
/// within 4 standard errors and slopes +-1 within 0.05.
/// Poisson field: frozen u*, expected bias within a factor of 2 of the
/// prediction and slopes within 0.15.
BiasSuiteResult bias_suite(const BiasSuiteSettings& settings);

struct FoldedNormalSuiteResult {
  std::vector<analysis::FoldedNormalReport> reports;
  std::vector<double> mu_norms;
  std::vector<double> sigmas;
  std::vector<int> dims;
  /// |mc - bound| / bound at mu = 0, k = 1.
  double tight_rel_gap = 0.0;
  bool passed = false;
};

FoldedNormalSuiteResult folded_normal_suite(int n_samples, int tight_samples, std::uint64_t seed);

struct DecaySuiteResult {
  analysis::DecayTable table;
  std::vector<double> predicted;   // (1 - exp(-4 pi^2 dt)) ||u||
  std::vector<double> rel_gap;
  bool passed = false;
};

/// u = sin(2 pi x1) sin(2 pi x2) under the Laplace operator; tolerance 2%.
DecaySuiteResult decay_suite(std::span<const double> horizons, int grid_n, bool force);

struct LearningBoundCase {
  std::string family;
  analysis::LearningBoundReport report;
  bool asserted = true;
};

struct LearningBoundSuiteResult {
  std::vector<LearningBoundCase> cases;
  bool passed = false;
};

/// Linear and constant fields with drift and force, plus the sinusoid at
/// points where it is odd-symmetric; the sinusoid elsewhere is reported only.
LearningBoundSuiteResult learning_bound_suite(double horizon, int order);

}  // namespace dflm::harness

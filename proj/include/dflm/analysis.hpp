#pragma once

#include "dflm/field.hpp"
#include "dflm/problem.hpp"
#include "dflm/target.hpp"
#include "dflm/walker.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace dflm::analysis {

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Empirical-loss bias
// ---------------------------------------------------------------------------

struct BiasSettings {
  double horizon = 1e-2;          // Delta t
  double max_step = 1e-3;         // delta t_max
  int walkers = 1;                // N_s
  int n_outer = 10000;            // collocation points
  /// Collocation points are drawn at least this far from the boundary.
  /// Defaults to 4 sqrt(dt); 0 samples the whole domain.
  std::optional<double> margin;
  WalkerMode mode = WalkerMode::BProcess;
  std::uint64_t seed = 0;
  int gradient_samples = 100000;
  int bootstrap_resamples = 200;
  /// If positive, fail unless std_error <= precision * |estimated_bias|.
  double required_rel_precision = 0.0;
};

struct BiasReport {
  double horizon = 0.0;
  int walkers = 0;
  double estimated_bias = 0.0;
  double predicted_bias = 0.0;   // (dt / N_s) E_x |grad u|^2
  double std_error = 0.0;
  int n_outer = 0;
  double empirical_loss = 0.0;   // E (u - ybar)^2
  double exact_loss = 0.0;       // E (u - E ybar)^2, split-sample estimate
  double mean_grad_sq = 0.0;     // E_x |grad u|^2
};

/// Splits the empirical loss into exact loss plus bias using two independent
/// target means per point: E[(u - y1)(u - y2)] = (u - E ybar)^2, so the bias
/// Var(ybar) is estimated without a reference run by (y1 - y2)^2 / 2.
BiasReport estimate_bias(const FieldEvaluator& u_eval, const PdeProblem& problem,
                         const BiasSettings& settings);

inline constexpr const char* kBiasCsvHeader = "dt,ns,estimated_bias,predicted_bias,std_error,n_outer";
void write_bias_csv(std::ostream& out, std::span<const BiasReport> reports);

// ---------------------------------------------------------------------------
// Chebyshev tail of a target mean
// ---------------------------------------------------------------------------

struct ChebyshevSettings {
  double horizon = 1e-2;
  double max_step = 1e-3;
  int walkers = 1;
  double epsilon = 0.1;
  int trials = 10000;
  WalkerMode mode = WalkerMode::BProcess;
  std::uint64_t seed = 0;
};

struct ChebyshevReport {
  double tail_probability = 0.0;   // P(|ybar - E ybar| > eps), E ybar by the trial mean
  double tail_std_error = 0.0;
  double bound = 0.0;              // |grad u(x)|^2 dt / (eps^2 N_s)
  /// tail > bound + 3 sigma: the hidden constant 1 is exceeded (flagged only).
  bool exceeds_bound = false;
  /// tail > 2 bound + 3 sigma.
  bool exceeds_twice_bound = false;
};

ChebyshevReport chebyshev_check(const FieldEvaluator& u_eval, const PdeProblem& problem,
                                std::span<const double> x, const ChebyshevSettings& settings);

// ---------------------------------------------------------------------------
// Folded-normal expectation bound
// ---------------------------------------------------------------------------

struct FoldedNormalReport {
  double mc_estimate = 0.0;   // E|w|, w ~ N(mu, sigma^2 I)
  double std_error = 0.0;
  double bound = 0.0;         // C1 sigma exp(-|mu|^2 / 2 sigma^2) + C2 |mu|
  double c1 = 0.0;            // k sqrt(2 / pi)
  double c2 = 0.0;            // k
  bool holds = false;         // mc_estimate <= bound + 4 std_error
};

/// The dimension k is mu.size(). Requires n_samples >= 1e4.
FoldedNormalReport folded_normal_bound_check(std::span<const double> mu, double sigma,
                                             int n_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Learning amount per iteration
// ---------------------------------------------------------------------------

struct LearningBoundReport {
  std::vector<double> x;
  double measured = 0.0;   // |T u(x) - u(x)|
  double bound = 0.0;      // |grad u(x)| (C1 sqrt(dt) + C2 |V(x)| dt) + |G(x)| dt
  double c1 = 0.0;
  double c2 = 0.0;
  bool holds = false;      // measured <= bound + 1e-12
};

LearningBoundReport learning_bound_check(const FieldEvaluator& u_fn, const PdeProblem& problem,
                                         std::span<const double> x, double horizon,
                                         int order = kDefaultQuadratureOrder);

struct DecayRow {
  double horizon = 0.0;
  double diff_norm = 0.0;   // ||T u - u||_2 on interior nodes
  double u_norm = 0.0;      // ||u||_2 on the same nodes
  int interior_nodes = 0;
};

struct DecayTable {
  std::vector<DecayRow> rows;
  /// log-log slope of diff_norm against dt over rows with dt > 0 and
  /// diff_norm > 0; NaN with fewer than two such rows.
  double slope = 0.0;
};

struct DecayOptions {
  int grid_n = 201;
  /// Interior nodes are those at least margin_sigmas * sqrt(dt) from the boundary.
  double margin_sigmas = 4.0;
  TargetOperatorOptions target;
};

DecayTable learning_decay_sweep(const ScalarField& u_fn, const PdeProblem& problem,
                                std::span<const double> horizons, const DecayOptions& options = {});

}  // namespace dflm::analysis

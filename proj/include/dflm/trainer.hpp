#pragma once

#include "dflm/field.hpp"
#include "dflm/nn.hpp"
#include "dflm/problem.hpp"
#include "dflm/rng.hpp"
#include "dflm/target.hpp"
#include "dflm/walker.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

namespace dflm {

struct TrainConfig {
  double horizon = 5e-3;        // Delta t
  double max_step = 2.5e-4;     // delta t_max; delta t = Delta t / ceil(Delta t / delta t_max)
  int walkers = 40;             // N_s
  int interior_points = 2000;   // N_r
  int boundary_points = 400;    // N_b
  nn::AdamConfig adam;
  /// Geometric decay from adam.learning_rate to this value over the run; 0 keeps lr fixed.
  double final_learning_rate = 0.0;
  int inner_steps = 1;          // M
  int iterations = 20000;
  std::uint64_t seed = 0;
  WalkerMode mode = WalkerMode::BProcess;
  std::vector<int> hidden = {64, 64, 64};
  nn::Activation activation = nn::Activation::ReLU;
  double boundary_weight = 1.0;
  int eval_grid = 201;
  /// Relative L2 error every `eval_stride` iterations (0: final iteration only).
  int eval_stride = 0;
  int log_stride = 1;
  /// Wall time is non-deterministic, so it is only recorded on request.
  bool log_wall_time = false;

  void validate() const;
  std::vector<int> layer_dims(int input_dim) const;
  double walker_step() const { return derive_step(horizon, max_step); }
  /// Learning rate for the k-th of `iterations` steps (k from 0).
  double learning_rate_at(int k) const;
};

struct MetricsRow {
  int iteration = 0;
  double interior_loss = 0.0;
  double boundary_loss = 0.0;
  std::optional<double> relative_l2_error;
  std::optional<double> wall_time_s;
};

inline constexpr const char* kMetricsHeader =
    "iteration,interior_loss,boundary_loss,relative_l2_error,wall_time_s";
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

/// Thrown when a loss becomes non-finite; carries the offending iteration.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// I.i.d. uniform points strictly inside the box, one per column.
Eigen::MatrixXd sample_interior(const BoxDomain& domain, int count, RngStream& rng);

/// I.i.d. uniform points on the boundary; faces are chosen with probability
/// proportional to their measure.
Eigen::MatrixXd sample_boundary(const BoxDomain& domain, int count, RngStream& rng);

struct LossResult {
  double value = 0.0;
  nn::GradientSet grad;
};

/// (1/N_r) sum_i |u(x_i) - ybar_i|^2 and its gradient; targets are constants.
LossResult interior_loss(const nn::Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points,
                         std::span<const TargetMean> targets);

/// (1/N_b) sum_l |u(x_l) - g(x_l)|^2 and its gradient.
LossResult boundary_loss(const nn::Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points,
                         const ScalarField& g);

/// sqrt(sum (u - u*)^2) / sqrt(sum u*^2) over the grid_n x grid_n node grid.
double relative_l2_error(const FieldEvaluator& u, const ScalarField& exact, const BoxDomain& domain,
                         int grid_n);

/// Collocation points and frozen-network targets for one iteration.
struct IterationTargets {
  Eigen::MatrixXd interior;
  Eigen::MatrixXd boundary;
  std::vector<TargetMean> targets;
};

/// Draws the iteration's collocation points and builds targets with the
/// frozen network (never differentiated).
IterationTargets build_iteration_targets(const nn::Network& frozen, const TrainConfig& config,
                                         const PdeProblem& problem, int iteration,
                                         std::vector<WalkerBatch>& workspace);

/// One DFLM iteration: freeze, sample, build targets, M Adam steps.
/// Losses in the returned row are those at theta_{n-1} against the new targets.
MetricsRow train_step(nn::Network& net, nn::AdamState& adam, const TrainConfig& config,
                      const PdeProblem& problem, int iteration);

struct TrainCallbacks {
  std::function<void(const MetricsRow&)> on_row;
  std::function<void(int iteration, const nn::Network&)> on_iteration;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  nn::Network network;
};

/// Runs `config.iterations` steps from a freshly initialized network.
TrainResult train(const TrainConfig& config, const PdeProblem& problem,
                  const TrainCallbacks& callbacks = {});

/// Continues training from `initial` (iterations numbered from `first_iteration`).
TrainResult train_from(nn::Network initial, const TrainConfig& config, const PdeProblem& problem,
                       const TrainCallbacks& callbacks = {}, int first_iteration = 0);

/// Mean interior loss over the final 10% of logged rows (at least one row).
double converged_loss_mean(std::span<const MetricsRow> rows);

}  // namespace dflm

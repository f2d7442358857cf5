#include "dflm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dflm {

namespace {

void require_positive(double v, const char* field) {
  if (!(v > 0.0)) throw std::invalid_argument(std::string(field) + " must be positive");
}

void require_positive(long long v, const char* field) {
  if (v <= 0) throw std::invalid_argument(std::string(field) + " must be positive");
}

MetricsRow run_step(nn::Network& net, nn::AdamState& adam, const TrainConfig& config,
                    const PdeProblem& problem, int iteration, std::vector<WalkerBatch>& workspace) {
  const nn::Network frozen = net;
  const IterationTargets it = build_iteration_targets(frozen, config, problem, iteration, workspace);

  MetricsRow row;
  row.iteration = iteration;
  for (int m = 0; m < config.inner_steps; ++m) {
    LossResult inner = interior_loss(net, it.interior, it.targets);
    LossResult edge = boundary_loss(net, it.boundary, problem.boundary);
    if (!std::isfinite(inner.value) || !std::isfinite(edge.value)) {
      throw TrainingDiverged(iteration, "non-finite loss at iteration " + std::to_string(iteration) +
                                            " (interior " + std::to_string(inner.value) +
                                            ", boundary " + std::to_string(edge.value) + ")");
    }
    if (m == 0) {
      row.interior_loss = inner.value;
      row.boundary_loss = edge.value;
    }
    edge.grad *= config.boundary_weight;
    inner.grad += edge.grad;
    try {
      nn::adam_step(adam, net, inner.grad);
    } catch (const std::invalid_argument& e) {
      throw TrainingDiverged(iteration, e.what());
    }
  }
  return row;
}

}  // namespace

void TrainConfig::validate() const {
  require_positive(horizon, "dt");
  require_positive(max_step, "dt_max");
  require_positive(static_cast<long long>(walkers), "ns");
  require_positive(static_cast<long long>(interior_points), "nr");
  require_positive(static_cast<long long>(boundary_points), "nb");
  require_positive(adam.learning_rate, "lr");
  if (!(final_learning_rate >= 0.0)) throw std::invalid_argument("lr_final must be non-negative");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in (0,1)");
  if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in (0,1)");
  require_positive(adam.epsilon, "eps");
  require_positive(static_cast<long long>(inner_steps), "inner_steps");
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (hidden.empty()) throw std::invalid_argument("hidden must list at least one layer width");
  for (int h : hidden) require_positive(static_cast<long long>(h), "hidden");
  if (!(boundary_weight >= 0.0)) throw std::invalid_argument("boundary_weight must be non-negative");
  if (eval_grid < 2) throw std::invalid_argument("eval_grid must be at least 2");
  if (eval_stride < 0) throw std::invalid_argument("eval_stride must be non-negative");
  require_positive(static_cast<long long>(log_stride), "log_stride");
}

double TrainConfig::learning_rate_at(int k) const {
  if (final_learning_rate == 0.0 || iterations <= 1) return adam.learning_rate;
  const double t = static_cast<double>(k) / (iterations - 1);
  return adam.learning_rate * std::pow(final_learning_rate / adam.learning_rate, t);
}

std::vector<int> TrainConfig::layer_dims(int input_dim) const {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  const auto precision = out.precision(17);
  out << row.iteration << ',' << row.interior_loss << ',' << row.boundary_loss << ',';
  if (row.relative_l2_error) out << *row.relative_l2_error;
  out << ',';
  if (row.wall_time_s) out << *row.wall_time_s;
  out << '\n';
  out.precision(precision);
}

Eigen::MatrixXd sample_interior(const BoxDomain& domain, int count, RngStream& rng) {
  if (count < 1) throw std::invalid_argument("interior sample count must be positive");
  const int dim = domain.dim();
  Eigen::MatrixXd pts(dim, count);
  for (int j = 0; j < count; ++j) {
    for (int i = 0; i < dim; ++i) {
      const auto a = static_cast<std::size_t>(i);
      double x = domain.lower[a];
      while (x <= domain.lower[a] || x >= domain.upper[a]) {
        x = domain.lower[a] + (domain.upper[a] - domain.lower[a]) * rng.uniform01();
      }
      pts(i, j) = x;
    }
  }
  return pts;
}

Eigen::MatrixXd sample_boundary(const BoxDomain& domain, int count, RngStream& rng) {
  if (count < 1) throw std::invalid_argument("boundary sample count must be positive");
  const int dim = domain.dim();
  // Face 2a / 2a+1 is axis a at lower / upper; its measure is the product of
  // the other extents.
  std::vector<double> cumulative;
  double total = 0.0;
  for (int a = 0; a < dim; ++a) {
    double measure = 1.0;
    for (int b = 0; b < dim; ++b) {
      if (b != a) measure *= domain.upper[static_cast<std::size_t>(b)] - domain.lower[static_cast<std::size_t>(b)];
    }
    for (int side = 0; side < 2; ++side) {
      total += measure;
      cumulative.push_back(total);
    }
  }
  Eigen::MatrixXd pts(dim, count);
  for (int j = 0; j < count; ++j) {
    const double pick = rng.uniform01() * total;
    int face = 0;
    while (face + 1 < static_cast<int>(cumulative.size()) && pick >= cumulative[static_cast<std::size_t>(face)]) ++face;
    const int axis = face / 2;
    for (int i = 0; i < dim; ++i) {
      const auto a = static_cast<std::size_t>(i);
      if (i == axis) {
        pts(i, j) = (face % 2 == 0) ? domain.lower[a] : domain.upper[a];
      } else {
        pts(i, j) = domain.lower[a] + (domain.upper[a] - domain.lower[a]) * rng.uniform01();
      }
    }
  }
  return pts;
}

LossResult interior_loss(const nn::Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points,
                         std::span<const TargetMean> targets) {
  if (static_cast<std::size_t>(points.cols()) != targets.size()) {
    throw std::invalid_argument("interior_loss: point/target count mismatch");
  }
  const double n = static_cast<double>(targets.size());
  LossResult result{0.0, nn::GradientSet::zeros_like(net)};
  const Eigen::VectorXd u = nn::forward_backprop_batch(
      net, points,
      [&](Eigen::Index j, double value) {
        return 2.0 * (value - targets[static_cast<std::size_t>(j)].mean) / n;
      },
      result.grad);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const double r = u(j) - targets[static_cast<std::size_t>(j)].mean;
    sum += r * r;
  }
  result.value = sum / n;
  return result;
}

LossResult boundary_loss(const nn::Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points,
                         const ScalarField& g) {
  const Eigen::Index count = points.cols();
  if (count < 1) throw std::invalid_argument("boundary_loss: no points");
  Eigen::VectorXd gv(count);
  Eigen::VectorXd col(points.rows());
  for (Eigen::Index j = 0; j < count; ++j) {
    col = points.col(j);
    gv(j) = g ? g({col.data(), static_cast<std::size_t>(col.size())}) : 0.0;
  }
  const double n = static_cast<double>(count);
  LossResult result{0.0, nn::GradientSet::zeros_like(net)};
  const Eigen::VectorXd u = nn::forward_backprop_batch(
      net, points, [&](Eigen::Index j, double value) { return 2.0 * (value - gv(j)) / n; },
      result.grad);
  result.value = (u - gv).squaredNorm() / n;
  return result;
}

double relative_l2_error(const FieldEvaluator& u, const ScalarField& exact, const BoxDomain& domain,
                         int grid_n) {
  if (grid_n < 2) throw std::invalid_argument("evaluation grid needs at least 2 nodes per axis");
  if (domain.dim() != 2) throw std::invalid_argument("relative L2 grid is two-dimensional");
  const GridFunction2D nodes(domain, grid_n);
  double num = 0.0;
  double den = 0.0;
  // Row by row to bound memory on large grids.
  Eigen::MatrixXd row(2, grid_n);
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j) {
      const auto p = nodes.node(i, j);
      row(0, j) = p[0];
      row(1, j) = p[1];
    }
    const Eigen::VectorXd values = u.values(row);
    for (int j = 0; j < grid_n; ++j) {
      const double ref = exact(nodes.node(i, j));
      num += (values(j) - ref) * (values(j) - ref);
      den += ref * ref;
    }
  }
  if (den == 0.0) throw std::invalid_argument("exact solution vanishes on the evaluation grid");
  return std::sqrt(num) / std::sqrt(den);
}

IterationTargets build_iteration_targets(const nn::Network& frozen, const TrainConfig& config,
                                         const PdeProblem& problem, int iteration,
                                         std::vector<WalkerBatch>& workspace) {
  const auto iter = static_cast<std::uint64_t>(iteration);
  IterationTargets out;
  RngStream interior_rng(config.seed, StreamTag::interior, iter);
  RngStream boundary_rng(config.seed, StreamTag::boundary, iter);
  out.interior = sample_interior(problem.domain, config.interior_points, interior_rng);
  out.boundary = sample_boundary(problem.domain, config.boundary_points, boundary_rng);

  const SimulationSettings sim{config.horizon, config.walker_step(), config.walkers};
  const NetworkEvaluator u_prev(frozen);
  workspace.resize(static_cast<std::size_t>(config.interior_points));
  const int n = config.interior_points;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x0 = out.interior.col(i);
    simulate_batch({x0.data(), static_cast<std::size_t>(x0.size())}, problem, &u_prev, config.mode,
                   sim, StreamKey{config.seed, iter, static_cast<std::uint64_t>(i)},
                   workspace[static_cast<std::size_t>(i)]);
  }
  const TargetForm form = config.mode == WalkerMode::BProcess ? TargetForm::qtilde : TargetForm::q;
  out.targets = build_targets(workspace, u_prev, problem.boundary, form);
  return out;
}

MetricsRow train_step(nn::Network& net, nn::AdamState& adam, const TrainConfig& config,
                      const PdeProblem& problem, int iteration) {
  std::vector<WalkerBatch> workspace;
  return run_step(net, adam, config, problem, iteration, workspace);
}

TrainResult train(const TrainConfig& config, const PdeProblem& problem,
                  const TrainCallbacks& callbacks) {
  config.validate();
  nn::Network net =
      nn::init_network(config.layer_dims(problem.domain.dim()), config.activation, config.seed);
  return train_from(std::move(net), config, problem, callbacks, 0);
}

TrainResult train_from(nn::Network initial, const TrainConfig& config, const PdeProblem& problem,
                       const TrainCallbacks& callbacks, int first_iteration) {
  config.validate();
  TrainResult result{{}, std::move(initial)};
  nn::AdamState adam = nn::AdamState::fresh(result.network, config.adam);
  std::vector<WalkerBatch> workspace;
  const auto start = std::chrono::steady_clock::now();
  const int last = first_iteration + config.iterations;
  for (int n = first_iteration + 1; n <= last; ++n) {
    adam.config.learning_rate = config.learning_rate_at(n - first_iteration - 1);
    MetricsRow row = run_step(result.network, adam, config, problem, n, workspace);
    const bool evaluate = problem.exact_solution &&
                          (n == last || (config.eval_stride > 0 && n % config.eval_stride == 0));
    if (evaluate) {
      row.relative_l2_error = relative_l2_error(NetworkEvaluator(result.network),
                                                problem.exact_solution, problem.domain,
                                                config.eval_grid);
    }
    if (config.log_wall_time) {
      row.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (callbacks.on_iteration) callbacks.on_iteration(n, result.network);
    if (n % config.log_stride == 0 || n == last || row.relative_l2_error) {
      if (callbacks.on_row) callbacks.on_row(row);
      result.metrics.push_back(std::move(row));
    }
  }
  return result;
}

double converged_loss_mean(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw std::invalid_argument("no metrics rows");
  const std::size_t tail = std::max<std::size_t>(1, rows.size() / 10);
  double sum = 0.0;
  for (std::size_t i = rows.size() - tail; i < rows.size(); ++i) sum += rows[i].interior_loss;
  return sum / static_cast<double>(tail);
}

}  // namespace dflm

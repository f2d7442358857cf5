#include "dflm/target.hpp"

#include "dflm/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace dflm {

namespace {

double boundary_or_zero(const ScalarField& g, std::span<const double> x) {
  return g ? g(x) : 0.0;
}

void check_form(const WalkerBatch& batch, TargetForm form) {
  if (form == TargetForm::qtilde && batch.mode() != WalkerMode::BProcess) {
    throw std::invalid_argument(
        "qtilde target needs B_process walkers; X_process records carry no Girsanov weight");
  }
}

// Fills samples from precomputed u_prev values at the terminal points of
// non-exited walkers (values consumed in walker order).
void fill_samples(const WalkerBatch& batch, const ScalarField& g, TargetForm form,
                  const double*& interior_values, std::vector<double>& samples) {
  samples.resize(static_cast<std::size_t>(batch.size()));
  for (int j = 0; j < batch.size(); ++j) {
    const WalkerRecord r = batch[j];
    const double end_value = r.exited ? boundary_or_zero(g, r.terminal) : *interior_values++;
    double y = end_value - r.force_integral;
    if (form == TargetForm::qtilde) y *= std::exp(r.girsanov_log);
    samples[static_cast<std::size_t>(j)] = y;
  }
}

}  // namespace

TargetMean summarize_samples(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot summarize an empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  const double n = static_cast<double>(sorted.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  TargetMean t;
  t.mean = mean;
  t.sample_variance = sorted.size() > 1 ? ss / (n - 1.0) : 0.0;
  t.n = static_cast<int>(sorted.size());
  return t;
}

std::vector<double> target_samples(const WalkerBatch& batch, const FieldEvaluator& u_prev,
                                   const ScalarField& g, TargetForm form) {
  if (batch.size() == 0) throw std::invalid_argument("walker record list is empty");
  check_form(batch, form);
  int interior = 0;
  for (int j = 0; j < batch.size(); ++j) interior += batch.exited(j) ? 0 : 1;
  Eigen::MatrixXd points(batch.dim(), interior);
  for (int j = 0, c = 0; j < batch.size(); ++j) {
    if (batch.exited(j)) continue;
    const auto t = batch.terminal(j);
    for (int i = 0; i < batch.dim(); ++i) points(i, c) = t[static_cast<std::size_t>(i)];
    ++c;
  }
  const Eigen::VectorXd values = interior > 0 ? u_prev.values(points) : Eigen::VectorXd();
  const double* cursor = values.data();
  std::vector<double> samples;
  fill_samples(batch, g, form, cursor, samples);
  return samples;
}

TargetMean q_target(const WalkerBatch& batch, const FieldEvaluator& u_prev, const ScalarField& g) {
  return summarize_samples(target_samples(batch, u_prev, g, TargetForm::q));
}

TargetMean qtilde_target(const WalkerBatch& batch, const FieldEvaluator& u_prev,
                         const ScalarField& g) {
  return summarize_samples(target_samples(batch, u_prev, g, TargetForm::qtilde));
}

std::vector<TargetMean> build_targets(std::span<const WalkerBatch> batches,
                                      const FieldEvaluator& u_prev, const ScalarField& g,
                                      TargetForm form) {
  Eigen::Index interior = 0;
  int dim = 0;
  for (const auto& b : batches) {
    if (b.size() == 0) throw std::invalid_argument("walker record list is empty");
    check_form(b, form);
    dim = b.dim();
    for (int j = 0; j < b.size(); ++j) interior += b.exited(j) ? 0 : 1;
  }
  Eigen::MatrixXd points(dim, interior);
  Eigen::Index c = 0;
  for (const auto& b : batches) {
    for (int j = 0; j < b.size(); ++j) {
      if (b.exited(j)) continue;
      const auto t = b.terminal(j);
      for (int i = 0; i < dim; ++i) points(i, c) = t[static_cast<std::size_t>(i)];
      ++c;
    }
  }
  const Eigen::VectorXd values = interior > 0 ? u_prev.values(points) : Eigen::VectorXd();
  const double* cursor = values.data();
  std::vector<TargetMean> out;
  out.reserve(batches.size());
  std::vector<double> samples;
  for (const auto& b : batches) {
    fill_samples(b, g, form, cursor, samples);
    out.push_back(summarize_samples(samples));
  }
  return out;
}

double convolution_target(const FieldEvaluator& u_fn, std::span<const double> x, double horizon,
                          const PdeProblem& problem, int order) {
  if (order < 2) throw std::invalid_argument("quadrature order must be at least 2");
  if (horizon < 0.0) throw std::invalid_argument("horizon must be non-negative");
  const std::size_t k = x.size();
  const bool needs_u = (problem.has_drift() && problem.drift_depends_on_u) ||
                       (problem.has_force() && problem.force_depends_on_u);
  const double u_here = needs_u ? u_fn.value(x) : 0.0;
  const double force = problem.force_value(x, u_here);
  if (horizon == 0.0) return u_fn.value(x);

  std::vector<double> mean(x.begin(), x.end());
  if (problem.has_drift()) {
    std::vector<double> v(k);
    problem.drift(x, u_here, v);
    for (std::size_t i = 0; i < k; ++i) mean[i] += v[i] * horizon;
  }
  const double conv = gaussian_expectation(
      [&u_fn](std::span<const double> p) { return u_fn.value(p); }, mean, std::sqrt(horizon),
      order);
  return conv - force * horizon;
}

GridFunction2D::GridFunction2D(BoxDomain domain, int nodes_per_axis)
    : domain_(std::move(domain)), n_(nodes_per_axis) {
  domain_.validate();
  if (domain_.dim() != 2) throw std::invalid_argument("grid functions are two-dimensional");
  if (n_ < 2) throw std::invalid_argument("grid needs at least two nodes per axis");
  values_.assign(static_cast<std::size_t>(n_) * n_, 0.0);
}

GridFunction2D GridFunction2D::sample(const BoxDomain& domain, int nodes_per_axis,
                                      const ScalarField& fn) {
  GridFunction2D grid(domain, nodes_per_axis);
  for (int i = 0; i < nodes_per_axis; ++i) {
    for (int j = 0; j < nodes_per_axis; ++j) grid.at(i, j) = fn(grid.node(i, j));
  }
  return grid;
}

double GridFunction2D::spacing(int axis) const {
  const auto a = static_cast<std::size_t>(axis);
  return (domain_.upper[a] - domain_.lower[a]) / (n_ - 1);
}

std::array<double, 2> GridFunction2D::node(int i, int j) const {
  // Last node pinned to the upper corner to avoid round-off drift.
  const double x0 = i == n_ - 1 ? domain_.upper[0] : domain_.lower[0] + i * spacing(0);
  const double x1 = j == n_ - 1 ? domain_.upper[1] : domain_.lower[1] + j * spacing(1);
  return {x0, x1};
}

double GridFunction2D::node_value(int i, int j, const ScalarField& g) const {
  if (i >= 0 && i < n_ && j >= 0 && j < n_) return at(i, j);
  std::array<double, 2> p{domain_.lower[0] + i * spacing(0), domain_.lower[1] + j * spacing(1)};
  domain_.clamp(p);
  return g ? g(p) : 0.0;
}

double GridFunction2D::interpolate(std::span<const double> x, const ScalarField& g) const {
  const double h0 = spacing(0);
  const double h1 = spacing(1);
  const double s0 = (x[0] - domain_.lower[0]) / h0;
  const double s1 = (x[1] - domain_.lower[1]) / h1;
  const int i0 = static_cast<int>(std::floor(s0)) - 1;
  const int j0 = static_cast<int>(std::floor(s1)) - 1;
  // Cubic Lagrange weights on the stencil offsets -1, 0, 1, 2.
  auto weights = [](double t, double w[4]) {
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
  };
  double wa[4];
  double wb[4];
  weights(s0 - (i0 + 1), wa);
  weights(s1 - (j0 + 1), wb);
  double total = 0.0;
  for (int a = 0; a < 4; ++a) {
    double row = 0.0;
    for (int b = 0; b < 4; ++b) row += wb[b] * node_value(i0 + a, j0 + b, g);
    total += wa[a] * row;
  }
  return total;
}

GridFunction2D apply_target_operator(const GridFunction2D& u, double horizon,
                                     const PdeProblem& problem,
                                     const TargetOperatorOptions& options) {
  if (problem.domain.dim() != 2) throw std::invalid_argument("target operator grids are 2-D");
  const double h = std::max(u.spacing(0), u.spacing(1));
  if (horizon > 0.0 && h > std::sqrt(horizon) / 4.0) {
    const std::string msg = "grid spacing " + std::to_string(h) +
                            " under-resolves the kernel (needs <= sqrt(dt)/4 = " +
                            std::to_string(std::sqrt(horizon) / 4.0) + ")";
    if (!options.force) throw std::invalid_argument(msg + "; pass force to override");
    std::cerr << "warning: " << msg << '\n';
  }
  GridFunction2D out(u.domain(), u.nodes_per_axis());
  const FunctionEvaluator interp(
      2, [&u, &problem](std::span<const double> p) { return u.interpolate(p, problem.boundary); });
  const int n = u.nodes_per_axis();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto p = u.node(i, j);
      out.at(i, j) = convolution_target(interp, p, horizon, problem, options.order);
    }
  }
  return out;
}

}  // namespace dflm

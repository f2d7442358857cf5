#include "dflm/analysis.hpp"

#include "dflm/rng.hpp"
#include "dflm/trainer.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

namespace dflm::analysis {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double c : v) s += c * c;
  return std::sqrt(s);
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double c : v) s += c;
  return s / static_cast<double>(v.size());
}

double bootstrap_std_error(std::span<const double> values, int resamples, std::uint64_t seed) {
  const std::size_t n = values.size();
  RngStream rng(seed, StreamTag::bootstrap);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[static_cast<std::size_t>(rng() % n)];
    m = s / static_cast<double>(n);
  }
  const double mu = mean_of(means);
  double ss = 0.0;
  for (double m : means) ss += (m - mu) * (m - mu);
  return std::sqrt(ss / (resamples - 1));
}

TargetForm form_for(WalkerMode mode) {
  return mode == WalkerMode::BProcess ? TargetForm::qtilde : TargetForm::q;
}

}  // namespace

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("slope fit needs at least two paired values");
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("log-log fit needs positive values");
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BiasReport estimate_bias(const FieldEvaluator& u_eval, const PdeProblem& problem,
                         const BiasSettings& s) {
  if (s.n_outer < 100) throw std::invalid_argument("estimate_bias needs n_outer >= 100");
  if (s.walkers < 1) throw std::invalid_argument("estimate_bias needs at least one walker");
  if (s.bootstrap_resamples < 2) throw std::invalid_argument("need at least two bootstrap resamples");
  const double margin = s.margin.value_or(4.0 * std::sqrt(s.horizon));
  const BoxDomain box = margin > 0.0 ? problem.domain.shrunk(margin) : problem.domain;
  const int dim = problem.domain.dim();
  const std::uint64_t cell = hash_key(s.seed, {static_cast<std::uint64_t>(StreamTag::analysis),
                                               std::bit_cast<std::uint64_t>(s.horizon),
                                               static_cast<std::uint64_t>(s.walkers)});

  RngStream point_rng(cell, StreamTag::interior);
  const Eigen::MatrixXd points = sample_interior(box, s.n_outer, point_rng);
  const SimulationSettings sim{s.horizon, s.horizon > 0.0 ? derive_step(s.horizon, s.max_step) : s.max_step,
                               s.walkers};
  const TargetForm form = form_for(s.mode);

  std::vector<double> empirical(static_cast<std::size_t>(s.n_outer));
  std::vector<double> exact(empirical.size());
  std::vector<double> bias(empirical.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < s.n_outer; ++i) {
    const Eigen::VectorXd xv = points.col(i);
    const std::span<const double> x(xv.data(), static_cast<std::size_t>(dim));
    WalkerBatch first;
    WalkerBatch second;
    simulate_batch(x, problem, &u_eval, s.mode, sim, StreamKey{cell, static_cast<std::uint64_t>(i), 0}, first);
    simulate_batch(x, problem, &u_eval, s.mode, sim, StreamKey{cell, static_cast<std::uint64_t>(i), 1}, second);
    const double y1 = summarize_samples(target_samples(first, u_eval, problem.boundary, form)).mean;
    const double y2 = summarize_samples(target_samples(second, u_eval, problem.boundary, form)).mean;
    const double u = u_eval.value(x);
    const double e1 = u - y1;
    const double e2 = u - y2;
    const auto k = static_cast<std::size_t>(i);
    empirical[k] = 0.5 * (e1 * e1 + e2 * e2);
    exact[k] = e1 * e2;
    bias[k] = 0.5 * (y1 - y2) * (y1 - y2);
  }

  BiasReport report;
  report.horizon = s.horizon;
  report.walkers = s.walkers;
  report.n_outer = s.n_outer;
  report.empirical_loss = mean_of(empirical);
  report.exact_loss = mean_of(exact);
  report.estimated_bias = mean_of(bias);
  report.std_error = bootstrap_std_error(bias, s.bootstrap_resamples, cell);

  RngStream grad_rng(cell, StreamTag::gradient_measure);
  const Eigen::MatrixXd gpts = sample_interior(box, s.gradient_samples, grad_rng);
  std::vector<double> grad(static_cast<std::size_t>(dim));
  double gsum = 0.0;
  for (int i = 0; i < s.gradient_samples; ++i) {
    const Eigen::VectorXd xv = gpts.col(i);
    u_eval.gradient({xv.data(), static_cast<std::size_t>(dim)}, grad);
    const double gn = norm(grad);
    gsum += gn * gn;
  }
  report.mean_grad_sq = gsum / s.gradient_samples;
  report.predicted_bias = s.horizon / s.walkers * report.mean_grad_sq;

  if (s.required_rel_precision > 0.0 &&
      report.std_error > s.required_rel_precision * std::abs(report.estimated_bias)) {
    const double ratio = report.std_error / (s.required_rel_precision * std::abs(report.estimated_bias));
    const auto needed = static_cast<long long>(std::ceil(s.n_outer * ratio * ratio));
    throw std::runtime_error("n_outer=" + std::to_string(s.n_outer) +
                             " is too small for relative precision " +
                             std::to_string(s.required_rel_precision) + "; need n_outer >= " +
                             std::to_string(needed));
  }
  return report;
}

void write_bias_csv(std::ostream& out, std::span<const BiasReport> reports) {
  const auto precision = out.precision(17);
  out << kBiasCsvHeader << '\n';
  for (const auto& r : reports) {
    out << r.horizon << ',' << r.walkers << ',' << r.estimated_bias << ',' << r.predicted_bias << ','
        << r.std_error << ',' << r.n_outer << '\n';
  }
  out.precision(precision);
}

ChebyshevReport chebyshev_check(const FieldEvaluator& u_eval, const PdeProblem& problem,
                                std::span<const double> x, const ChebyshevSettings& s) {
  if (!(s.epsilon > 0.0)) throw std::invalid_argument("chebyshev_check needs epsilon > 0");
  if (s.trials < 2) throw std::invalid_argument("chebyshev_check needs at least two trials");
  if (s.horizon < 0.0) throw std::invalid_argument("horizon must be non-negative");
  const int dim = problem.domain.dim();
  std::vector<double> grad(static_cast<std::size_t>(dim));
  u_eval.gradient(x, grad);
  const double gn = norm(grad);

  ChebyshevReport report;
  report.bound = gn * gn * s.horizon / (s.epsilon * s.epsilon * s.walkers);
  if (s.horizon == 0.0) return report;  // walkers do not move: ybar is deterministic

  const std::uint64_t cell = hash_key(s.seed, {static_cast<std::uint64_t>(StreamTag::analysis),
                                               std::bit_cast<std::uint64_t>(s.horizon),
                                               static_cast<std::uint64_t>(s.walkers), 0xcbe});
  const SimulationSettings sim{s.horizon, derive_step(s.horizon, s.max_step), s.walkers};
  const TargetForm form = form_for(s.mode);
  std::vector<double> means(static_cast<std::size_t>(s.trials));
#pragma omp parallel for schedule(static)
  for (int t = 0; t < s.trials; ++t) {
    WalkerBatch batch;
    simulate_batch(x, problem, &u_eval, s.mode, sim, StreamKey{cell, static_cast<std::uint64_t>(t), 0}, batch);
    means[static_cast<std::size_t>(t)] =
        summarize_samples(target_samples(batch, u_eval, problem.boundary, form)).mean;
  }
  const double center = mean_of(means);
  int tail = 0;
  for (double m : means) tail += std::abs(m - center) > s.epsilon ? 1 : 0;
  const double p = static_cast<double>(tail) / s.trials;
  report.tail_probability = p;
  report.tail_std_error = std::sqrt(std::max(p * (1.0 - p), 1.0 / s.trials) / s.trials);
  report.exceeds_bound = p > report.bound + 3.0 * report.tail_std_error;
  report.exceeds_twice_bound = p > 2.0 * report.bound + 3.0 * report.tail_std_error;
  return report;
}

FoldedNormalReport folded_normal_bound_check(std::span<const double> mu, double sigma,
                                             int n_samples, std::uint64_t seed) {
  if (mu.empty()) throw std::invalid_argument("mean vector must be nonempty");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (n_samples < 10000) throw std::invalid_argument("folded-normal check needs n_samples >= 1e4");
  const auto k = static_cast<double>(mu.size());
  FoldedNormalReport report;
  report.c1 = k * std::sqrt(2.0 / std::numbers::pi);
  report.c2 = k;
  const double mu_norm = norm(mu);
  report.bound = report.c1 * sigma * std::exp(-mu_norm * mu_norm / (2.0 * sigma * sigma)) +
                 report.c2 * mu_norm;

  RngStream rng(seed, StreamTag::analysis, std::bit_cast<std::uint64_t>(sigma),
                std::bit_cast<std::uint64_t>(mu_norm), mu.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    double r2 = 0.0;
    for (double m : mu) {
      const double w = m + sigma * normal(rng);
      r2 += w * w;
    }
    const double r = std::sqrt(r2);
    sum += r;
    sum_sq += r * r;
  }
  const double n = n_samples;
  report.mc_estimate = sum / n;
  const double var = std::max(0.0, (sum_sq - n * report.mc_estimate * report.mc_estimate) / (n - 1.0));
  report.std_error = std::sqrt(var / n);
  report.holds = report.mc_estimate <= report.bound + 4.0 * report.std_error;
  return report;
}

LearningBoundReport learning_bound_check(const FieldEvaluator& u_fn, const PdeProblem& problem,
                                         std::span<const double> x, double horizon, int order) {
  const std::size_t dim = x.size();
  LearningBoundReport report;
  report.x.assign(x.begin(), x.end());
  report.c1 = static_cast<double>(dim) * std::sqrt(2.0 / std::numbers::pi);
  report.c2 = static_cast<double>(dim);

  const double u = u_fn.value(x);
  std::vector<double> grad(dim);
  u_fn.gradient(x, grad);
  std::vector<double> v(dim, 0.0);
  if (problem.has_drift()) problem.drift(x, u, v);
  const double g = problem.force_value(x, u);

  report.measured = std::abs(convolution_target(u_fn, x, horizon, problem, order) - u);
  report.bound = norm(grad) * (report.c1 * std::sqrt(horizon) + report.c2 * norm(v) * horizon) +
                 std::abs(g) * horizon;
  report.holds = report.measured <= report.bound + 1e-12;
  return report;
}

DecayTable learning_decay_sweep(const ScalarField& u_fn, const PdeProblem& problem,
                                std::span<const double> horizons, const DecayOptions& options) {
  const GridFunction2D u = GridFunction2D::sample(problem.domain, options.grid_n, u_fn);
  const double cell = u.spacing(0) * u.spacing(1);
  DecayTable table;
  std::vector<double> xs;
  std::vector<double> ys;
  for (double dt : horizons) {
    if (dt < 0.0) throw std::invalid_argument("horizons must be non-negative");
    DecayRow row;
    row.horizon = dt;
    const double margin = options.margin_sigmas * std::sqrt(dt);
    if (dt > 0.0) {
      const GridFunction2D tu = apply_target_operator(u, dt, problem, options.target);
      double diff = 0.0;
      double base = 0.0;
      for (int i = 0; i < options.grid_n; ++i) {
        for (int j = 0; j < options.grid_n; ++j) {
          const auto p = u.node(i, j);
          if (problem.domain.distance_to_boundary(p) < margin) continue;
          diff += (tu.at(i, j) - u.at(i, j)) * (tu.at(i, j) - u.at(i, j));
          base += u.at(i, j) * u.at(i, j);
          ++row.interior_nodes;
        }
      }
      if (row.interior_nodes == 0) {
        throw std::invalid_argument("no grid nodes lie " + std::to_string(margin) +
                                    " inside the boundary for dt=" + std::to_string(dt));
      }
      row.diff_norm = std::sqrt(diff * cell);
      row.u_norm = std::sqrt(base * cell);
    } else {
      double base = 0.0;
      for (double v : u.values()) base += v * v;
      row.u_norm = std::sqrt(base * cell);
      row.interior_nodes = options.grid_n * options.grid_n;
    }
    if (dt > 0.0 && row.diff_norm > 0.0) {
      xs.push_back(dt);
      ys.push_back(row.diff_norm);
    }
    table.rows.push_back(row);
  }
  table.slope = xs.size() >= 2 ? fit_loglog_slope(xs, ys) : std::numeric_limits<double>::quiet_NaN();
  return table;
}

}  // namespace dflm::analysis

#include "dflm/walker.hpp"

#include "dflm/rng.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

namespace dflm {

namespace {

// Smallest crossing fraction of prev -> next with the box faces, or -1 if
// next is inside the closed box. Ties resolve to the lowest face index.
double crossing_fraction(std::span<const double> prev, std::span<const double> next,
                         const BoxDomain& domain, int& face) {
  double best = -1.0;
  for (std::size_t i = 0; i < prev.size(); ++i) {
    double lambda = -1.0;
    int f = 0;
    if (next[i] < domain.lower[i]) {
      lambda = (domain.lower[i] - prev[i]) / (next[i] - prev[i]);
      f = static_cast<int>(2 * i);
    } else if (next[i] > domain.upper[i]) {
      lambda = (domain.upper[i] - prev[i]) / (next[i] - prev[i]);
      f = static_cast<int>(2 * i + 1);
    } else {
      continue;
    }
    lambda = std::clamp(lambda, 0.0, 1.0);
    if (best < 0.0 || lambda < best) {
      best = lambda;
      face = f;
    }
  }
  return best;
}

void place_on_face(std::span<const double> prev, std::span<const double> next, double lambda,
                   int face, const BoxDomain& domain, std::span<double> out) {
  for (std::size_t i = 0; i < prev.size(); ++i) out[i] = prev[i] + lambda * (next[i] - prev[i]);
  domain.clamp(out);
  const auto axis = static_cast<std::size_t>(face / 2);
  out[axis] = (face % 2 == 0) ? domain.lower[axis] : domain.upper[axis];
}

}  // namespace

std::string_view to_string(WalkerMode mode) {
  return mode == WalkerMode::XProcess ? "X_process" : "B_process";
}

WalkerMode parse_walker_mode(std::string_view name) {
  if (name == "X_process" || name == "x" || name == "X") return WalkerMode::XProcess;
  if (name == "B_process" || name == "b" || name == "B") return WalkerMode::BProcess;
  throw std::invalid_argument("unknown walker mode '" + std::string(name) + "'");
}

int SimulationSettings::steps_per_horizon() const {
  if (!(step > 0.0)) throw std::invalid_argument("walker time step must be positive");
  if (horizon < 0.0) throw std::invalid_argument("walker horizon must be non-negative");
  if (step > horizon && horizon > 0.0) {
    throw std::invalid_argument("walker time step exceeds the horizon");
  }
  const double ratio = horizon / step;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw std::invalid_argument("time step " + std::to_string(step) +
                                " does not divide the horizon " + std::to_string(horizon));
  }
  return static_cast<int>(rounded);
}

double derive_step(double horizon, double max_step) {
  if (!(horizon > 0.0) || !(max_step > 0.0)) {
    throw std::invalid_argument("horizon and max step must be positive");
  }
  const double n = std::ceil(horizon / max_step * (1.0 - 1e-12));
  return horizon / std::max(1.0, n);
}

WalkerBatch::WalkerBatch(int dim, int walkers, WalkerMode mode) { reset(dim, walkers, mode); }

void WalkerBatch::reset(int dim, int walkers, WalkerMode mode) {
  dim_ = dim;
  mode_ = mode;
  const auto n = static_cast<std::size_t>(walkers);
  start_.assign(static_cast<std::size_t>(dim), 0.0);
  terminal_.assign(n * static_cast<std::size_t>(dim), 0.0);
  exited_.assign(n, 0);
  exit_time_.assign(n, 0.0);
  force_integral_.assign(n, 0.0);
  girsanov_log_.assign(n, 0.0);
}

WalkerRecord WalkerBatch::operator[](int j) const {
  const auto i = static_cast<std::size_t>(j);
  return WalkerRecord{start_, terminal(j), exited_[i] != 0, exit_time_[i],
                      force_integral_[i], girsanov_log_[i], j};
}

void WalkerBatch::set_outcome(int j, bool exited, double exit_time, double force_integral,
                              double girsanov_log) {
  const auto i = static_cast<std::size_t>(j);
  exited_[i] = exited ? 1 : 0;
  exit_time_[i] = exit_time;
  force_integral_[i] = force_integral;
  girsanov_log_[i] = girsanov_log;
}

std::vector<double> step_euler_maruyama(std::span<const double> pos, std::span<const double> drift,
                                        double dt, std::span<const double> noise) {
  if (!(dt > 0.0)) throw std::invalid_argument("Euler-Maruyama step must be positive");
  if (drift.size() != pos.size() || noise.size() != pos.size()) {
    throw std::invalid_argument("Euler-Maruyama dimension mismatch");
  }
  const double s = std::sqrt(dt);
  std::vector<double> next(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) next[i] = pos[i] + drift[i] * dt + s * noise[i];
  return next;
}

std::optional<ExitCrossing> detect_exit(std::span<const double> prev, std::span<const double> next,
                                        const BoxDomain& domain) {
  int face = 0;
  const double lambda = crossing_fraction(prev, next, domain, face);
  if (lambda < 0.0) return std::nullopt;
  ExitCrossing crossing;
  crossing.fraction = lambda;
  crossing.face = face;
  crossing.point.resize(prev.size());
  place_on_face(prev, next, lambda, face, domain, crossing.point);
  return crossing;
}

void simulate_batch(std::span<const double> x0, const PdeProblem& problem,
                    const FieldEvaluator* u_eval, WalkerMode mode,
                    const SimulationSettings& settings, const StreamKey& key, WalkerBatch& out) {
  const BoxDomain& domain = problem.domain;
  const int dim = domain.dim();
  if (static_cast<int>(x0.size()) != dim) throw std::invalid_argument("start point dimension mismatch");
  if (!domain.contains_closed(x0)) throw std::invalid_argument("start point lies outside the domain");
  if (settings.walkers < 1) throw std::invalid_argument("walker count must be positive");
  const int steps = settings.steps_per_horizon();
  const bool needs_u = (problem.has_drift() && problem.drift_depends_on_u) ||
                       (problem.has_force() && problem.force_depends_on_u);
  if (needs_u && u_eval == nullptr) {
    throw std::invalid_argument("problem coefficients depend on u but no evaluator was given");
  }

  out.reset(dim, settings.walkers, mode);
  std::copy(x0.begin(), x0.end(), out.start_mut().begin());

  const double dt = settings.step;
  const double sqrt_dt = std::sqrt(dt);
  const bool use_drift = problem.has_drift();
  std::vector<double> pos(static_cast<std::size_t>(dim));
  std::vector<double> next(pos.size());
  std::vector<double> velocity(pos.size(), 0.0);
  std::vector<double> increment(pos.size());

  for (int j = 0; j < settings.walkers; ++j) {
    RngStream rng(key.seed, StreamTag::walker, key.iteration, key.point_index,
                  static_cast<std::uint64_t>(j));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::copy(x0.begin(), x0.end(), pos.begin());
    double force_integral = 0.0;
    double girsanov_log = 0.0;
    double exit_time = 0.0;
    bool exited = false;

    for (int m = 0; m < steps; ++m) {
      const double u_here = needs_u ? u_eval->value(pos) : 0.0;
      if (use_drift) problem.drift(pos, u_here, velocity);
      const double g_here = problem.force_value(pos, u_here);
      double v_dot_db = 0.0;
      double v_sq = 0.0;
      for (int i = 0; i < dim; ++i) {
        increment[i] = sqrt_dt * normal(rng);
        const double shift = (mode == WalkerMode::XProcess) ? velocity[i] * dt : 0.0;
        next[i] = pos[i] + shift + increment[i];
        v_dot_db += velocity[i] * increment[i];
        v_sq += velocity[i] * velocity[i];
      }
      int face = 0;
      const double lambda = crossing_fraction(pos, next, domain, face);
      if (lambda >= 0.0) {
        const double partial = lambda * dt;
        force_integral += g_here * partial;
        if (mode == WalkerMode::BProcess && use_drift) {
          girsanov_log += lambda * v_dot_db - 0.5 * v_sq * partial;
        }
        place_on_face(pos, next, lambda, face, domain, pos);
        exit_time = m * dt + partial;
        exited = true;
        break;
      }
      force_integral += g_here * dt;
      if (mode == WalkerMode::BProcess && use_drift) girsanov_log += v_dot_db - 0.5 * v_sq * dt;
      pos.swap(next);
    }
    std::copy(pos.begin(), pos.end(), out.terminal_mut(j).begin());
    out.set_outcome(j, exited, exit_time, force_integral, girsanov_log);
  }
}

WalkerBatch simulate_batch(std::span<const double> x0, const PdeProblem& problem,
                           const FieldEvaluator* u_eval, WalkerMode mode,
                           const SimulationSettings& settings, const StreamKey& key) {
  WalkerBatch batch;
  simulate_batch(x0, problem, u_eval, mode, settings, key, batch);
  return batch;
}

void write_walker_csv_header(std::ostream& out, int dim) {
  out << "point_index,walker_index,exited,exit_time";
  for (int i = 0; i < dim; ++i) out << ",terminal_x" << i;
  out << ",force_integral,girsanov_log\n";
}

void write_walker_csv(std::ostream& out, int point_index, const WalkerBatch& batch) {
  const auto precision = out.precision(17);
  for (int j = 0; j < batch.size(); ++j) {
    const WalkerRecord r = batch[j];
    out << point_index << ',' << j << ',' << (r.exited ? 1 : 0) << ',';
    if (r.exited) out << r.exit_time;
    for (double c : r.terminal) out << ',' << c;
    out << ',' << r.force_integral << ',' << r.girsanov_log << '\n';
  }
  out.precision(precision);
}

}  // namespace dflm

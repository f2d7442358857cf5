#pragma once

#include "dflm/field.hpp"
#include "dflm/problem.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace dflm {

/// X_process follows dX = V dt + dB; B_process is plain Brownian motion with
/// the Girsanov log-weight accumulated alongside.
enum class WalkerMode { XProcess, BProcess };

std::string_view to_string(WalkerMode mode);
WalkerMode parse_walker_mode(std::string_view name);

struct SimulationSettings {
  double horizon = 0.0;    // Delta t
  double step = 0.0;       // delta t
  int walkers = 1;         // N_s

  /// Number of Euler-Maruyama steps per horizon; throws unless the step
  /// divides the horizon (relative tolerance 1e-9).
  int steps_per_horizon() const;
};

/// delta t = Delta t / ceil(Delta t / delta t_max).
double derive_step(double horizon, double max_step);

/// Key of a walker-set stream: walker j of the set uses
/// RngStream(seed, walker, iteration, point_index, j).
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t point_index = 0;
};

/// One walker's terminal state, viewing storage owned by a WalkerBatch.
struct WalkerRecord {
  std::span<const double> start;
  std::span<const double> terminal;
  bool exited = false;
  double exit_time = 0.0;
  double force_integral = 0.0;
  double girsanov_log = 0.0;
  int walker_index = 0;
};

/// Struct-of-arrays storage for the N_s walkers launched from one point.
class WalkerBatch {
 public:
  WalkerBatch() = default;
  WalkerBatch(int dim, int walkers, WalkerMode mode);

  void reset(int dim, int walkers, WalkerMode mode);

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(exited_.size()); }
  WalkerMode mode() const { return mode_; }
  std::span<const double> start() const { return start_; }

  WalkerRecord operator[](int j) const;

  std::span<double> start_mut() { return start_; }
  std::span<double> terminal_mut(int j) {
    return {terminal_.data() + static_cast<std::size_t>(j) * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<const double> terminal(int j) const {
    return {terminal_.data() + static_cast<std::size_t>(j) * dim_, static_cast<std::size_t>(dim_)};
  }
  bool exited(int j) const { return exited_[static_cast<std::size_t>(j)] != 0; }

  void set_outcome(int j, bool exited, double exit_time, double force_integral, double girsanov_log);

 private:
  int dim_ = 0;
  WalkerMode mode_ = WalkerMode::BProcess;
  std::vector<double> start_;
  std::vector<double> terminal_;
  std::vector<std::uint8_t> exited_;
  std::vector<double> exit_time_;
  std::vector<double> force_integral_;
  std::vector<double> girsanov_log_;
};

/// pos + drift * dt + sqrt(dt) * noise.
std::vector<double> step_euler_maruyama(std::span<const double> pos, std::span<const double> drift,
                                        double dt, std::span<const double> noise);

struct ExitCrossing {
  double fraction = 0.0;  // lambda in [0, 1]
  std::vector<double> point;
  int face = 0;           // 2 * axis + (0 lower | 1 upper)
};

/// If `next` lies outside the closed box, the smallest lambda with
/// prev + lambda (next - prev) on the boundary; ties go to the lowest face.
std::optional<ExitCrossing> detect_exit(std::span<const double> prev, std::span<const double> next,
                                        const BoxDomain& domain);

/// Simulates settings.walkers paths from x0 over [0, horizon], absorbing at
/// the boundary. `u_eval` (the frozen network) is only consulted when the
/// drift or force depends on u.
void simulate_batch(std::span<const double> x0, const PdeProblem& problem,
                    const FieldEvaluator* u_eval, WalkerMode mode,
                    const SimulationSettings& settings, const StreamKey& key, WalkerBatch& out);

WalkerBatch simulate_batch(std::span<const double> x0, const PdeProblem& problem,
                           const FieldEvaluator* u_eval, WalkerMode mode,
                           const SimulationSettings& settings, const StreamKey& key);

/// Debug dump: point_index,walker_index,exited,exit_time,terminal_x0..,force_integral,girsanov_log
void write_walker_csv_header(std::ostream& out, int dim);
void write_walker_csv(std::ostream& out, int point_index, const WalkerBatch& batch);

}  // namespace dflm

#pragma once

#include "dflm/field.hpp"
#include "dflm/problem.hpp"
#include "dflm/walker.hpp"

#include <array>
#include <span>
#include <vector>

namespace dflm {

enum class TargetForm { q, qtilde };

/// Sample mean of N_s realizations of the martingale target.
struct TargetMean {
  double mean = 0.0;
  double sample_variance = 0.0;
  int n = 0;
};

/// Mean and unbiased sample variance. The mean is accumulated over the
/// sorted samples, so it is bit-identical under any permutation.
TargetMean summarize_samples(std::span<const double> samples);

/// Per-walker realizations y_j. Non-exited walkers read u_prev at their
/// terminal point; exited walkers read g at the exit point. The force
/// integral is subtracted; qtilde multiplies by exp(girsanov_log).
std::vector<double> target_samples(const WalkerBatch& batch, const FieldEvaluator& u_prev,
                                   const ScalarField& g, TargetForm form);

TargetMean q_target(const WalkerBatch& batch, const FieldEvaluator& u_prev, const ScalarField& g);

/// Rejects batches simulated in X_process mode.
TargetMean qtilde_target(const WalkerBatch& batch, const FieldEvaluator& u_prev,
                         const ScalarField& g);

/// Targets for many points with one batched evaluation of u_prev.
std::vector<TargetMean> build_targets(std::span<const WalkerBatch> batches,
                                      const FieldEvaluator& u_prev, const ScalarField& g,
                                      TargetForm form);

inline constexpr int kDefaultQuadratureOrder = 32;

/// (u * f_{-V(x) dt, dt})(x) - G(x) dt, i.e. E[u(x + V(x) dt + sqrt(dt) Z)] - G(x) dt,
/// by tensor Gauss-Hermite quadrature.
double convolution_target(const FieldEvaluator& u_fn, std::span<const double> x, double horizon,
                          const PdeProblem& problem, int order = kDefaultQuadratureOrder);

/// Values on the (n x n) uniform node grid of a 2-D box, row-major in
/// (axis 0, axis 1). Outside the box, values are g at the nearest boundary
/// point.
class GridFunction2D {
 public:
  GridFunction2D(BoxDomain domain, int nodes_per_axis);

  static GridFunction2D sample(const BoxDomain& domain, int nodes_per_axis,
                               const ScalarField& fn);

  const BoxDomain& domain() const { return domain_; }
  int nodes_per_axis() const { return n_; }
  double spacing(int axis) const;
  std::array<double, 2> node(int i, int j) const;
  double& at(int i, int j) { return values_[static_cast<std::size_t>(i) * n_ + j]; }
  double at(int i, int j) const { return values_[static_cast<std::size_t>(i) * n_ + j]; }
  std::span<const double> values() const { return values_; }

  /// Tensor cubic Lagrange interpolation; nodes outside the grid take g.
  double interpolate(std::span<const double> x, const ScalarField& g) const;

 private:
  double node_value(int i, int j, const ScalarField& g) const;

  BoxDomain domain_;
  int n_;
  std::vector<double> values_;
};

struct TargetOperatorOptions {
  int order = kDefaultQuadratureOrder;
  /// Proceed (with a warning) even when the grid under-resolves the kernel.
  bool force = false;
};

/// (T u)(node) = convolution_target(interp(u), node, dt) at every node.
/// Refuses unless forced when the spacing exceeds sqrt(dt) / 4.
GridFunction2D apply_target_operator(const GridFunction2D& u, double horizon,
                                     const PdeProblem& problem,
                                     const TargetOperatorOptions& options = {});

}  // namespace dflm

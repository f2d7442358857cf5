#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dflm {

/// Axis-aligned box Omega = prod_i (lower_i, upper_i).
struct BoxDomain {
  std::vector<double> lower{-0.5, -0.5};
  std::vector<double> upper{0.5, 0.5};

  static BoxDomain unit_square() { return {}; }
  static BoxDomain cube(int dim, double lo, double hi);

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;

  bool contains_closed(std::span<const double> x) const;
  bool contains_open(std::span<const double> x) const;
  /// Distance to the nearest face (negative outside).
  double distance_to_boundary(std::span<const double> x) const;
  /// Box shrunk by `margin` on every side; throws if it would be empty.
  BoxDomain shrunk(double margin) const;
  /// Nearest point of the closed box.
  void clamp(std::span<double> x) const;
  double volume() const;
};

using ScalarField = std::function<double(std::span<const double>)>;

/// Coefficients of 1/2 Lap u + V(x,u) . grad u - G(x,u) = 0 with u = g on the
/// boundary. Empty callables mean "identically zero".
struct PdeProblem {
  std::string name;
  BoxDomain domain;
  /// Writes V(x, u) into `out`.
  std::function<void(std::span<const double> x, double u, std::span<double> out)> drift;
  std::function<double(std::span<const double> x, double u)> force;
  ScalarField boundary;
  ScalarField exact_solution;
  std::function<void(std::span<const double> x, std::span<double> grad)> exact_gradient;
  bool drift_depends_on_u = false;
  bool force_depends_on_u = false;
  int wavenumber = 0;

  bool has_drift() const { return static_cast<bool>(drift); }
  bool has_force() const { return static_cast<bool>(force); }
  double boundary_value(std::span<const double> x) const { return boundary ? boundary(x) : 0.0; }
  double force_value(std::span<const double> x, double u) const { return force ? force(x, u) : 0.0; }
};

/// Poisson Lap u = f on (-0.5, 0.5)^2 with u = 0 on the boundary and
/// f = Lap u* = -2 (2 m pi)^2 sin(2 m pi x1) sin(2 m pi x2), so G = f / 2 and
/// u* = sin(2 m pi x1) sin(2 m pi x2).
PdeProblem poisson_problem(int m);

/// Laplace problem (V = 0, G = 0) on `domain` with boundary data `g`.
PdeProblem laplace_problem(BoxDomain domain, ScalarField g = {});

/// Adds a constant drift to a problem (u-independent).
PdeProblem with_constant_drift(PdeProblem problem, std::vector<double> velocity);

/// Adds a constant force G = c.
PdeProblem with_constant_force(PdeProblem problem, double c);

double poisson_exact(std::span<const double> x, int m);
void poisson_exact_gradient(std::span<const double> x, int m, std::span<double> grad);

}  // namespace dflm

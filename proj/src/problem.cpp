#include "dflm/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dflm {

BoxDomain BoxDomain::cube(int dim, double lo, double hi) {
  BoxDomain d;
  d.lower.assign(static_cast<std::size_t>(dim), lo);
  d.upper.assign(static_cast<std::size_t>(dim), hi);
  d.validate();
  return d;
}

void BoxDomain::validate() const {
  if (lower.empty() || lower.size() != upper.size()) {
    throw std::invalid_argument("box domain corners must be nonempty and of equal dimension");
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] < upper[i])) {
      throw std::invalid_argument("box domain requires lower < upper on every axis");
    }
  }
}

bool BoxDomain::contains_closed(std::span<const double> x) const {
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (x[i] < lower[i] || x[i] > upper[i]) return false;
  }
  return true;
}

bool BoxDomain::contains_open(std::span<const double> x) const {
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (x[i] <= lower[i] || x[i] >= upper[i]) return false;
  }
  return true;
}

double BoxDomain::distance_to_boundary(std::span<const double> x) const {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lower.size(); ++i) {
    d = std::min({d, x[i] - lower[i], upper[i] - x[i]});
  }
  return d;
}

BoxDomain BoxDomain::shrunk(double margin) const {
  BoxDomain d = *this;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    d.lower[i] += margin;
    d.upper[i] -= margin;
    if (!(d.lower[i] < d.upper[i])) {
      throw std::invalid_argument("margin " + std::to_string(margin) +
                                  " leaves no interior in the domain");
    }
  }
  return d;
}

void BoxDomain::clamp(std::span<double> x) const {
  for (std::size_t i = 0; i < lower.size(); ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
}

double BoxDomain::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < lower.size(); ++i) v *= upper[i] - lower[i];
  return v;
}

double poisson_exact(std::span<const double> x, int m) {
  const double k = 2.0 * m * std::numbers::pi;
  return std::sin(k * x[0]) * std::sin(k * x[1]);
}

void poisson_exact_gradient(std::span<const double> x, int m, std::span<double> grad) {
  const double k = 2.0 * m * std::numbers::pi;
  const double s0 = std::sin(k * x[0]);
  const double s1 = std::sin(k * x[1]);
  grad[0] = k * std::cos(k * x[0]) * s1;
  grad[1] = k * s0 * std::cos(k * x[1]);
}

PdeProblem poisson_problem(int m) {
  if (m <= 0) throw std::invalid_argument("wavenumber m must be positive");
  PdeProblem p;
  p.name = "poisson";
  p.domain = BoxDomain::unit_square();
  p.wavenumber = m;
  const double k = 2.0 * m * std::numbers::pi;
  // G = f / 2 with f = Lap u* = -2 k^2 sin(k x1) sin(k x2).
  p.force = [k](std::span<const double> x, double) {
    return -k * k * std::sin(k * x[0]) * std::sin(k * x[1]);
  };
  p.exact_solution = [m](std::span<const double> x) { return poisson_exact(x, m); };
  p.exact_gradient = [m](std::span<const double> x, std::span<double> g) {
    poisson_exact_gradient(x, m, g);
  };
  return p;
}

PdeProblem laplace_problem(BoxDomain domain, ScalarField g) {
  domain.validate();
  PdeProblem p;
  p.name = "laplace";
  p.domain = std::move(domain);
  p.boundary = std::move(g);
  return p;
}

PdeProblem with_constant_drift(PdeProblem problem, std::vector<double> velocity) {
  if (static_cast<int>(velocity.size()) != problem.domain.dim()) {
    throw std::invalid_argument("drift dimension does not match domain dimension");
  }
  problem.drift = [v = std::move(velocity)](std::span<const double>, double, std::span<double> out) {
    std::copy(v.begin(), v.end(), out.begin());
  };
  problem.drift_depends_on_u = false;
  return problem;
}

PdeProblem with_constant_force(PdeProblem problem, double c) {
  problem.force = [c](std::span<const double>, double) { return c; };
  problem.force_depends_on_u = false;
  return problem;
}

}  // namespace dflm

#include "dflm/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace dflm {

namespace {

// Orthonormal Hermite p_n(x) (weight e^{-x^2}) and p_{n-1}(x).
void hermite_pair(int n, double x, double& pn, double& pn1) {
  double p0 = 1.0 / std::pow(std::numbers::pi, 0.25);
  double p1 = 0.0;
  for (int j = 1; j <= n; ++j) {
    const double p2 = p1;
    p1 = p0;
    p0 = x * std::sqrt(2.0 / j) * p1 - std::sqrt(static_cast<double>(j - 1) / j) * p2;
  }
  pn = p0;
  pn1 = p1;
}

GaussHermiteRule build_rule(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(i / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussHermiteRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = solver.eigenvalues()(i);
    double pn = 0.0;
    double pn1 = 0.0;
    for (int it = 0; it < 8; ++it) {
      hermite_pair(n, x, pn, pn1);
      const double dp = std::sqrt(2.0 * n) * pn1;
      const double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    hermite_pair(n, x, pn, pn1);
    const double dp = std::sqrt(2.0 * n) * pn1;
    // Physicists' weight 2 / p'^2, rescaled to the standard normal.
    rule.nodes[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * x;
    rule.weights[static_cast<std::size_t>(i)] = 2.0 / (dp * dp) / std::sqrt(std::numbers::pi);
  }
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int order) {
  if (order < 2) throw std::invalid_argument("Gauss-Hermite order must be at least 2");
  static std::mutex mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build_rule(order)).first;
  return it->second;
}

double gaussian_expectation(const std::function<double(std::span<const double>)>& f,
                            std::span<const double> mean, double sigma, int order) {
  const GaussHermiteRule& rule = gauss_hermite(order);
  const std::size_t k = mean.size();
  const auto n = static_cast<std::size_t>(order);
  std::vector<std::size_t> index(k, 0);
  std::vector<double> point(k);
  double total = 0.0;
  while (true) {
    double w = 1.0;
    for (std::size_t d = 0; d < k; ++d) {
      point[d] = mean[d] + sigma * rule.nodes[index[d]];
      w *= rule.weights[index[d]];
    }
    total += w * f(point);
    std::size_t d = 0;
    while (d < k && ++index[d] == n) index[d++] = 0;
    if (d == k) break;
  }
  return total;
}

}  // namespace dflm

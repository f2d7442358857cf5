#pragma once

#include <functional>
#include <span>
#include <vector>

namespace dflm {

/// Gauss-Hermite rule normalized for the standard normal density:
/// E[f(Z)] ~= sum_i weights[i] * f(nodes[i]), with sum of weights = 1.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  int order() const { return static_cast<int>(nodes.size()); }
};

/// Golub-Welsch start followed by Newton polishing on the orthonormal
/// Hermite recurrence. Throws for order < 2. Results are cached per order.
const GaussHermiteRule& gauss_hermite(int order);

/// Tensor-product estimate of E[f(mean + sigma Z)] for Z ~ N(0, I_k).
double gaussian_expectation(const std::function<double(std::span<const double>)>& f,
                            std::span<const double> mean, double sigma, int order);

}  // namespace dflm

#include "dflm/quadrature.hpp"
#include "dflm/rng.hpp"
#include "dflm/target.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace dflm;

namespace {

FunctionEvaluator constant_field(double c) {
  return FunctionEvaluator(2, [c](std::span<const double>) { return c; });
}

FunctionEvaluator poisson_field() {
  return FunctionEvaluator(2, [](std::span<const double> x) { return poisson_exact(x, 1); },
                           [](std::span<const double> x, std::span<double> g) { poisson_exact_gradient(x, 1, g); });
}

WalkerBatch one_walker(double t0, double t1, double force, double girsanov) {
  WalkerBatch b(2, 1, WalkerMode::BProcess);
  b.terminal_mut(0)[0] = t0;
  b.terminal_mut(0)[1] = t1;
  b.set_outcome(0, false, 0.0, force, girsanov);
  return b;
}

}  // namespace

TEST_CASE("Gauss-Hermite rules integrate normal moments") {
  for (int order : {2, 5, 16, 32, 64}) {
    const auto& r = gauss_hermite(order);
    REQUIRE(r.order() == order);
    double w = 0.0, m2 = 0.0, m4 = 0.0, m1 = 0.0;
    for (int i = 0; i < order; ++i) {
      w += r.weights[i];
      m1 += r.weights[i] * r.nodes[i];
      m2 += r.weights[i] * r.nodes[i] * r.nodes[i];
      m4 += r.weights[i] * std::pow(r.nodes[i], 4);
    }
    CHECK(w == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(m1) < 1e-13);
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    if (order >= 3) CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(gauss_hermite(1), std::invalid_argument);
  // E cos(Z) = exp(-1/2).
  const double mean[] = {0.0};
  const double v = gaussian_expectation([](std::span<const double> z) { return std::cos(z[0]); }, mean, 1.0, 32);
  CHECK(v == doctest::Approx(std::exp(-0.5)).epsilon(1e-13));
}

TEST_CASE("summarize_samples") {
  const std::vector<double> s = {1.0, 2.0, 4.0, 7.0};
  const TargetMean m = summarize_samples(s);
  CHECK(m.mean == 3.5);
  CHECK(m.sample_variance == doctest::Approx(7.0));
  CHECK(m.n == 4);
  std::vector<double> r(1000);
  RngStream rng(3, StreamTag::test);
  for (double& x : r) x = rng.uniform01() * 1e3 - 1e-3;
  const double a = summarize_samples(r).mean;
  std::reverse(r.begin(), r.end());
  CHECK(summarize_samples(r).mean == a);
}

TEST_CASE("target arithmetic on hand-built walkers") {
  const FunctionEvaluator two = constant_field(2.0);
  CHECK(q_target(one_walker(0.1, 0.1, 0.5, 0.0), two, {}).mean == 1.5);

  const FunctionEvaluator one = constant_field(1.0);
  const auto s = target_samples(one_walker(0.0, 0.0, 0.0, std::log(2.0)), one, {}, TargetForm::qtilde);
  CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-15));

  // Exited walkers read g, not u_prev.
  WalkerBatch b(2, 1, WalkerMode::BProcess);
  b.terminal_mut(0)[0] = 0.5;
  b.terminal_mut(0)[1] = 0.1;
  b.set_outcome(0, true, 0.003, 0.0, 0.0);
  const ScalarField g = [](std::span<const double> x) { return 10.0 * x[1]; };
  CHECK(q_target(b, two, g).mean == doctest::Approx(1.0));

  WalkerBatch xb(2, 1, WalkerMode::XProcess);
  CHECK_THROWS_AS(qtilde_target(xb, one, {}), std::invalid_argument);
}

TEST_CASE("constant field is a fixed point without force") {
  const PdeProblem p = laplace_problem(BoxDomain::unit_square(), [](std::span<const double>) { return 0.7; });
  const double x[] = {0.1, 0.0};
  const WalkerBatch b = simulate_batch(x, p, nullptr, WalkerMode::BProcess, {0.001, 0.001, 50}, {1, 0, 0});
  const TargetMean t = q_target(b, constant_field(0.7), p.boundary);
  CHECK(t.mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(t.sample_variance == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("exact Poisson solution satisfies the martingale identity") {
  const PdeProblem p = poisson_problem(1);
  const double x[] = {0.1, 0.2};
  const WalkerBatch b = simulate_batch(x, p, nullptr, WalkerMode::BProcess, {0.01, 1e-4, 100000}, {4, 0, 0});
  const TargetMean t = q_target(b, poisson_field(), p.boundary);
  CHECK(std::abs(t.mean - poisson_exact(x, 1)) <= 4.0 * std::sqrt(t.sample_variance / t.n));
}

TEST_CASE("qtilde equals q without drift") {
  const PdeProblem p = poisson_problem(1);
  const double x[] = {-0.2, 0.3};
  const WalkerBatch b = simulate_batch(x, p, nullptr, WalkerMode::BProcess, {0.01, 1e-3, 500}, {6, 0, 0});
  const auto u = poisson_field();
  CHECK(qtilde_target(b, u, p.boundary).mean == q_target(b, u, p.boundary).mean);
}

TEST_CASE("qtilde with constant u recovers u (unit-mean Girsanov weight)") {
  const PdeProblem p = with_constant_drift(laplace_problem(BoxDomain::cube(2, -5.0, 5.0)), {1.0, -1.0});
  const double x[] = {0.0, 0.0};
  const WalkerBatch b = simulate_batch(x, p, nullptr, WalkerMode::BProcess, {0.01, 1e-3, 100000}, {8, 0, 0});
  const TargetMean t = qtilde_target(b, constant_field(3.0), p.boundary);
  CHECK(std::abs(t.mean - 3.0) <= 4.0 * std::sqrt(t.sample_variance / t.n));
}

TEST_CASE("build_targets matches per-point targets") {
  const PdeProblem p = poisson_problem(1);
  const auto u = poisson_field();
  std::vector<WalkerBatch> batches;
  for (int i = 0; i < 5; ++i) {
    const double x[] = {-0.3 + 0.1 * i, 0.05 * i};
    batches.push_back(simulate_batch(x, p, nullptr, WalkerMode::BProcess, {0.005, 1e-3, 30}, {2, 0, std::uint64_t(i)}));
  }
  const auto all = build_targets(batches, u, p.boundary, TargetForm::q);
  for (int i = 0; i < 5; ++i) CHECK(all[i].mean == q_target(batches[i], u, p.boundary).mean);
}

TEST_CASE("convolution_target closed forms") {
  const double dt = 0.01;
  const FunctionEvaluator lin(2, [](std::span<const double> x) { return 2.0 * x[0] - 3.0 * x[1]; });
  PdeProblem p = with_constant_force(with_constant_drift(laplace_problem(BoxDomain::unit_square()), {1.0, -1.0}), 0.4);
  const double x[] = {0.1, -0.2};
  // a.(x + V dt) - G dt
  const double expected = 2.0 * (0.1 + dt) - 3.0 * (-0.2 - dt) - 0.4 * dt;
  CHECK(convolution_target(lin, x, dt, p) == doctest::Approx(expected).epsilon(1e-13));

  const FunctionEvaluator sq(2, [](std::span<const double> y) { return y[0] * y[0] + y[1] * y[1]; });
  const PdeProblem lap = laplace_problem(BoxDomain::unit_square());
  CHECK(convolution_target(sq, x, dt, lap) == doctest::Approx(0.05 + 2.0 * dt).epsilon(1e-13));
  CHECK(convolution_target(sq, x, 0.0, lap) == sq.value(x));

  // Gaussian smoothing of a sinusoid scales it by exp(-|k|^2 dt / 2).
  const FunctionEvaluator s(2, [](std::span<const double> y) {
    return std::sin(2 * std::numbers::pi * y[0]) * std::sin(2 * std::numbers::pi * y[1]);
  });
  const double y[] = {0.13, 0.21};
  CHECK(convolution_target(s, y, dt, lap) ==
        doctest::Approx(std::exp(-4 * std::numbers::pi * std::numbers::pi * dt) * s.value(y)).epsilon(1e-12));
}

TEST_CASE("GridFunction2D interpolation") {
  const BoxDomain box;
  const ScalarField cubic = [](std::span<const double> x) {
    return x[0] * x[0] * x[0] - 2.0 * x[0] * x[1] * x[1] + 0.5;
  };
  const GridFunction2D grid = GridFunction2D::sample(box, 41, cubic);
  CHECK(grid.spacing(0) == doctest::Approx(1.0 / 40));
  const auto n = grid.node(40, 0);
  CHECK(n[0] == 0.5);
  CHECK(n[1] == -0.5);
  for (const auto& q : std::vector<std::array<double, 2>>{{0.013, -0.271}, {0.37, 0.44}, {-0.46, 0.1}}) {
    CHECK(grid.interpolate(q, cubic) == doctest::Approx(cubic(q)).epsilon(1e-12));
  }
  // In the first cell the stencil reaches past the grid and reads g instead.
  const ScalarField zero = [](std::span<const double>) { return 0.0; };
  const double edge[] = {-0.49, 0.1};
  CHECK(grid.interpolate(edge, zero) != doctest::Approx(cubic(edge)).epsilon(1e-6));
  const ScalarField g = [](std::span<const double>) { return -4.0; };
  const double far[] = {3.0, 0.0};
  CHECK(grid.interpolate(far, g) == -4.0);
}

TEST_CASE("target operator fixed points and smoothing") {
  const BoxDomain box;
  const double dt = 1e-3;
  const int n = 41;   // spacing 0.025 under-resolves sqrt(dt) / 4
  const ScalarField c = [](std::span<const double>) { return 1.25; };
  const PdeProblem pc = laplace_problem(box, c);
  TargetOperatorOptions forced;
  forced.force = true;
  const GridFunction2D uc = GridFunction2D::sample(box, n, c);
  CHECK_THROWS_AS(apply_target_operator(uc, dt, pc), std::invalid_argument);
  const GridFunction2D tc = apply_target_operator(uc, dt, pc, forced);
  for (double v : tc.values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-12));

  const ScalarField lin = [](std::span<const double> x) { return x[0]; };
  const PdeProblem pl = laplace_problem(box, lin);
  const GridFunction2D ul = GridFunction2D::sample(box, 161, lin);
  const GridFunction2D tl = apply_target_operator(ul, dt, pl);
  // Quadrature nodes reach about 6.6 sigma; beyond the box they read clamped g.
  const double margin = 8.0 * std::sqrt(dt);
  for (int i = 0; i < 161; ++i) {
    for (int j = 0; j < 161; ++j) {
      const auto p = ul.node(i, j);
      if (box.distance_to_boundary(p) < margin) continue;
      CHECK(std::abs(tl.at(i, j) - p[0]) < 1e-10);
    }
  }

  // Repeated smoothing with zero boundary data decays toward zero.
  RngStream rng(5, StreamTag::test);
  GridFunction2D u(box, 21);
  for (int i = 1; i < 20; ++i)
    for (int j = 1; j < 20; ++j) u.at(i, j) = rng.uniform01();
  const PdeProblem pz = laplace_problem(box);
  auto l2 = [](const GridFunction2D& f) {
    double s = 0.0;
    for (double v : f.values()) s += v * v;
    return std::sqrt(s);
  };
  const double start = l2(u);
  double prev = start;
  for (int it = 0; it < 40; ++it) {
    u = apply_target_operator(u, 0.01, pz, forced);
    const double now = l2(u);
    CHECK(now < prev);
    prev = now;
  }
  // The slowest mode sin(pi x) sin(pi y) decays by exp(-pi^2 dt) per step.
  CHECK(prev < 0.1 * start);
}

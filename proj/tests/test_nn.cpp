#include "dflm/nn.hpp"
#include "dflm/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace dflm;
using namespace dflm::nn;

namespace {

Network abs_net() {
  Network net;
  net.layer_dims = {1, 2, 1};
  net.activation = Activation::ReLU;
  net.weights = {Eigen::MatrixXd(2, 1), Eigen::MatrixXd(1, 2)};
  net.weights[0] << 1.0, -1.0;
  net.weights[1] << 1.0, 1.0;
  net.biases = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1)};
  return net;
}

// Random biases too, so that finite differences exercise every parameter.
Network random_net(std::vector<int> dims, Activation act, std::uint64_t seed) {
  Network net = init_network(dims, act, seed);
  RngStream rng(seed, StreamTag::test);
  std::normal_distribution<double> n01;
  for (auto& b : net.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.3 * n01(rng);
  }
  return net;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_CASE("init_network shapes, zero biases and determinism") {
  const std::vector<int> dims = {2, 200, 200, 200, 1};
  const Network a = init_network(dims, Activation::ReLU, 7);
  REQUIRE(a.weights.size() == 4);
  CHECK(a.weights[0].rows() == 200);
  CHECK(a.weights[0].cols() == 2);
  CHECK(a.weights[1].rows() == 200);
  CHECK(a.weights[1].cols() == 200);
  CHECK(a.weights[3].rows() == 1);
  CHECK(a.weights[3].cols() == 200);
  for (const auto& b : a.biases) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
  CHECK(init_network(dims, Activation::ReLU, 7) == a);
  CHECK_FALSE(init_network(dims, Activation::ReLU, 8) == a);

  // He variance 2 / fan_in on the 200 x 200 layer.
  const double var = a.weights[1].array().square().mean();
  CHECK(var == doctest::Approx(2.0 / 200.0).epsilon(0.05));
}

TEST_CASE("init_network rejects bad dims") {
  const std::vector<int> no_hidden = {2, 1};
  const std::vector<int> wide_out = {2, 4, 2};
  CHECK_THROWS_AS(init_network(no_hidden, Activation::ReLU, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_network(wide_out, Activation::ReLU, 0), std::invalid_argument);
}

TEST_CASE("forward hand cases") {
  Network lin;
  lin.layer_dims = {2, 1};
  lin.weights = {Eigen::MatrixXd(1, 2)};
  lin.weights[0] << 1.0, 0.0;
  lin.biases = {Eigen::VectorXd::Zero(1)};
  const double x[] = {3.0, 5.0};
  CHECK(forward(lin, x) == 3.0);

  const Network net = abs_net();
  for (double v : {-3.5, -1.0, 0.0, 0.25, 7.0}) {
    const double in[] = {v};
    CHECK(forward(net, in) == std::abs(v));
  }
}

TEST_CASE("forward_batch agrees with forward and stays finite") {
  const std::vector<int> dims = {2, 16, 16, 1};
  const Network net = random_net(dims, Activation::Tanh, 3);
  RngStream rng(1, StreamTag::test);
  Eigen::MatrixXd pts(2, 1500);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    pts(0, j) = 10.0 * (rng.uniform01() - 0.5);
    pts(1, j) = 10.0 * (rng.uniform01() - 0.5);
  }
  const Eigen::VectorXd out = forward_batch(net, pts);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const double x[] = {pts(0, j), pts(1, j)};
    CHECK(std::isfinite(out[j]));
    CHECK(out[j] == doctest::Approx(forward(net, x)).epsilon(1e-12));
  }
}

TEST_CASE("backprop hand cases") {
  const std::vector<int> dims = {2, 8, 1};
  const Network net = random_net(dims, Activation::ReLU, 5);
  const double x[] = {0.3, -0.2};
  const GradientSet zero = backprop(net, x, 0.0);
  CHECK(zero.squared_norm() == 0.0);

  Network lin;
  lin.layer_dims = {1, 1};
  lin.weights = {Eigen::MatrixXd::Constant(1, 1, 0.7)};
  lin.biases = {Eigen::VectorXd::Constant(1, -0.4)};
  const double two[] = {2.0};
  const GradientSet g = backprop(lin, two, 1.0);
  CHECK(g.weights[0](0, 0) == 2.0);
  CHECK(g.biases[0][0] == 1.0);
}

TEST_CASE("backprop matches central finite differences") {
  const double h = 1e-6;
  for (Activation act : {Activation::ReLU, Activation::Tanh}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const std::vector<int> dims = {2, 16, 1};
      Network net = random_net(dims, act, seed);
      RngStream rng(seed, StreamTag::test, 1);
      const double x[] = {rng.uniform01() - 0.5, rng.uniform01() - 0.5};
      const GradientSet g = backprop(net, x, 1.0);
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (Eigen::Index k = 0; k < net.weights[l].size(); ++k) {
          double& w = net.weights[l].data()[k];
          const double w0 = w;
          w = w0 + h;
          const double up = forward(net, x);
          w = w0 - h;
          const double dn = forward(net, x);
          w = w0;
          const double fd = (up - dn) / (2 * h);
          CHECK(rel_err(g.weights[l].data()[k], fd) <= 1e-5);
        }
        for (Eigen::Index k = 0; k < net.biases[l].size(); ++k) {
          double& b = net.biases[l][k];
          const double b0 = b;
          b = b0 + h;
          const double up = forward(net, x);
          b = b0 - h;
          const double dn = forward(net, x);
          b = b0;
          CHECK(rel_err(g.biases[l][k], (up - dn) / (2 * h)) <= 1e-5);
        }
      }
    }
  }
}

TEST_CASE("backprop_batch is the sum of per-point gradients") {
  const std::vector<int> dims = {2, 16, 16, 1};
  const Network net = random_net(dims, Activation::Tanh, 11);
  RngStream rng(2, StreamTag::test);
  Eigen::MatrixXd pts(2, 700);
  Eigen::VectorXd up(700);
  for (Eigen::Index j = 0; j < 700; ++j) {
    pts(0, j) = rng.uniform01() - 0.5;
    pts(1, j) = rng.uniform01() - 0.5;
    up[j] = rng.uniform01() - 0.5;
  }
  GradientSet batch = GradientSet::zeros_like(net);
  backprop_batch(net, pts, up, batch);
  GradientSet sum = GradientSet::zeros_like(net);
  for (Eigen::Index j = 0; j < 700; ++j) {
    const double x[] = {pts(0, j), pts(1, j)};
    sum += backprop(net, x, up[j]);
  }
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    CHECK((batch.weights[l] - sum.weights[l]).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((batch.biases[l] - sum.biases[l]).cwiseAbs().maxCoeff() < 1e-10);
  }

  GradientSet fused = GradientSet::zeros_like(net);
  const Eigen::VectorXd out = forward_backprop_batch(
      net, pts, [&](Eigen::Index j, double) { return up[j]; }, fused);
  CHECK((out - forward_batch(net, pts)).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    CHECK((fused.weights[l] - sum.weights[l]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("grad_input hand cases and finite differences") {
  Network lin;
  lin.layer_dims = {2, 1};
  lin.weights = {Eigen::MatrixXd(1, 2)};
  lin.weights[0] << 1.5, -0.25;
  lin.biases = {Eigen::VectorXd::Constant(1, 0.1)};
  const double x[] = {0.3, 9.0};
  const Eigen::VectorXd gl = grad_input(lin, x);
  CHECK(gl[0] == 1.5);
  CHECK(gl[1] == -0.25);

  const double m2[] = {-2.0};
  CHECK(grad_input(abs_net(), m2)[0] == -1.0);
  const double z[] = {0.0};
  CHECK(grad_input(abs_net(), z)[0] == 0.0);   // ReLU'(0) = 0

  const std::vector<int> dims = {2, 16, 16, 1};
  const Network net = random_net(dims, Activation::Tanh, 9);
  const double p[] = {0.17, -0.31};
  const Eigen::VectorXd g = grad_input(net, p);
  for (int i = 0; i < 2; ++i) {
    double a[] = {p[0], p[1]};
    double b[] = {p[0], p[1]};
    a[i] += 1e-6;
    b[i] -= 1e-6;
    CHECK(rel_err(g[i], (forward(net, a) - forward(net, b)) / 2e-6) <= 1e-5);
  }
}

TEST_CASE("adam_step") {
  const std::vector<int> dims = {2, 4, 1};
  Network net = init_network(dims, Activation::ReLU, 1);
  const Network before = net;
  AdamState st = AdamState::fresh(net, {});
  adam_step(st, net, GradientSet::zeros_like(net));
  CHECK(net == before);

  Network w;
  w.layer_dims = {1, 1};
  w.weights = {Eigen::MatrixXd::Constant(1, 1, 1.0)};
  w.biases = {Eigen::VectorXd::Zero(1)};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState s = AdamState::fresh(w, cfg);
  GradientSet g = GradientSet::zeros_like(w);
  g.weights[0](0, 0) = 1.0;
  adam_step(s, w, g);
  CHECK(w.weights[0](0, 0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(w.biases[0][0] == 0.0);

  // Non-finite gradients leave everything untouched.
  const Network w_before = w;
  const auto step_before = s.step;
  g.weights[0](0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(s, w, g), std::invalid_argument);
  CHECK(w == w_before);
  CHECK(s.step == step_before);

  // Same inputs, same trajectory.
  auto run = [&]() {
    Network n = init_network(dims, Activation::Tanh, 4);
    AdamState a = AdamState::fresh(n, {});
    for (int i = 0; i < 5; ++i) {
      const double x[] = {0.1 * i, -0.2};
      adam_step(a, n, backprop(n, x, 1.0));
    }
    return n;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "dflm_nn_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<int> dims = {2, 3 + static_cast<int>(seed), 5, 1};
    const Network net = random_net(dims, seed % 2 ? Activation::Tanh : Activation::ReLU, seed);
    const auto path = dir / ("net_" + std::to_string(seed) + ".json");
    save_checkpoint(net, path);
    CHECK(load_checkpoint(path) == net);
    CHECK(network_from_json(to_json(net)) == net);
  }
  nlohmann::json bad = to_json(init_network(std::vector<int>{2, 3, 1}, Activation::ReLU, 0));
  bad["weights"][0][0] = "x";
  CHECK_THROWS(network_from_json(bad));
}

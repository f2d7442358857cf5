#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dflm::nn {

enum class Activation { ReLU, Tanh };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

/// Dense feed-forward network u(x; theta) with a scalar, linear output layer.
///
/// weights[l] has shape (layer_dims[l+1] x layer_dims[l]); the activation is
/// applied after every layer except the last.
struct Network {
  std::vector<int> layer_dims;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::ReLU;

  int input_dim() const { return layer_dims.front(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;

  /// Throws std::invalid_argument if shapes are inconsistent, the output
  /// dimension is not 1, or any parameter is non-finite.
  void validate() const;

  bool operator==(const Network& other) const;
};

/// Parameter-shaped arrays, used for gradients and optimizer moments.
struct GradientSet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static GradientSet zeros_like(const Network& net);

  GradientSet& operator+=(const GradientSet& other);
  GradientSet& operator*=(double s);
  bool all_finite() const;
  bool congruent_with(const Network& net) const;
  /// Sum of squared entries.
  double squared_norm() const;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.99;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  GradientSet first_moment;
  GradientSet second_moment;
  std::uint64_t step = 0;

  static AdamState fresh(const Network& net, const AdamConfig& config);
};

/// He initialization: weights ~ N(0, 2/fan_in), zero biases.
Network init_network(std::span<const int> layer_dims, Activation act, std::uint64_t seed);

double forward(const Network& net, std::span<const double> x);

/// Evaluates the network at every column of `points` (input_dim x n).
Eigen::VectorXd forward_batch(const Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points);

/// upstream * d u(x) / d theta.
GradientSet backprop(const Network& net, std::span<const double> x, double upstream);

/// Accumulates sum_j upstream[j] * d u(points.col(j)) / d theta into `grads`.
void backprop_batch(const Network& net, const Eigen::Ref<const Eigen::MatrixXd>& points,
                    const Eigen::Ref<const Eigen::VectorXd>& upstream, GradientSet& grads);

/// Forward pass over `points` that also accumulates
/// sum_j upstream(j, u_j) * d u_j / d theta into `grads`, where the upstream
/// weight is computed from each output. Returns the outputs u_j.
Eigen::VectorXd forward_backprop_batch(const Network& net,
                                       const Eigen::Ref<const Eigen::MatrixXd>& points,
                                       const std::function<double(Eigen::Index, double)>& upstream,
                                       GradientSet& grads);

/// Gradient of u with respect to its input; ReLU'(0) = 0 as in backprop.
Eigen::VectorXd grad_input(const Network& net, std::span<const double> x);

/// One bias-corrected Adam update. Throws std::invalid_argument (leaving
/// both `state` and `net` untouched) if any gradient entry is non-finite.
void adam_step(AdamState& state, Network& net, const GradientSet& grads);

nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace dflm::nn

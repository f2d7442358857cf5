#pragma once

#include "dflm/nn.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>

namespace dflm {

/// Read-only view of a scalar field u(x): a frozen network or a closed form.
class FieldEvaluator {
 public:
  virtual ~FieldEvaluator() = default;

  virtual int dim() const = 0;
  virtual double value(std::span<const double> x) const = 0;

  /// Values at every column of `points` (dim x n).
  virtual Eigen::VectorXd values(const Eigen::Ref<const Eigen::MatrixXd>& points) const {
    Eigen::VectorXd out(points.cols());
    Eigen::VectorXd col(points.rows());
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      col = points.col(j);
      out(j) = value({col.data(), static_cast<std::size_t>(col.size())});
    }
    return out;
  }

  /// grad u(x). The default is a central difference with step 1e-6.
  virtual void gradient(std::span<const double> x, std::span<double> grad) const {
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(x.data(), dim());
    constexpr double h = 1e-6;
    for (int i = 0; i < dim(); ++i) {
      const double orig = p(i);
      p(i) = orig + h;
      const double up = value({p.data(), x.size()});
      p(i) = orig - h;
      const double down = value({p.data(), x.size()});
      p(i) = orig;
      grad[i] = (up - down) / (2.0 * h);
    }
  }
};

class NetworkEvaluator final : public FieldEvaluator {
 public:
  explicit NetworkEvaluator(const nn::Network& net) : net_(net) {}

  int dim() const override { return net_.input_dim(); }
  double value(std::span<const double> x) const override { return nn::forward(net_, x); }
  Eigen::VectorXd values(const Eigen::Ref<const Eigen::MatrixXd>& points) const override {
    return nn::forward_batch(net_, points);
  }
  void gradient(std::span<const double> x, std::span<double> grad) const override {
    const Eigen::VectorXd g = nn::grad_input(net_, x);
    for (int i = 0; i < g.size(); ++i) grad[i] = g(i);
  }

 private:
  const nn::Network& net_;
};

class FunctionEvaluator final : public FieldEvaluator {
 public:
  using Value = std::function<double(std::span<const double>)>;
  using Gradient = std::function<void(std::span<const double>, std::span<double>)>;

  FunctionEvaluator(int dim, Value value, Gradient gradient = {})
      : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)) {}

  int dim() const override { return dim_; }
  double value(std::span<const double> x) const override { return value_(x); }
  void gradient(std::span<const double> x, std::span<double> grad) const override {
    if (gradient_) {
      gradient_(x, grad);
    } else {
      FieldEvaluator::gradient(x, grad);
    }
  }

 private:
  int dim_;
  Value value_;
  Gradient gradient_;
};

}  // namespace dflm

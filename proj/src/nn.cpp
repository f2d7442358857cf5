#include "dflm/nn.hpp"

#include "dflm/rng.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dflm::nn {

namespace {

constexpr Eigen::Index kChunk = 512;

using Eigen::MatrixXd;
using Eigen::VectorXd;

void activate(Activation act, Eigen::Ref<MatrixXd> z) {
  switch (act) {
    case Activation::ReLU:
      z = z.cwiseMax(0.0);
      break;
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
  }
}

// Multiplies `delta` by the activation derivative, expressed through the
// post-activation values (ReLU: a > 0, i.e. z > 0; tanh: 1 - a^2).
void scale_by_derivative(Activation act, const MatrixXd& post, MatrixXd& delta) {
  switch (act) {
    case Activation::ReLU:
      delta = (post.array() > 0.0).select(delta, 0.0);
      break;
    case Activation::Tanh:
      delta.array() *= 1.0 - post.array().square();
      break;
  }
}

void check_input(const Network& net, Eigen::Index dim) {
  if (dim != net.input_dim()) {
    std::ostringstream msg;
    msg << "input dimension " << dim << " does not match network input dimension "
        << net.input_dim();
    throw std::invalid_argument(msg.str());
  }
}

// Forward pass over one chunk keeping every layer's post-activation values.
// acts[0] is the input; acts[L] is the 1 x n output row.
void forward_keep(const Network& net, const Eigen::Ref<const MatrixXd>& points,
                  std::vector<MatrixXd>& acts) {
  const std::size_t layers = net.num_layers();
  acts.resize(layers + 1);
  acts[0] = points;
  for (std::size_t l = 0; l < layers; ++l) {
    acts[l + 1].noalias() = net.weights[l] * acts[l];
    acts[l + 1].colwise() += net.biases[l];
    if (l + 1 < layers) activate(net.activation, acts[l + 1]);
  }
}

// Backward pass over a chunk whose activations are in `acts`. Accumulates
// parameter gradients into `grads` (if non-null) and returns the input
// gradient matrix (input_dim x n) if `want_input` is set.
MatrixXd backward(const Network& net, const std::vector<MatrixXd>& acts,
                  const Eigen::Ref<const Eigen::RowVectorXd>& upstream, GradientSet* grads,
                  bool want_input) {
  const std::size_t layers = net.num_layers();
  MatrixXd delta = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    if (grads != nullptr) {
      grads->weights[l].noalias() += delta * acts[l].transpose();
      grads->biases[l] += delta.rowwise().sum();
    }
    if (l > 0 || want_input) {
      MatrixXd next = net.weights[l].transpose() * delta;
      if (l > 0) scale_by_derivative(net.activation, acts[l], next);
      delta = std::move(next);
    }
  }
  return want_input ? delta : MatrixXd();
}

Eigen::Map<const VectorXd> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

}  // namespace

std::string_view to_string(Activation act) {
  return act == Activation::ReLU ? "relu" : "tanh";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu" || name == "ReLU") return Activation::ReLU;
  if (name == "tanh" || name == "Tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::size_t Network::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

void Network::validate() const {
  if (layer_dims.size() < 2) throw std::invalid_argument("network needs at least two layer dims");
  for (int d : layer_dims) {
    if (d <= 0) throw std::invalid_argument("layer dimensions must be positive");
  }
  if (layer_dims.back() != 1) throw std::invalid_argument("network output dimension must be 1");
  if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
    throw std::invalid_argument("parameter count does not match layer_dims");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] ||
        biases[l].size() != layer_dims[l + 1]) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has incompatible shape");
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      throw std::invalid_argument("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

bool Network::operator==(const Network& other) const {
  if (layer_dims != other.layer_dims || activation != other.activation) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
  }
  return true;
}

GradientSet GradientSet::zeros_like(const Network& net) {
  GradientSet g;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    g.weights.push_back(MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.push_back(VectorXd::Zero(net.biases[l].size()));
  }
  return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

GradientSet& GradientSet::operator*=(double s) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= s;
    biases[l] *= s;
  }
  return *this;
}

bool GradientSet::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

bool GradientSet::congruent_with(const Network& net) const {
  if (weights.size() != net.num_layers() || biases.size() != net.num_layers()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != net.weights[l].rows() || weights[l].cols() != net.weights[l].cols() ||
        biases[l].size() != net.biases[l].size()) {
      return false;
    }
  }
  return true;
}

double GradientSet::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    s += weights[l].squaredNorm() + biases[l].squaredNorm();
  }
  return s;
}

AdamState AdamState::fresh(const Network& net, const AdamConfig& config) {
  if (!(config.learning_rate > 0.0) || !(config.beta1 > 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 > 0.0 && config.beta2 < 1.0) || !(config.epsilon > 0.0)) {
    throw std::invalid_argument("invalid Adam configuration");
  }
  return AdamState{config, GradientSet::zeros_like(net), GradientSet::zeros_like(net), 0};
}

Network init_network(std::span<const int> layer_dims, Activation act, std::uint64_t seed) {
  if (layer_dims.size() < 3) throw std::invalid_argument("network needs at least one hidden layer");
  Network net;
  net.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  net.activation = act;
  if (net.layer_dims.back() != 1) throw std::invalid_argument("network output dimension must be 1");
  for (int d : net.layer_dims) {
    if (d <= 0) throw std::invalid_argument("layer dimensions must be positive");
  }

  RngStream rng(seed, StreamTag::init);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    const int fan_in = net.layer_dims[l];
    const int fan_out = net.layer_dims[l + 1];
    const double scale = std::sqrt(2.0 / fan_in);
    MatrixXd w(fan_out, fan_in);
    // Row-major fill so the draw order matches the checkpoint layout.
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = scale * normal(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(VectorXd::Zero(fan_out));
  }
  return net;
}

double forward(const Network& net, std::span<const double> x) {
  check_input(net, static_cast<Eigen::Index>(x.size()));
  VectorXd a = as_vector(x);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    VectorXd z = net.weights[l] * a + net.biases[l];
    if (l + 1 < net.num_layers()) activate(net.activation, z);
    a = std::move(z);
  }
  return a(0);
}

VectorXd forward_batch(const Network& net, const Eigen::Ref<const MatrixXd>& points) {
  check_input(net, points.rows());
  const Eigen::Index n = points.cols();
  VectorXd out(n);
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kChunk;
    const Eigen::Index width = std::min(kChunk, n - begin);
    MatrixXd a = points.middleCols(begin, width);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      MatrixXd z = net.weights[l] * a;
      z.colwise() += net.biases[l];
      if (l + 1 < net.num_layers()) activate(net.activation, z);
      a = std::move(z);
    }
    out.segment(begin, width) = a.row(0).transpose();
  }
  return out;
}

GradientSet backprop(const Network& net, std::span<const double> x, double upstream) {
  check_input(net, static_cast<Eigen::Index>(x.size()));
  GradientSet grads = GradientSet::zeros_like(net);
  std::vector<MatrixXd> acts;
  forward_keep(net, as_vector(x), acts);
  Eigen::RowVectorXd up(1);
  up(0) = upstream;
  backward(net, acts, up, &grads, false);
  return grads;
}

void backprop_batch(const Network& net, const Eigen::Ref<const MatrixXd>& points,
                    const Eigen::Ref<const VectorXd>& upstream, GradientSet& grads) {
  check_input(net, points.rows());
  if (upstream.size() != points.cols()) {
    throw std::invalid_argument("upstream size does not match number of points");
  }
  if (!grads.congruent_with(net)) throw std::invalid_argument("gradient set shape mismatch");
  const Eigen::Index n = points.cols();
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  std::vector<GradientSet> partial(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kChunk;
    const Eigen::Index width = std::min(kChunk, n - begin);
    std::vector<MatrixXd> acts;
    forward_keep(net, points.middleCols(begin, width), acts);
    auto& g = partial[static_cast<std::size_t>(c)];
    g = GradientSet::zeros_like(net);
    backward(net, acts, upstream.segment(begin, width).transpose(), &g, false);
  }
  // Fixed chunk order keeps the reduction bit-reproducible for any thread count.
  for (const auto& g : partial) grads += g;
}

VectorXd forward_backprop_batch(const Network& net, const Eigen::Ref<const MatrixXd>& points,
                                const std::function<double(Eigen::Index, double)>& upstream,
                                GradientSet& grads) {
  check_input(net, points.rows());
  if (!grads.congruent_with(net)) throw std::invalid_argument("gradient set shape mismatch");
  const Eigen::Index n = points.cols();
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  VectorXd out(n);
  std::vector<GradientSet> partial(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kChunk;
    const Eigen::Index width = std::min(kChunk, n - begin);
    std::vector<MatrixXd> acts;
    forward_keep(net, points.middleCols(begin, width), acts);
    Eigen::RowVectorXd up(width);
    for (Eigen::Index j = 0; j < width; ++j) {
      const double u = acts.back()(0, j);
      out(begin + j) = u;
      up(j) = upstream(begin + j, u);
    }
    auto& g = partial[static_cast<std::size_t>(c)];
    g = GradientSet::zeros_like(net);
    backward(net, acts, up, &g, false);
  }
  for (const auto& g : partial) grads += g;
  return out;
}

VectorXd grad_input(const Network& net, std::span<const double> x) {
  check_input(net, static_cast<Eigen::Index>(x.size()));
  std::vector<MatrixXd> acts;
  forward_keep(net, as_vector(x), acts);
  Eigen::RowVectorXd up(1);
  up(0) = 1.0;
  return backward(net, acts, up, nullptr, true).col(0);
}

void adam_step(AdamState& state, Network& net, const GradientSet& grads) {
  if (!grads.congruent_with(net) || !state.first_moment.congruent_with(net)) {
    throw std::invalid_argument("adam_step: gradient/optimizer shape mismatch");
  }
  if (!grads.all_finite()) {
    throw std::invalid_argument("adam_step: non-finite gradient entries at step " +
                                std::to_string(state.step + 1) + "; update aborted");
  }
  const auto& cfg = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    param.array() -=
        cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    update(net.weights[l], state.first_moment.weights[l], state.second_moment.weights[l],
           grads.weights[l]);
    update(net.biases[l], state.first_moment.biases[l], state.second_moment.biases[l],
           grads.biases[l]);
  }
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json doc;
  doc["format"] = "dflm-network";
  doc["version"] = 1;
  doc["layer_dims"] = net.layer_dims;
  doc["activation"] = std::string(to_string(net.activation));
  auto weights = nlohmann::json::array();
  auto biases = nlohmann::json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    weights.push_back(flat);
    biases.push_back(std::vector<double>(net.biases[l].data(),
                                         net.biases[l].data() + net.biases[l].size()));
  }
  doc["weights"] = std::move(weights);
  doc["biases"] = std::move(biases);
  return doc;
}

Network network_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "dflm-network") {
    throw std::invalid_argument("not a dflm-network document");
  }
  Network net;
  net.layer_dims = doc.at("layer_dims").get<std::vector<int>>();
  net.activation = parse_activation(doc.at("activation").get<std::string>());
  const auto& weights = doc.at("weights");
  const auto& biases = doc.at("biases");
  if (net.layer_dims.size() < 2 || weights.size() != net.layer_dims.size() - 1 ||
      biases.size() != weights.size()) {
    throw std::invalid_argument("checkpoint layer count mismatch");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const int rows = net.layer_dims[l + 1];
    const int cols = net.layer_dims[l];
    const auto flat = weights[l].get<std::vector<double>>();
    const auto b = biases[l].get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(rows) * cols ||
        b.size() != static_cast<std::size_t>(rows)) {
      throw std::invalid_argument("checkpoint layer " + std::to_string(l) + " size mismatch");
    }
    MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::Map<const VectorXd>(b.data(), rows));
  }
  net.validate();
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << to_json(net).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return network_from_json(nlohmann::json::parse(in));
}

}  // namespace dflm::nn

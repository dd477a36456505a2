#include "quadrace/neuralnet.hpp"

#include <cmath>
#include <sstream>

namespace quadrace {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void apply_activation(Activation act, Eigen::MatrixXd& m) {
  if (act == Activation::relu) {
    m = m.cwiseMax(0.0);
  } else {
    m = m.array().tanh().matrix();
  }
}

void check_input(const MlpNet& net, Eigen::Index rows) {
  if (rows != net.input_dim()) {
    std::ostringstream os;
    os << "net expects " << net.input_dim() << " inputs, got " << rows;
    throw DimensionError(os.str());
  }
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) { return act == Activation::relu ? "relu" : "tanh"; }

std::size_t MlpNet::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

MlpNet MlpNet::zeros(std::vector<int> sizes, Activation hidden) {
  if (sizes.size() < 2) throw DimensionError("an MLP needs at least input and output sizes");
  MlpNet net;
  net.sizes = std::move(sizes);
  net.hidden = hidden;
  net.in_shift = Eigen::VectorXd::Zero(net.sizes.front());
  net.in_scale = Eigen::VectorXd::Ones(net.sizes.front());
  for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    net.weights.push_back(Eigen::MatrixXd::Zero(net.sizes[l + 1], net.sizes[l]));
    net.biases.push_back(Eigen::VectorXd::Zero(net.sizes[l + 1]));
  }
  net.validate();
  return net;
}

MlpNet MlpNet::random(std::vector<int> sizes, Activation hidden, Rng& rng, double hidden_gain,
                      double output_gain) {
  MlpNet net = zeros(std::move(sizes), hidden);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const bool last = l + 1 == net.weights.size();
    const double stddev = (last ? output_gain : hidden_gain) / std::sqrt(double(net.sizes[l]));
    auto& w = net.weights[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = stddev * normal(rng);
    }
  }
  return net;
}

void MlpNet::validate() const {
  if (sizes.size() < 2) throw DimensionError("an MLP needs at least input and output sizes");
  if (weights.size() + 1 != sizes.size() || biases.size() != weights.size()) {
    throw DimensionError("layer count does not match size list");
  }
  for (int s : sizes) {
    if (s <= 0) throw DimensionError("layer sizes must be positive");
  }
  if (in_shift.size() != sizes.front() || in_scale.size() != sizes.front()) {
    throw DimensionError("input normalization length does not match input size");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != sizes[l + 1] || weights[l].cols() != sizes[l] ||
        biases[l].size() != sizes[l + 1]) {
      std::ostringstream os;
      os << "layer " << l << " has shape " << weights[l].rows() << "x" << weights[l].cols()
         << ", expected " << sizes[l + 1] << "x" << sizes[l];
      throw DimensionError(os.str());
    }
  }
}

Eigen::VectorXd MlpNet::forward(std::span<const double> x) const {
  check_input(*this, static_cast<Eigen::Index>(x.size()));
  Eigen::Map<const Eigen::VectorXd> xin(x.data(), static_cast<Eigen::Index>(x.size()));
  return forward_batch(Eigen::MatrixXd(xin)).col(0);
}

Eigen::MatrixXd MlpNet::forward_batch(const Eigen::MatrixXd& x) const {
  check_input(*this, x.rows());
  Eigen::MatrixXd h = (x.colwise() - in_shift).array().colwise() * in_scale.array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = weights[l] * h;
    z.colwise() += biases[l];
    if (l + 1 < weights.size()) apply_activation(hidden, z);
    h = std::move(z);
  }
  return h;
}

MlpGrad MlpGrad::zeros_like(const MlpNet& net) {
  MlpGrad g;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
  return g;
}

void MlpGrad::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Eigen::MatrixXd forward_batch(const MlpNet& net, const Eigen::MatrixXd& x, MlpCache& cache) {
  check_input(net, x.rows());
  const std::size_t layers = net.weights.size();
  cache.layer_inputs.resize(layers + 1);
  cache.pre_acts.resize(layers - 1);
  cache.layer_inputs[0] = (x.colwise() - net.in_shift).array().colwise() * net.in_scale.array();
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = net.weights[l] * cache.layer_inputs[l];
    z.colwise() += net.biases[l];
    if (l + 1 < layers) {
      cache.pre_acts[l] = z;
      apply_activation(net.hidden, z);
    }
    cache.layer_inputs[l + 1] = std::move(z);
  }
  return cache.layer_inputs[layers];
}

Eigen::MatrixXd backward_batch(const MlpNet& net, const MlpCache& cache,
                               const Eigen::MatrixXd& upstream, MlpGrad& grad) {
  const std::size_t layers = net.weights.size();
  if (upstream.rows() != net.output_dim() ||
      upstream.cols() != cache.layer_inputs.front().cols()) {
    throw DimensionError("upstream gradient shape does not match the cached forward pass");
  }
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) {
      const Eigen::MatrixXd& z = cache.pre_acts[l];
      if (net.hidden == Activation::relu) {
        delta = (z.array() > 0.0).select(delta, 0.0);
      } else {
        const Eigen::MatrixXd& a = cache.layer_inputs[l + 1];
        delta = (delta.array() * (1.0 - a.array().square())).matrix();
      }
    }
    grad.weights[l].noalias() += delta * cache.layer_inputs[l].transpose();
    grad.biases[l] += delta.rowwise().sum();
    delta = net.weights[l].transpose() * delta;
  }
  return (delta.array().colwise() * net.in_scale.array()).matrix();
}

BackwardResult backward(const MlpNet& net, std::span<const double> x,
                        std::span<const double> upstream) {
  check_input(net, static_cast<Eigen::Index>(x.size()));
  if (static_cast<int>(upstream.size()) != net.output_dim()) {
    throw DimensionError("upstream gradient length does not match net output");
  }
  MlpCache cache;
  Eigen::Map<const Eigen::VectorXd> xin(x.data(), static_cast<Eigen::Index>(x.size()));
  forward_batch(net, Eigen::MatrixXd(xin), cache);
  BackwardResult out{MlpGrad::zeros_like(net), {}};
  Eigen::Map<const Eigen::VectorXd> up(upstream.data(), static_cast<Eigen::Index>(upstream.size()));
  out.input = backward_batch(net, cache, Eigen::MatrixXd(up), out.params).col(0);
  return out;
}

std::vector<std::span<double>> parameter_views(MlpNet& net) {
  std::vector<std::span<double>> v;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    v.emplace_back(net.weights[l].data(), static_cast<std::size_t>(net.weights[l].size()));
    v.emplace_back(net.biases[l].data(), static_cast<std::size_t>(net.biases[l].size()));
  }
  return v;
}

std::vector<std::span<double>> parameter_views(MlpGrad& grad) {
  std::vector<std::span<double>> v;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    v.emplace_back(grad.weights[l].data(), static_cast<std::size_t>(grad.weights[l].size()));
    v.emplace_back(grad.biases[l].data(), static_cast<std::size_t>(grad.biases[l].size()));
  }
  return v;
}

// ---------------------------------------------------------------------------

void GaussianPolicy::validate() const {
  mean_net.validate();
  const auto n = mean_net.output_dim();
  if (log_std.size() != n || low.size() != n || high.size() != n) {
    throw DimensionError("policy log_std/bounds length does not match action dimension");
  }
  for (int i = 0; i < n; ++i) {
    if (!(low[i] < high[i])) throw std::invalid_argument("policy bounds need low < high");
    if (!std::isfinite(log_std[i])) throw std::invalid_argument("policy log_std must be finite");
  }
}

Eigen::MatrixXd GaussianPolicy::mean_from_output(const Eigen::MatrixXd& out) const {
  return ((out.array().colwise() * half_range().array()).colwise() + center().array()).matrix();
}

Eigen::VectorXd GaussianPolicy::mean(std::span<const double> obs) const {
  return mean_from_output(mean_net.forward(obs)).col(0);
}

Eigen::VectorXd GaussianPolicy::clamp(const Eigen::VectorXd& a) const {
  return a.cwiseMax(low).cwiseMin(high);
}

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> sample) {
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double z = (sample[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
  double h = 0.0;
  for (double s : log_std) h += s + 0.5 + kHalfLog2Pi;
  return h;
}

PolicySample sample_around(const GaussianPolicy& pol, const Eigen::VectorXd& mean, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PolicySample s;
  s.raw.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    s.raw[i] = mean[i] + std::exp(pol.log_std[i]) * normal(rng);
  }
  s.log_prob = gaussian_log_prob({mean.data(), std::size_t(mean.size())},
                                 {pol.log_std.data(), std::size_t(pol.log_std.size())},
                                 {s.raw.data(), std::size_t(s.raw.size())});
  s.action = pol.clamp(s.raw);
  return s;
}

PolicySample policy_sample(const GaussianPolicy& pol, std::span<const double> obs, Rng& rng) {
  return sample_around(pol, pol.mean(obs), rng);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<std::span<double>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(const std::vector<std::span<double>>& grads) {
  if (grads.size() != params_.size()) throw DimensionError("Adam: gradient list mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto p = params_[k];
    auto g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
    }
  }
}

double global_norm(const std::vector<std::span<double>>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g) s += x * x;
  }
  return std::sqrt(s);
}

void scale_all(const std::vector<std::span<double>>& grads, double factor) {
  for (const auto& g : grads) {
    for (double& x : g) x *= factor;
  }
}

}  // namespace quadrace

#pragma once

// Dense multilayer perceptrons used for policies, value functions and the
// residual force/moment models.
//
// A net maps a raw input x to
//   h0 = (x - shift) .* scale
//   h_{l+1} = act(W_l h_l + b_l)      for hidden layers
//   y = W_L h_L + b_L                  (linear output layer)
// Batched routines store one sample per column.

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadrace {

using Rng = std::mt19937_64;

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MlpNet {
  std::vector<int> sizes;  // input, hidden..., output
  Activation hidden = Activation::relu;
  Eigen::VectorXd in_shift;
  Eigen::VectorXd in_scale;
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;

  /// Zero weights/biases, identity normalization.
  static MlpNet zeros(std::vector<int> sizes, Activation hidden);

  /// Gaussian fan-in initialization; hidden layers use `hidden_gain`, the
  /// output layer `output_gain`. Biases start at zero.
  static MlpNet random(std::vector<int> sizes, Activation hidden, Rng& rng,
                       double hidden_gain = 1.4142135623730951, double output_gain = 1.0);

  /// Throws DimensionError when layer shapes do not chain.
  void validate() const;

  Eigen::VectorXd forward(std::span<const double> x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;
};

/// Parameter gradients with the same layout as an MlpNet.
struct MlpGrad {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MlpGrad zeros_like(const MlpNet& net);
  void set_zero();
};

/// Activations recorded by a batched forward pass, consumed by backward.
struct MlpCache {
  std::vector<Eigen::MatrixXd> layer_inputs;  // h_0 .. h_L
  std::vector<Eigen::MatrixXd> pre_acts;      // W_l h_l + b_l for hidden layers
};

Eigen::MatrixXd forward_batch(const MlpNet& net, const Eigen::MatrixXd& x, MlpCache& cache);

/// Reverse-mode pass for the forward recorded in `cache`. Parameter gradients
/// are accumulated into `grad`; returns the gradient with respect to the raw
/// (un-normalized) inputs.
Eigen::MatrixXd backward_batch(const MlpNet& net, const MlpCache& cache,
                               const Eigen::MatrixXd& upstream, MlpGrad& grad);

struct BackwardResult {
  MlpGrad params;
  Eigen::VectorXd input;
};

BackwardResult backward(const MlpNet& net, std::span<const double> x,
                        std::span<const double> upstream);

std::vector<std::span<double>> parameter_views(MlpNet& net);
std::vector<std::span<double>> parameter_views(MlpGrad& grad);

// ---------------------------------------------------------------------------

/// Diagonal Gaussian policy. The mean net output is read as a normalized
/// action in [-1, 1] and mapped affinely onto [low, high]; the standard
/// deviation exp(log_std) is a free parameter in action units.
struct GaussianPolicy {
  MlpNet mean_net;
  Eigen::VectorXd log_std;
  Eigen::VectorXd low;
  Eigen::VectorXd high;

  int obs_dim() const { return mean_net.input_dim(); }
  int action_dim() const { return mean_net.output_dim(); }

  Eigen::VectorXd half_range() const { return 0.5 * (high - low); }
  Eigen::VectorXd center() const { return 0.5 * (high + low); }

  Eigen::VectorXd mean(std::span<const double> obs) const;
  /// Maps raw net outputs (one column per sample) to action means.
  Eigen::MatrixXd mean_from_output(const Eigen::MatrixXd& out) const;
  Eigen::VectorXd clamp(const Eigen::VectorXd& a) const;

  void validate() const;
};

struct PolicySample {
  Eigen::VectorXd action;  // clamped to bounds
  Eigen::VectorXd raw;     // unclamped Gaussian draw
  double log_prob = 0.0;   // density of `raw`
};

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> sample);
double gaussian_entropy(std::span<const double> log_std);

PolicySample policy_sample(const GaussianPolicy& pol, std::span<const double> obs, Rng& rng);

/// Samples around precomputed means; used by batched rollout collection.
PolicySample sample_around(const GaussianPolicy& pol, const Eigen::VectorXd& mean, Rng& rng);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::span<double>> params, AdamConfig config);

  void step(const std::vector<std::span<double>>& grads);
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<std::span<double>> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::int64_t t_ = 0;
};

double global_norm(const std::vector<std::span<double>>& grads);
void scale_all(const std::vector<std::span<double>>& grads, double factor);

}  // namespace quadrace

#pragma once

// Proximal Policy Optimization: rollout collection over a VecEnv, generalized
// advantage estimation, clipped-surrogate updates and training telemetry.

#include "quadrace/env.hpp"
#include "quadrace/neuralnet.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadrace {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PpoConfig {
  double gamma = 0.999;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double learning_rate = 3e-4;
  int rollout_horizon = 512;
  int minibatch_size = 8192;
  int epochs = 10;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  /// Rewards are multiplied by this before GAE and value regression; logged
  /// returns stay in reward units.
  double reward_scale = 1.0;
  std::int64_t total_steps = 5'000'000;
  std::uint64_t seed = 1;
  int num_envs = 100;
  int checkpoint_every = 0;  // iterations; 0 disables
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct PolicyConfig {
  std::vector<int> hidden{64, 64, 64};
  Activation activation = Activation::relu;
  /// Initial standard deviation as a fraction of each action's half range.
  double init_std_fraction = 0.25;
  double output_gain = 0.01;
};

GaussianPolicy make_policy(int obs_dim, const ActionBounds& bounds, const ObsScaling& scaling,
                           const PolicyConfig& config, Rng& rng);
MlpNet make_value_net(int obs_dim, const ObsScaling& scaling, const PolicyConfig& config, Rng& rng);

// ---------------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}, returns = A + V,
/// where V_T is `last_value`.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double last_value, double gamma,
                      double lambda);

/// Flattened on-policy samples, one column / entry per transition.
struct RolloutBatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;  // unclamped Gaussian draws
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> dones;
  Eigen::VectorXd returns;
  Eigen::VectorXd advantages;

  Eigen::Index size() const { return log_probs.size(); }
  void validate() const;
  void normalize_advantages();
};

struct PolicyGradient {
  MlpGrad mean_net;
  Eigen::VectorXd log_std;
  double policy_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Gradient of  -mean_i min(rho_i A_i, clip(rho_i, 1 +- eps) A_i) - c_ent H
/// over the given columns of the batch.
PolicyGradient clipped_surrogate_gradient(const GaussianPolicy& pol, const RolloutBatch& batch,
                                          std::span<const Eigen::Index> columns, double clip_ratio,
                                          double entropy_coef);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
};

/// Policy, value function and their joint Adam state.
class PpoLearner {
 public:
  PpoLearner(GaussianPolicy policy, MlpNet value, const PpoConfig& config);
  PpoLearner(const PpoLearner&) = delete;
  PpoLearner& operator=(const PpoLearner&) = delete;

  const GaussianPolicy& policy() const { return policy_; }
  const MlpNet& value() const { return value_; }
  GaussianPolicy& policy() { return policy_; }
  MlpNet& value() { return value_; }

  /// Runs `epochs` passes of shuffled minibatch updates. The batch must
  /// already carry normalized advantages and returns.
  UpdateStats update(const RolloutBatch& batch, Rng& rng);

 private:
  std::vector<std::span<double>> parameter_list();

  GaussianPolicy policy_;
  MlpNet value_;
  PpoConfig config_;
  Adam adam_;
};

UpdateStats ppo_update(PpoLearner& learner, const RolloutBatch& batch, Rng& rng);

// ---------------------------------------------------------------------------

struct IterationLog {
  int iteration = 0;
  std::int64_t env_steps = 0;
  int episodes = 0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double gates_per_episode = 0.0;
  double total_gates = 0.0;
  double mean_step_reward = 0.0;
  double action_std = 0.0;
  UpdateStats update;
};

/// One JSON object per line.
std::string to_json_line(const IterationLog& log);

struct TrainConfig {
  PpoConfig ppo;
  PolicyConfig policy;
};

struct TrainResult {
  GaussianPolicy policy;
  MlpNet value;
  std::vector<IterationLog> log;
};

using IterationCallback = std::function<void(const IterationLog&)>;

/// Alternates vectorized rollouts and PPO updates until `total_steps`
/// environment transitions have been collected.
TrainResult train(const EnvFactory& factory, const TrainConfig& config,
                  std::ostream* log_stream = nullptr, const IterationCallback& on_iteration = {});

}  // namespace quadrace

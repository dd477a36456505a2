#include "quadrace/ppo.hpp"

#include "quadrace/weights_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace quadrace {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw std::invalid_argument("gae_lambda must lie in [0, 1]");
  }
  if (!(clip_ratio > 0.0)) throw std::invalid_argument("clip_ratio must be positive");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
  if (rollout_horizon < 1 || minibatch_size < 1 || epochs < 1 || num_envs < 1) {
    throw std::invalid_argument("horizon, minibatch size, epochs and num_envs must be positive");
  }
  if (!(reward_scale > 0.0)) throw std::invalid_argument("reward_scale must be positive");
}

GaussianPolicy make_policy(int obs_dim, const ActionBounds& bounds, const ObsScaling& scaling,
                           const PolicyConfig& config, Rng& rng) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(static_cast<int>(bounds.low.size()));
  GaussianPolicy pol;
  pol.mean_net = MlpNet::random(sizes, config.activation, rng, std::sqrt(2.0), config.output_gain);
  pol.mean_net.in_shift = scaling.shift;
  pol.mean_net.in_scale = scaling.scale;
  pol.low = bounds.low;
  pol.high = bounds.high;
  pol.log_std = (config.init_std_fraction * pol.half_range()).array().log().matrix();
  pol.validate();
  return pol;
}

MlpNet make_value_net(int obs_dim, const ObsScaling& scaling, const PolicyConfig& config, Rng& rng) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(1);
  MlpNet net = MlpNet::random(sizes, config.activation, rng, std::sqrt(2.0), 1.0);
  net.in_shift = scaling.shift;
  net.in_scale = scaling.scale;
  return net;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double last_value, double gamma,
                      double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("compute_gae: rewards, values and dones must have equal length");
  }
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  double next_value = last_value;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
    next_value = values[k];
  }
  return out;
}

void RolloutBatch::validate() const {
  const Eigen::Index n = size();
  if (obs.cols() != n || actions.cols() != n || rewards.size() != n || values.size() != n ||
      Eigen::Index(dones.size()) != n || returns.size() != n || advantages.size() != n) {
    throw std::invalid_argument("rollout batch fields have mismatched lengths");
  }
}

void RolloutBatch::normalize_advantages() {
  const double mean = advantages.mean();
  const double var = (advantages.array() - mean).square().mean();
  advantages = ((advantages.array() - mean) / (std::sqrt(var) + 1e-8)).matrix();
}

PolicyGradient clipped_surrogate_gradient(const GaussianPolicy& pol, const RolloutBatch& batch,
                                          std::span<const Eigen::Index> columns, double clip_ratio,
                                          double entropy_coef) {
  const auto b = static_cast<Eigen::Index>(columns.size());
  const int adim = pol.action_dim();
  std::vector<Eigen::Index> cols(columns.begin(), columns.end());
  const Eigen::MatrixXd x = batch.obs(Eigen::all, cols);
  const Eigen::MatrixXd a = batch.actions(Eigen::all, cols);

  MlpCache cache;
  const Eigen::MatrixXd mean = pol.mean_from_output(forward_batch(pol.mean_net, x, cache));
  const Eigen::VectorXd inv_sigma = (-pol.log_std).array().exp();
  const Eigen::VectorXd half = pol.half_range();
  const double log_norm = pol.log_std.sum() + 0.5 * adim * std::log(2.0 * kPi);

  PolicyGradient g{MlpGrad::zeros_like(pol.mean_net), Eigen::VectorXd::Zero(adim)};
  Eigen::MatrixXd d_out(adim, b);
  const double inv_b = 1.0 / double(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Eigen::VectorXd z = (a.col(i) - mean.col(i)).cwiseProduct(inv_sigma);
    const double logp = -0.5 * z.squaredNorm() - log_norm;
    const double ratio = std::exp(logp - batch.log_probs[cols[std::size_t(i)]]);
    const double adv = batch.advantages[cols[std::size_t(i)]];
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv;
    g.policy_loss -= std::min(unclipped, clipped) * inv_b;
    g.approx_kl += ((ratio - 1.0) - std::log(ratio)) * inv_b;
    if (std::abs(ratio - 1.0) > clip_ratio) g.clip_fraction += inv_b;

    // d loss / d logp for this sample
    const double dlogp = unclipped <= clipped ? -adv * ratio * inv_b : 0.0;
    d_out.col(i) = dlogp * z.cwiseProduct(inv_sigma).cwiseProduct(half);
    g.log_std += dlogp * (z.array().square() - 1.0).matrix();
  }
  backward_batch(pol.mean_net, cache, d_out, g.mean_net);

  g.entropy = gaussian_entropy({pol.log_std.data(), std::size_t(adim)});
  g.policy_loss -= entropy_coef * g.entropy;
  g.log_std.array() -= entropy_coef;
  return g;
}

// ---------------------------------------------------------------------------

PpoLearner::PpoLearner(GaussianPolicy policy, MlpNet value, const PpoConfig& config)
    : policy_(std::move(policy)), value_(std::move(value)), config_(config) {
  config_.validate();
  policy_.validate();
  value_.validate();
  if (value_.input_dim() != policy_.obs_dim() || value_.output_dim() != 1) {
    throw DimensionError("value net must map the policy observation to a scalar");
  }
  adam_ = Adam(parameter_list(), AdamConfig{config_.learning_rate});
}

std::vector<std::span<double>> PpoLearner::parameter_list() {
  auto params = parameter_views(policy_.mean_net);
  params.emplace_back(policy_.log_std.data(), std::size_t(policy_.log_std.size()));
  for (auto v : parameter_views(value_)) params.push_back(v);
  return params;
}

UpdateStats PpoLearner::update(const RolloutBatch& batch, Rng& rng) {
  batch.validate();
  const Eigen::Index n = batch.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  UpdateStats stats;
  int minibatches = 0;
  MlpGrad value_grad = MlpGrad::zeros_like(value_);
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += config_.minibatch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config_.minibatch_size, n - start);
      std::span<const Eigen::Index> cols(order.data() + start, std::size_t(len));

      PolicyGradient pg = clipped_surrogate_gradient(policy_, batch, cols, config_.clip_ratio,
                                                     config_.entropy_coef);

      std::vector<Eigen::Index> cv(cols.begin(), cols.end());
      MlpCache cache;
      const Eigen::MatrixXd v = forward_batch(value_, batch.obs(Eigen::all, cv), cache);
      const Eigen::RowVectorXd err = v.row(0) - batch.returns(cv).transpose();
      const double value_loss = err.squaredNorm() / double(len);
      value_grad.set_zero();
      backward_batch(value_, cache, (2.0 * config_.value_coef / double(len)) * err, value_grad);

      const double total = pg.policy_loss + config_.value_coef * value_loss;
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "non-finite PPO loss (policy " << pg.policy_loss << ", value " << value_loss
           << ", entropy " << pg.entropy << ", approx_kl " << pg.approx_kl << ") in epoch "
           << epoch << ", minibatch starting at " << start;
        throw TrainingError(os.str());
      }

      auto grads = parameter_views(pg.mean_net);
      grads.emplace_back(pg.log_std.data(), std::size_t(pg.log_std.size()));
      for (auto gv : parameter_views(value_grad)) grads.push_back(gv);
      const double norm = global_norm(grads);
      if (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm) {
        scale_all(grads, config_.max_grad_norm / norm);
      }
      adam_.step(grads);

      stats.policy_loss += pg.policy_loss;
      stats.value_loss += value_loss;
      stats.entropy += pg.entropy;
      stats.approx_kl += pg.approx_kl;
      stats.clip_fraction += pg.clip_fraction;
      stats.grad_norm += norm;
      ++minibatches;
    }
  }
  const double k = 1.0 / std::max(1, minibatches);
  stats.policy_loss *= k;
  stats.value_loss *= k;
  stats.entropy *= k;
  stats.approx_kl *= k;
  stats.clip_fraction *= k;
  stats.grad_norm *= k;
  return stats;
}

UpdateStats ppo_update(PpoLearner& learner, const RolloutBatch& batch, Rng& rng) {
  return learner.update(batch, rng);
}

// ---------------------------------------------------------------------------

std::string to_json_line(const IterationLog& log) {
  nlohmann::ordered_json j;
  j["iteration"] = log.iteration;
  j["env_steps"] = log.env_steps;
  j["episodes"] = log.episodes;
  j["mean_return"] = log.mean_return;
  j["mean_length"] = log.mean_length;
  j["gates_per_episode"] = log.gates_per_episode;
  j["total_gates"] = log.total_gates;
  j["mean_step_reward"] = log.mean_step_reward;
  j["action_std"] = log.action_std;
  j["policy_loss"] = log.update.policy_loss;
  j["value_loss"] = log.update.value_loss;
  j["entropy"] = log.update.entropy;
  j["approx_kl"] = log.update.approx_kl;
  j["clip_fraction"] = log.update.clip_fraction;
  j["grad_norm"] = log.update.grad_norm;
  return j.dump();
}

namespace {

constexpr std::uint64_t kTagPolicyNoise = 1;
constexpr std::uint64_t kTagShuffle = 2;
constexpr std::uint64_t kTagInit = 3;
constexpr std::uint64_t kTagEnvs = 4;

}  // namespace

TrainResult train(const EnvFactory& factory, const TrainConfig& config, std::ostream* log_stream,
                  const IterationCallback& on_iteration) {
  const PpoConfig& pc = config.ppo;
  pc.validate();

  VecEnv venv(factory, std::size_t(pc.num_envs), derive_seed(pc.seed, 0, kTagEnvs));
  const int odim = venv.obs_dim();
  const int adim = venv.action_dim();
  const auto n_env = static_cast<Eigen::Index>(venv.size());
  const auto horizon = static_cast<Eigen::Index>(pc.rollout_horizon);

  Rng init_rng(derive_seed(pc.seed, 0, kTagInit));
  const ActionBounds bounds = venv.at(0).bounds();
  const ObsScaling scaling = venv.at(0).scaling();
  PpoLearner learner(make_policy(odim, bounds, scaling, config.policy, init_rng),
                     make_value_net(odim, scaling, config.policy, init_rng), pc);

  std::vector<Rng> noise;
  for (Eigen::Index i = 0; i < n_env; ++i) {
    noise.emplace_back(derive_seed(pc.seed, std::uint64_t(i), kTagPolicyNoise));
  }
  Rng shuffle_rng(derive_seed(pc.seed, 0, kTagShuffle));

  TrainResult result;
  Eigen::MatrixXd obs = venv.reset();
  const Eigen::Index samples = horizon * n_env;
  std::int64_t env_steps = 0;
  int iteration = 0;

  RolloutBatch batch;
  while (env_steps < pc.total_steps) {
    batch.obs.resize(odim, samples);
    batch.actions.resize(adim, samples);
    batch.log_probs.resize(samples);
    batch.rewards.resize(samples);
    batch.values.resize(samples);
    batch.dones.assign(std::size_t(samples), 0);

    IterationLog it;
    it.iteration = iteration;
    double return_sum = 0.0, length_sum = 0.0, reward_sum = 0.0;

    const GaussianPolicy& pol = learner.policy();
    for (Eigen::Index t = 0; t < horizon; ++t) {
      const Eigen::MatrixXd means = pol.mean_from_output(pol.mean_net.forward_batch(obs));
      const Eigen::MatrixXd values = learner.value().forward_batch(obs);
      Eigen::MatrixXd actions(adim, n_env);
      for (Eigen::Index i = 0; i < n_env; ++i) {
        const Eigen::Index k = t * n_env + i;
        PolicySample s = sample_around(pol, means.col(i), noise[std::size_t(i)]);
        batch.obs.col(k) = obs.col(i);
        batch.actions.col(k) = s.raw;
        batch.log_probs[k] = s.log_prob;
        batch.values[k] = values(0, i);
        actions.col(i) = s.action;
      }

      VecStepResult res = venv.step(actions);

      std::vector<Eigen::Index> truncated;
      for (Eigen::Index i = 0; i < n_env; ++i) {
        const Eigen::Index k = t * n_env + i;
        const StepInfo& info = res.infos[std::size_t(i)];
        batch.rewards[k] = pc.reward_scale * res.rewards[i];
        batch.dones[std::size_t(k)] = res.dones[std::size_t(i)];
        reward_sum += res.rewards[i];
        if (res.dones[std::size_t(i)]) {
          ++it.episodes;
          return_sum += info.episode_return;
          length_sum += double(info.steps);
          it.total_gates += info.gates_passed;
          if (info.truncated) truncated.push_back(i);
        }
      }
      if (!truncated.empty()) {
        // time-limit bootstrap: the episode was cut, not finished
        Eigen::MatrixXd term(odim, Eigen::Index(truncated.size()));
        for (std::size_t j = 0; j < truncated.size(); ++j) {
          term.col(Eigen::Index(j)) = res.infos[std::size_t(truncated[j])].terminal_obs;
        }
        const Eigen::MatrixXd tv = learner.value().forward_batch(term);
        for (std::size_t j = 0; j < truncated.size(); ++j) {
          batch.rewards[t * n_env + truncated[j]] += pc.gamma * tv(0, Eigen::Index(j));
        }
      }
      obs = std::move(res.obs);
    }
    env_steps += samples;

    const Eigen::MatrixXd last_values = learner.value().forward_batch(obs);
    batch.returns.resize(samples);
    batch.advantages.resize(samples);
    std::vector<double> r(static_cast<std::size_t>(horizon)), v(static_cast<std::size_t>(horizon));
    std::vector<std::uint8_t> d(static_cast<std::size_t>(horizon));
    for (Eigen::Index i = 0; i < n_env; ++i) {
      for (Eigen::Index t = 0; t < horizon; ++t) {
        const Eigen::Index k = t * n_env + i;
        r[std::size_t(t)] = batch.rewards[k];
        v[std::size_t(t)] = batch.values[k];
        d[std::size_t(t)] = batch.dones[std::size_t(k)];
      }
      const GaeResult g = compute_gae(r, v, d, last_values(0, i), pc.gamma, pc.gae_lambda);
      for (Eigen::Index t = 0; t < horizon; ++t) {
        batch.advantages[t * n_env + i] = g.advantages[std::size_t(t)];
        batch.returns[t * n_env + i] = g.returns[std::size_t(t)];
      }
    }
    batch.normalize_advantages();

    it.update = learner.update(batch, shuffle_rng);
    it.env_steps = env_steps;
    if (it.episodes > 0) {
      it.mean_return = return_sum / it.episodes;
      it.mean_length = length_sum / it.episodes;
      it.gates_per_episode = it.total_gates / it.episodes;
    }
    it.mean_step_reward = reward_sum / double(samples);
    it.action_std = learner.policy().log_std.array().exp().mean();

    if (log_stream != nullptr) {
      *log_stream << to_json_line(it) << '\n';
      log_stream->flush();
    }
    if (on_iteration) on_iteration(it);
    result.log.push_back(it);

    ++iteration;
    if (pc.checkpoint_every > 0 && iteration % pc.checkpoint_every == 0 &&
        !pc.checkpoint_dir.empty()) {
      std::filesystem::create_directories(pc.checkpoint_dir);
      std::ostringstream name;
      name << "policy_iter_" << std::setw(5) << std::setfill('0') << iteration << ".qnnw";
      save_policy(learner.policy(), &learner.value(), pc.checkpoint_dir / name.str());
    }
  }

  result.policy = learner.policy();
  result.value = learner.value();
  return result;
}

}  // namespace quadrace

#include "quadrace/ppo.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace quadrace;

namespace {

/// Reward -|a - 0.5 obs|^2 with a fresh uniform observation every step;
/// episodes are cut by a time limit.
class MatchEnv : public Environment {
 public:
  MatchEnv(std::uint64_t seed, int length) : rng_(seed), length_(length) {}

  int obs_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  ActionBounds bounds() const override {
    return {Eigen::VectorXd::Constant(2, -1.0), Eigen::VectorXd::Constant(2, 1.0)};
  }
  Observation reset() override {
    steps_ = 0;
    ret_ = 0.0;
    return draw();
  }
  StepResult step(std::span<const double> action) override {
    const Eigen::Map<const Eigen::VectorXd> a(action.data(), 2);
    StepResult r;
    r.reward = -(a - 0.5 * obs_).squaredNorm();
    ret_ += r.reward;
    ++steps_;
    r.obs = draw();
    r.done = steps_ >= length_;
    r.info.truncated = r.done;
    r.info.steps = steps_;
    r.info.episode_return = ret_;
    if (r.done) r.info.terminal_obs = r.obs;
    return r;
  }

 private:
  Observation draw() {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    obs_ = Observation(2);
    obs_ << u(rng_), u(rng_);
    return obs_;
  }

  Rng rng_;
  int length_;
  int steps_ = 0;
  double ret_ = 0.0;
  Observation obs_;
};

/// Reward 1 every step, constant observation, truncated every `length` steps.
class ConstantEnv : public Environment {
 public:
  explicit ConstantEnv(int length) : length_(length) {}

  int obs_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  ActionBounds bounds() const override {
    return {Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0)};
  }
  Observation reset() override {
    steps_ = 0;
    return Observation::Ones(1);
  }
  StepResult step(std::span<const double>) override {
    StepResult r;
    r.reward = 1.0;
    r.obs = Observation::Ones(1);
    r.done = ++steps_ >= length_;
    r.info.truncated = r.done;
    r.info.steps = steps_;
    if (r.done) r.info.terminal_obs = r.obs;
    return r;
  }

 private:
  int length_;
  int steps_ = 0;
};

GaussianPolicy small_policy(Rng& rng, int obs_dim = 3, int act_dim = 2) {
  PolicyConfig pc;
  pc.hidden = {8, 8};
  pc.activation = Activation::tanh;
  pc.output_gain = 0.5;
  ActionBounds b{Eigen::VectorXd::Constant(act_dim, -2.0), Eigen::VectorXd::Constant(act_dim, 3.0)};
  ObsScaling s{Eigen::VectorXd::Zero(obs_dim), Eigen::VectorXd::Ones(obs_dim)};
  GaussianPolicy pol = make_policy(obs_dim, b, s, pc, rng);
  pol.log_std = Eigen::VectorXd::LinSpaced(act_dim, -0.3, 0.2);
  return pol;
}

RolloutBatch random_batch(const GaussianPolicy& pol, Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd;
  RolloutBatch b;
  b.obs.resize(pol.obs_dim(), n);
  b.actions.resize(pol.action_dim(), n);
  b.log_probs.resize(n);
  b.rewards = Eigen::VectorXd::Zero(n);
  b.values = Eigen::VectorXd::Zero(n);
  b.dones.assign(std::size_t(n), 0);
  b.returns = Eigen::VectorXd::Zero(n);
  b.advantages.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < pol.obs_dim(); ++k) b.obs(k, i) = nd(rng);
    const Eigen::VectorXd o = b.obs.col(i);
    const PolicySample s = policy_sample(pol, {o.data(), std::size_t(o.size())}, rng);
    b.actions.col(i) = s.raw;
    b.log_probs[i] = s.log_prob;
    b.advantages[i] = nd(rng);
  }
  return b;
}

/// -mean_i A_i log pi(a_i | s_i), evaluated from scratch.
double pg_loss(const GaussianPolicy& pol, const RolloutBatch& b) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const Eigen::VectorXd o = b.obs.col(i);
    const Eigen::VectorXd m = pol.mean({o.data(), std::size_t(o.size())});
    const Eigen::VectorXd a = b.actions.col(i);
    sum += b.advantages[i] * gaussian_log_prob({m.data(), std::size_t(m.size())},
                                               {pol.log_std.data(), std::size_t(pol.log_std.size())},
                                               {a.data(), std::size_t(a.size())});
  }
  return -sum / double(b.size());
}

}  // namespace

TEST_CASE("compute_gae matches brute-force sums over many episodes") {
  Rng rng(11);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution end(0.01);
  const std::size_t n = 100000;
  std::vector<double> r(n), v(n);
  std::vector<std::uint8_t> d(n);
  int episodes = 0;
  for (std::size_t k = 0; k < n; ++k) {
    r[k] = nd(rng);
    v[k] = nd(rng);
    d[k] = end(rng);
    episodes += d[k];
  }
  CHECK(episodes > 900);
  for (double gamma : {0.999, 0.9}) {
    for (double lambda : {0.95, 1.0, 0.0}) {
      const GaeResult g = compute_gae(r, v, d, 0.7, gamma, lambda);
      const std::vector<double> ref = oracle::gae_brute_force(r, v, d, 0.7, gamma, lambda);
      double worst = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        worst = std::max(worst, std::abs(g.advantages[k] - ref[k]) / (1.0 + std::abs(ref[k])));
        REQUIRE(g.returns[k] == doctest::Approx(g.advantages[k] + v[k]).epsilon(1e-12));
      }
      CHECK(worst < 1e-9);
    }
  }
}

TEST_CASE("compute_gae closed forms") {
  // lambda = 1, no value baseline: discounted reward-to-go
  const std::vector<double> r{1.0, 2.0, 3.0};
  const std::vector<double> v{0.0, 0.0, 0.0};
  const std::vector<std::uint8_t> d{0, 0, 0};
  const GaeResult g = compute_gae(r, v, d, 4.0, 0.5, 1.0);
  CHECK(g.advantages[2] == doctest::Approx(3.0 + 0.5 * 4.0));
  CHECK(g.advantages[0] == doctest::Approx(1.0 + 0.5 * 2.0 + 0.25 * 3.0 + 0.125 * 4.0));
  // a done cuts the bootstrap
  const std::vector<std::uint8_t> d2{0, 1, 0};
  const GaeResult g2 = compute_gae(r, v, d2, 4.0, 0.5, 1.0);
  CHECK(g2.advantages[1] == doctest::Approx(2.0));
  CHECK(g2.advantages[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(compute_gae(r, std::vector<double>{0.0}, d, 0.0, 0.9, 0.9), std::invalid_argument);
}

TEST_CASE("normalize_advantages gives zero mean and unit variance") {
  RolloutBatch b;
  b.advantages = Eigen::VectorXd::LinSpaced(101, -3.0, 7.0);
  b.normalize_advantages();
  CHECK(b.advantages.mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((b.advantages.array().square().mean()) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("clipped surrogate reduces to the vanilla policy gradient on fresh samples") {
  Rng rng(5);
  GaussianPolicy pol = small_policy(rng);
  RolloutBatch b = random_batch(pol, rng, 64);
  std::vector<Eigen::Index> cols(64);
  std::iota(cols.begin(), cols.end(), Eigen::Index{0});

  PolicyGradient g = clipped_surrogate_gradient(pol, b, cols, 1e12, 0.0);
  PolicyGradient g_clip = clipped_surrogate_gradient(pol, b, cols, 0.2, 0.0);
  CHECK(g.approx_kl == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g.clip_fraction == 0.0);
  // at ratio 1 the surrogate value is -mean(A)
  CHECK(g.policy_loss == doctest::Approx(-b.advantages.mean()).epsilon(1e-12));

  auto analytic = parameter_views(g.mean_net);
  analytic.emplace_back(g.log_std.data(), std::size_t(g.log_std.size()));
  auto clipped = parameter_views(g_clip.mean_net);
  clipped.emplace_back(g_clip.log_std.data(), std::size_t(g_clip.log_std.size()));
  auto params = parameter_views(pol.mean_net);
  params.emplace_back(pol.log_std.data(), std::size_t(pol.log_std.size()));

  const double h = 1e-5;
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t blk = 0; blk < params.size(); ++blk) {
    for (std::size_t i = 0; i < params[blk].size(); ++i) {
      const double keep = params[blk][i];
      params[blk][i] = keep + h;
      const double up = pg_loss(pol, b);
      params[blk][i] = keep - h;
      const double down = pg_loss(pol, b);
      params[blk][i] = keep;
      const double fd = (up - down) / (2.0 * h);
      diff2 += (fd - analytic[blk][i]) * (fd - analytic[blk][i]);
      ref2 += fd * fd;
      REQUIRE(clipped[blk][i] == analytic[blk][i]);
    }
  }
  CHECK(std::sqrt(diff2 / ref2) < 1e-6);
}

TEST_CASE("clipping zeroes the gradient of samples outside the trust region") {
  Rng rng(6);
  GaussianPolicy pol = small_policy(rng);
  RolloutBatch b = random_batch(pol, rng, 32);
  b.advantages.setOnes();
  b.log_probs.array() -= 1.0;  // every ratio is e > 1 + eps
  std::vector<Eigen::Index> cols(32);
  std::iota(cols.begin(), cols.end(), Eigen::Index{0});
  PolicyGradient g = clipped_surrogate_gradient(pol, b, cols, 0.2, 0.0);
  CHECK(g.clip_fraction == doctest::Approx(1.0));
  CHECK(g.log_std.norm() == 0.0);
  for (const auto& w : g.mean_net.weights) CHECK(w.norm() == 0.0);
  CHECK(g.policy_loss == doctest::Approx(-1.2));
}

TEST_CASE("entropy bonus shifts the log-std gradient") {
  Rng rng(7);
  GaussianPolicy pol = small_policy(rng);
  RolloutBatch b = random_batch(pol, rng, 16);
  std::vector<Eigen::Index> cols(16);
  std::iota(cols.begin(), cols.end(), Eigen::Index{0});
  PolicyGradient g0 = clipped_surrogate_gradient(pol, b, cols, 0.2, 0.0);
  PolicyGradient g1 = clipped_surrogate_gradient(pol, b, cols, 0.2, 0.01);
  CHECK((g1.log_std - g0.log_std).isApprox(Eigen::VectorXd::Constant(2, -0.01)));
  CHECK(g1.policy_loss == doctest::Approx(g0.policy_loss - 0.01 * g0.entropy));
}

TEST_CASE("PpoConfig validation") {
  PpoConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 1.5;
  CHECK_THROWS(c.validate());
  c = PpoConfig{};
  c.minibatch_size = 0;
  CHECK_THROWS(c.validate());
  c = PpoConfig{};
  c.reward_scale = 0.0;
  CHECK_THROWS(c.validate());
  c = PpoConfig{};
  c.clip_ratio = 0.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("PPO learns a trivial matching task") {
  TrainConfig cfg;
  cfg.ppo.num_envs = 8;
  cfg.ppo.rollout_horizon = 64;
  cfg.ppo.minibatch_size = 128;
  cfg.ppo.epochs = 5;
  cfg.ppo.learning_rate = 3e-3;
  cfg.ppo.gamma = 0.9;
  cfg.ppo.total_steps = 60000;
  cfg.ppo.seed = 3;
  cfg.policy.hidden = {16, 16};
  cfg.policy.activation = Activation::tanh;
  cfg.policy.init_std_fraction = 0.5;
  EnvFactory f = [](std::size_t, std::uint64_t seed) { return std::make_unique<MatchEnv>(seed, 16); };
  const TrainResult res = train(f, cfg);
  REQUIRE(res.log.size() > 10);
  const double first = res.log.front().mean_step_reward;
  const double last = res.log.back().mean_step_reward;
  // -E|a - 0.5 o|^2 with a ~ N(0, 0.5^2) starts near -(2 * 0.25 + 2 / 12 * 0.5^2 * 4) ~ -0.67
  CHECK(first < -0.4);
  CHECK(last > -0.1);
  CHECK(res.log.back().action_std < res.log.front().action_std);
  // the mean action tracks 0.5 * obs
  Eigen::VectorXd o(2);
  o << 0.8, -0.6;
  const Eigen::VectorXd m = res.policy.mean({o.data(), 2});
  CHECK(m[0] == doctest::Approx(0.4).epsilon(0.15));
  CHECK(m[1] == doctest::Approx(-0.3).epsilon(0.15));
}

TEST_CASE("time-limit truncation bootstraps the value target") {
  TrainConfig cfg;
  cfg.ppo.num_envs = 4;
  cfg.ppo.rollout_horizon = 50;
  cfg.ppo.minibatch_size = 200;
  cfg.ppo.epochs = 10;
  cfg.ppo.learning_rate = 1e-2;
  cfg.ppo.gamma = 0.9;
  cfg.ppo.gae_lambda = 1.0;
  cfg.ppo.total_steps = 40000;
  cfg.policy.hidden = {8};
  cfg.policy.activation = Activation::tanh;
  EnvFactory f = [](std::size_t, std::uint64_t) { return std::make_unique<ConstantEnv>(5); };
  const TrainResult res = train(f, cfg);
  // the state never changes, so the only consistent value is 1 / (1 - gamma);
  // without the bootstrap the target averages truncated sums below 4.1
  const double v = res.value.forward_batch(Eigen::MatrixXd::Ones(1, 1))(0, 0);
  CHECK(v == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  auto track = std::make_shared<const Track>(Track::canonical());
  auto params = std::make_shared<const ModelParams>();
  for (ModelKind kind : {ModelKind::indi, ModelKind::e2e}) {
    EpisodeConfig ep;
    ep.model = kind;
    TrainConfig cfg;
    cfg.ppo.num_envs = 4;
    cfg.ppo.rollout_horizon = 64;
    cfg.ppo.minibatch_size = 64;
    cfg.ppo.epochs = 2;
    cfg.ppo.total_steps = 3 * 4 * 64;
    cfg.ppo.seed = 42;
    auto run = [&](std::uint64_t seed) {
      cfg.ppo.seed = seed;
      std::ostringstream log;
      TrainResult r = train(race_env_factory(track, params, ep), cfg, &log);
      return std::make_pair(log.str(), r.policy);
    };
    const auto a = run(42);
    const auto b = run(42);
    const auto c = run(43);
    CHECK(a.first == b.first);
    CHECK(a.first != c.first);
    for (std::size_t l = 0; l < a.second.mean_net.weights.size(); ++l) {
      CHECK(a.second.mean_net.weights[l] == b.second.mean_net.weights[l]);
    }
    CHECK(a.second.log_std == b.second.log_std);
    CHECK(std::count(a.first.begin(), a.first.end(), '\n') == 3);
  }
}

TEST_CASE("a zero learning rate leaves the parameters unchanged") {
  Rng rng(8);
  GaussianPolicy pol = small_policy(rng);
  RolloutBatch b = random_batch(pol, rng, 40);
  b.returns = Eigen::VectorXd::LinSpaced(40, -1.0, 1.0);
  PolicyConfig pc;
  pc.hidden = {8};
  ObsScaling s{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
  PpoConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.minibatch_size = 16;
  PpoLearner learner(pol, make_value_net(3, s, pc, rng), cfg);
  const MlpNet value_before = learner.value();
  const UpdateStats st = learner.update(b, rng);
  CHECK(st.clip_fraction == 0.0);
  CHECK(st.approx_kl == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(st.grad_norm > 0.0);
  for (std::size_t l = 0; l < pol.mean_net.weights.size(); ++l) {
    CHECK(learner.policy().mean_net.weights[l] == pol.mean_net.weights[l]);
  }
  for (std::size_t l = 0; l < value_before.weights.size(); ++l) {
    CHECK(learner.value().weights[l] == value_before.weights[l]);
  }
  CHECK(learner.policy().log_std == pol.log_std);
}

TEST_CASE("the clipped surrogate never exceeds (1 + eps) A for positive advantages") {
  Rng rng(9);
  GaussianPolicy pol = small_policy(rng);
  RolloutBatch b = random_batch(pol, rng, 1);
  std::uniform_real_distribution<double> shift(-3.0, 3.0), adv(0.01, 5.0);
  const std::vector<Eigen::Index> col{0};
  const double logp = b.log_probs[0];
  for (int i = 0; i < 2000; ++i) {
    b.log_probs[0] = logp + shift(rng);  // ratio spans e^-3 .. e^3
    b.advantages[0] = adv(rng);
    const PolicyGradient g = clipped_surrogate_gradient(pol, b, col, 0.2, 0.0);
    REQUIRE(-g.policy_loss <= 1.2 * b.advantages[0] * (1 + 1e-12));
  }
}

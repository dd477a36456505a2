#include "quadrace/env.hpp"

#include <cmath>
#include <exception>
#include <sstream>
#include <stdexcept>

namespace quadrace {

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "e2e") return ModelKind::e2e;
  if (name == "indi") return ModelKind::indi;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected e2e or indi)");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::e2e ? "e2e" : "indi"; }

int observation_dim(ModelKind kind) { return kind == ModelKind::e2e ? kObsDimE2E : kObsDimIndi; }

void EpisodeConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("episode dt must be positive");
  if (parallel_envs < 1) throw std::invalid_argument("parallel_envs must be at least 1");
  const double ratio = max_duration / dt;
  if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw std::invalid_argument("max_duration must be a positive integer multiple of dt");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
}

std::int64_t EpisodeConfig::max_steps() const {
  return static_cast<std::int64_t>(std::llround(max_duration / dt));
}

const Vec3& position(const QuadState& s) {
  return std::visit([](const auto& x) -> const Vec3& { return x.p; }, s);
}

Vec3 GateFrame::point(const Vec3& world) const { return direction(world - origin); }

Vec3 GateFrame::direction(const Vec3& world) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * world.x() + s * world.y(), -s * world.x() + c * world.y(), world.z()};
}

namespace {

struct GateTerms {
  Vec3 p, v, lambda, next_p;
  double next_yaw;
};

GateTerms gate_terms(const Vec3& p, const Vec3& v, const EulerAngles& lambda, const Track& track,
                     std::size_t target) {
  if (target >= track.size()) throw std::out_of_range("target gate index out of range");
  const Gate& g = track.gates[target];
  const Gate& next = track.gates[(target + 1) % track.size()];
  const GateFrame frame(g);
  return {frame.point(p), frame.direction(v), {lambda.phi, lambda.theta, frame.heading(lambda.psi)},
          frame.point(next.center), frame.heading(next.yaw)};
}

}  // namespace

Observation build_obs_e2e(const QuadStateE2E& x, const Track& track, std::size_t target) {
  const GateTerms t = gate_terms(x.p, x.v, x.lambda, track, target);
  Observation o(kObsDimE2E);
  o << t.p, t.v, t.lambda, x.rates, x.rpm, x.m_ext, x.f_ext.z(), t.next_p, t.next_yaw;
  return o;
}

Observation build_obs_indi(const QuadStateIndi& x, const Track& track, std::size_t target) {
  const GateTerms t = gate_terms(x.p, x.v, x.lambda, track, target);
  Observation o(kObsDimIndi);
  o << t.p, t.v, t.lambda, x.rates, x.thrust, t.next_p, t.next_yaw;
  return o;
}

Observation build_obs(const QuadState& x, const Track& track, std::size_t target) {
  if (const auto* e = std::get_if<QuadStateE2E>(&x)) return build_obs_e2e(*e, track, target);
  return build_obs_indi(std::get<QuadStateIndi>(x), track, target);
}

QuadState sample_initial_state(Rng& rng, ModelKind kind, const Track& track,
                               const ModelParams& params) {
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double tilt = 2.0 * kPi / 9.0;

  Vec3 p, v, rates;
  EulerAngles lambda;
  for (int i = 0; i < 3; ++i) p[i] = track.start[i] + uni(-0.5, 0.5);
  for (int i = 0; i < 3; ++i) v[i] = uni(-0.5, 0.5);
  lambda.phi = uni(-tilt, tilt);
  lambda.theta = uni(-tilt, tilt);
  lambda.psi = uni(-kPi, kPi);
  for (int i = 0; i < 3; ++i) rates[i] = uni(-1.0, 1.0);

  if (kind == ModelKind::indi) {
    QuadStateIndi s;
    s.p = p;
    s.v = v;
    s.lambda = lambda;
    s.rates = rates;
    s.thrust = uni(7.4, 7.6);
    return s;
  }
  QuadStateE2E s;
  s.p = p;
  s.v = v;
  s.lambda = lambda;
  s.rates = rates;
  for (int i = 0; i < 4; ++i) s.rpm[i] = uni(params.nominal.omega_min, params.nominal.omega_max);
  s.m_ext = {uni(-0.03, 0.03), uni(-0.03, 0.03), uni(-0.01, 0.01)};
  s.f_ext = {0.0, 0.0, uni(-0.5, 0.5)};
  return s;
}

ActionBounds action_bounds(ModelKind kind, const ModelParams& params) {
  ActionBounds b{Eigen::VectorXd(kActionDim), Eigen::VectorXd(kActionDim)};
  if (kind == ModelKind::e2e) {
    b.low.setConstant(params.nominal.omega_min);
    b.high.setConstant(params.nominal.omega_max);
  } else {
    const double r = params.indi.rate_bound;
    b.low << -r, -r, -r, params.indi.thrust_min;
    b.high << r, r, r, params.indi.thrust_max;
  }
  return b;
}

ObsScaling observation_scaling(ModelKind kind, const ModelParams& params) {
  const int n = observation_dim(kind);
  ObsScaling s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  // p, v, lambda, Omega
  s.scale.segment(0, 3).setConstant(0.25);
  s.scale.segment(3, 3).setConstant(0.2);
  s.scale.segment(6, 2).setConstant(1.0);
  s.scale[8] = 1.0 / kPi;
  s.scale.segment(9, 3).setConstant(1.0 / 3.0);
  int k = 12;
  if (kind == ModelKind::e2e) {
    const auto& nom = params.nominal;
    s.shift.segment(k, 4).setConstant(0.5 * (nom.omega_min + nom.omega_max));
    s.scale.segment(k, 4).setConstant(2.0 / (nom.omega_max - nom.omega_min));
    k += 4;
    s.scale.segment(k, 3) << 1.0 / 0.03, 1.0 / 0.03, 1.0 / 0.01;
    k += 3;
    s.scale[k++] = 2.0;
  } else {
    const auto& indi = params.indi;
    s.shift[k] = 0.5 * (indi.thrust_min + indi.thrust_max);
    s.scale[k] = 2.0 / (indi.thrust_max - indi.thrust_min);
    ++k;
  }
  s.scale.segment(k, 3).setConstant(0.25);
  s.scale[k + 3] = 1.0 / kPi;
  return s;
}

ObsScaling Environment::scaling() const {
  return {Eigen::VectorXd::Zero(obs_dim()), Eigen::VectorXd::Ones(obs_dim())};
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t tag) {
  // splitmix64 finalizer applied to a mix of the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ (tag * 0xd6e8feb86659fd93ULL));
}

// ---------------------------------------------------------------------------

RaceEnv::RaceEnv(std::shared_ptr<const Track> track, std::shared_ptr<const ModelParams> params,
                 EpisodeConfig config, std::uint64_t seed)
    : track_(std::move(track)), params_(std::move(params)), config_(config), rng_(seed) {
  config_.validate();
  track_->validate();
  reset();
}

Observation RaceEnv::reset() {
  return reset_to(sample_initial_state(rng_, config_.model, *track_, *params_));
}

Observation RaceEnv::reset_to(const QuadState& state) {
  const bool e2e = std::holds_alternative<QuadStateE2E>(state);
  if (e2e != (config_.model == ModelKind::e2e)) {
    throw std::invalid_argument("state type does not match the environment model");
  }
  state_ = state;
  cursor_ = GateCursor{initial_target(*track_), 0, 0};
  steps_ = 0;
  episode_return_ = 0.0;
  return observe();
}

Observation RaceEnv::observe() const { return build_obs(state_, *track_, cursor_.index); }

StepResult RaceEnv::step(std::span<const double> action) {
  if (action.size() != kActionDim) {
    throw std::invalid_argument("action must have 4 components");
  }
  for (std::size_t i = 0; i < action.size(); ++i) {
    if (!std::isfinite(action[i])) {
      std::ostringstream os;
      os << "non-finite action component " << i << " (" << action[i] << ")";
      throw std::invalid_argument(os.str());
    }
  }
  const Vec3 p_prev = position(state_);
  bool singular = false;
  try {
    if (config_.model == ModelKind::e2e) {
      const Vec4 u(action[0], action[1], action[2], action[3]);
      state_ = step_e2e(std::get<QuadStateE2E>(state_), u, config_.dt, params_->nominal,
                        params_->residual);
    } else {
      IndiCommand u{{action[0], action[1], action[2]}, action[3]};
      state_ = step_indi(std::get<QuadStateIndi>(state_), u, config_.dt, params_->indi);
    }
  } catch (const SingularityError&) {
    singular = true;
  } catch (const IntegrationError&) {
    singular = true;
  }
  ++steps_;

  const Gate& target = track_->gates[cursor_.index];
  StepEvent ev;
  double r;
  if (singular || pitch_is_singular(std::visit([](const auto& s) { return s.lambda.theta; }, state_))) {
    ev.kind = EventKind::collision;
    r = kCollisionPenalty;
  } else {
    ev = detect_event(p_prev, position(state_), target, track_->ground_z);
    r = step_reward(p_prev, position(state_), target, ev);
  }
  if (ev.kind == EventKind::gate_passed) cursor_ = advance_target(*track_, cursor_);
  episode_return_ += r;

  StepResult out;
  out.reward = r;
  out.info.event = ev.kind;
  out.info.terminated = ev.kind == EventKind::collision;
  out.info.truncated = !out.info.terminated && steps_ >= config_.max_steps();
  out.done = out.info.terminated || out.info.truncated;
  out.info.target = cursor_.index;
  out.info.gates_passed = cursor_.gates_passed;
  out.info.laps = cursor_.laps;
  out.info.steps = steps_;
  out.info.episode_return = episode_return_;
  out.obs = observe();
  return out;
}

EnvFactory race_env_factory(std::shared_ptr<const Track> track,
                            std::shared_ptr<const ModelParams> params, EpisodeConfig config) {
  return [track, params, config](std::size_t, std::uint64_t seed) -> std::unique_ptr<Environment> {
    return std::make_unique<RaceEnv>(track, params, config, seed);
  };
}

// ---------------------------------------------------------------------------

VecEnv::VecEnv(const EnvFactory& factory, std::size_t count, std::uint64_t master_seed) {
  if (count == 0) throw std::invalid_argument("VecEnv needs at least one environment");
  for (std::size_t i = 0; i < count; ++i) envs_.push_back(factory(i, derive_seed(master_seed, i)));
}

Eigen::MatrixXd VecEnv::reset() {
  Eigen::MatrixXd obs(obs_dim(), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) obs.col(Eigen::Index(i)) = envs_[i]->reset();
  return obs;
}

VecStepResult VecEnv::make_result() const {
  VecStepResult r;
  r.obs.resize(obs_dim(), static_cast<Eigen::Index>(size()));
  r.rewards.resize(static_cast<Eigen::Index>(size()));
  r.dones.assign(size(), 0);
  r.infos.resize(size());
  return r;
}

void VecEnv::step_one(std::size_t i, const Eigen::MatrixXd& actions, VecStepResult& out) {
  const Eigen::VectorXd a = actions.col(Eigen::Index(i));
  StepResult s = envs_[i]->step({a.data(), std::size_t(a.size())});
  if (s.done) {
    s.info.terminal_obs = std::move(s.obs);
    s.obs = envs_[i]->reset();
  }
  out.obs.col(Eigen::Index(i)) = s.obs;
  out.rewards[Eigen::Index(i)] = s.reward;
  out.dones[i] = s.done ? 1 : 0;
  out.infos[i] = std::move(s.info);
}

VecStepResult VecEnv::step(const Eigen::MatrixXd& actions) {
  if (actions.cols() != Eigen::Index(size()) || actions.rows() != action_dim()) {
    throw std::invalid_argument("action batch shape does not match the vectorized environment");
  }
  VecStepResult out = make_result();
  const auto n = static_cast<std::int64_t>(size());
  std::vector<std::exception_ptr> errors(size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      step_one(std::size_t(i), actions, out);
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

VecStepResult VecEnv::step_serial(const Eigen::MatrixXd& actions) {
  if (actions.cols() != Eigen::Index(size()) || actions.rows() != action_dim()) {
    throw std::invalid_argument("action batch shape does not match the vectorized environment");
  }
  VecStepResult out = make_result();
  for (std::size_t i = 0; i < size(); ++i) step_one(i, actions, out);
  return out;
}

}  // namespace quadrace

#pragma once

// Racing MDP: observation construction for both architectures, initial-state
// sampling, episode logic and vectorized stepping.

#include "quadrace/dynamics_e2e.hpp"
#include "quadrace/dynamics_indi.hpp"
#include "quadrace/neuralnet.hpp"
#include "quadrace/track.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace quadrace {

using Observation = Eigen::VectorXd;

enum class ModelKind { e2e, indi };

ModelKind model_kind_from_string(const std::string& name);
std::string to_string(ModelKind kind);

inline constexpr int kObsDimE2E = 24;
inline constexpr int kObsDimIndi = 17;
inline constexpr int kActionDim = 4;

int observation_dim(ModelKind kind);

struct EpisodeConfig {
  double dt = 0.01;
  double max_duration = 12.0;
  int parallel_envs = 100;
  double gamma = 0.999;
  ModelKind model = ModelKind::indi;

  /// Throws unless dt > 0, max_duration/dt is integral and parallel_envs >= 1.
  void validate() const;
  std::int64_t max_steps() const;
};

/// Everything needed to simulate either model.
struct ModelParams {
  NominalParams nominal;
  ResidualNets residual = ResidualNets::zeros(NominalParams{});
  IndiParams indi;
};

using QuadState = std::variant<QuadStateE2E, QuadStateIndi>;

const Vec3& position(const QuadState& s);

/// Yaw-only frame centred on a gate.
struct GateFrame {
  Vec3 origin;
  double yaw;

  explicit GateFrame(const Gate& g) : origin(g.center), yaw(g.yaw) {}
  Vec3 point(const Vec3& world) const;
  Vec3 direction(const Vec3& world) const;
  double heading(double world_yaw) const { return wrap_angle(world_yaw - yaw); }
};

/// [p^g, v^g, lambda^g, Omega, omega, M_ext, F_ext,z, p_next^g, psi_next^g]
Observation build_obs_e2e(const QuadStateE2E& x, const Track& track, std::size_t target);
/// [p^g, v^g, lambda^g, Omega, T, p_next^g, psi_next^g]
Observation build_obs_indi(const QuadStateIndi& x, const Track& track, std::size_t target);
Observation build_obs(const QuadState& x, const Track& track, std::size_t target);

/// Uniform initial-state distribution around the track start.
QuadState sample_initial_state(Rng& rng, ModelKind kind, const Track& track,
                               const ModelParams& params);

struct ActionBounds {
  Eigen::VectorXd low;
  Eigen::VectorXd high;
};

ActionBounds action_bounds(ModelKind kind, const ModelParams& params);

/// Fixed per-input affine scaling that brings observations to O(1).
struct ObsScaling {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
};

ObsScaling observation_scaling(ModelKind kind, const ModelParams& params);

// ---------------------------------------------------------------------------

struct StepInfo {
  EventKind event = EventKind::none;
  std::size_t target = 0;
  int gates_passed = 0;
  int laps = 0;
  std::int64_t steps = 0;
  bool terminated = false;  // collision or singular attitude
  bool truncated = false;   // time limit
  double episode_return = 0.0;
  Observation terminal_obs;  // last observation of a finished episode
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Minimal environment interface consumed by the vectorizer and the trainer.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int obs_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual ActionBounds bounds() const = 0;
  virtual ObsScaling scaling() const;

  virtual Observation reset() = 0;
  /// Throws std::invalid_argument on a non-finite action.
  virtual StepResult step(std::span<const double> action) = 0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>(std::size_t index, std::uint64_t seed)>;

/// Deterministic per-stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t tag = 0);

class RaceEnv final : public Environment {
 public:
  RaceEnv(std::shared_ptr<const Track> track, std::shared_ptr<const ModelParams> params,
          EpisodeConfig config, std::uint64_t seed);

  int obs_dim() const override { return observation_dim(config_.model); }
  int action_dim() const override { return kActionDim; }
  ActionBounds bounds() const override { return action_bounds(config_.model, *params_); }
  ObsScaling scaling() const override { return observation_scaling(config_.model, *params_); }

  Observation reset() override;
  Observation reset_to(const QuadState& state);
  StepResult step(std::span<const double> action) override;

  Observation observe() const;
  const QuadState& state() const { return state_; }
  const GateCursor& cursor() const { return cursor_; }
  std::int64_t steps() const { return steps_; }
  const EpisodeConfig& config() const { return config_; }
  const Track& track() const { return *track_; }

 private:
  std::shared_ptr<const Track> track_;
  std::shared_ptr<const ModelParams> params_;
  EpisodeConfig config_;
  Rng rng_;
  QuadState state_;
  GateCursor cursor_;
  std::int64_t steps_ = 0;
  double episode_return_ = 0.0;
};

EnvFactory race_env_factory(std::shared_ptr<const Track> track,
                            std::shared_ptr<const ModelParams> params, EpisodeConfig config);

// ---------------------------------------------------------------------------

struct VecStepResult {
  Eigen::MatrixXd obs;  // obs_dim x n
  Eigen::VectorXd rewards;
  std::vector<std::uint8_t> dones;
  std::vector<StepInfo> infos;
};

/// A batch of independent environments. Finished environments are reset in
/// place and report the first observation of their next episode.
class VecEnv {
 public:
  VecEnv(const EnvFactory& factory, std::size_t count, std::uint64_t master_seed);

  std::size_t size() const { return envs_.size(); }
  int obs_dim() const { return envs_.front()->obs_dim(); }
  int action_dim() const { return envs_.front()->action_dim(); }
  Environment& at(std::size_t i) { return *envs_[i]; }

  Eigen::MatrixXd reset();

  /// OpenMP kernel over environments. Each environment writes only its own
  /// column, so results do not depend on scheduling.
  VecStepResult step(const Eigen::MatrixXd& actions);
  /// Single-threaded reference for `step`.
  VecStepResult step_serial(const Eigen::MatrixXd& actions);

 private:
  void step_one(std::size_t i, const Eigen::MatrixXd& actions, VecStepResult& out);
  VecStepResult make_result() const;

  std::vector<std::unique_ptr<Environment>> envs_;
};

}  // namespace quadrace

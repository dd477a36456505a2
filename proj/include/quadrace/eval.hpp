#pragma once

// Policy rollouts, lap reports, lap tables and trajectory files.

#include "quadrace/env.hpp"
#include "quadrace/neuralnet.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace quadrace {

struct TrajectoryRow {
  double t = 0.0;
  std::int64_t step = 0;
  std::vector<double> state;  // QuadStateE2E / QuadStateIndi flat layout
  Eigen::VectorXd action;     // applied (clamped) action; zeros on the initial row
  double reward = 0.0;
  std::size_t target = 0;     // target gate after the step
  EventKind event = EventKind::none;
};

struct Trajectory {
  ModelKind model = ModelKind::indi;
  std::vector<TrajectoryRow> rows;  // rows[0] is the initial state

  std::int64_t steps() const { return rows.empty() ? 0 : std::int64_t(rows.size()) - 1; }
};

struct LapReport {
  std::vector<double> lap_times;   // completed laps only
  double total = 0.0;              // sum of lap_times
  std::vector<double> gate_times;  // every gate passage
  std::vector<std::size_t> gate_ids;
  bool collision = false;
  bool timed_out = false;
  double duration = 0.0;           // flight time until the rollout stopped

  int laps() const { return int(lap_times.size()); }
  int gates() const { return int(gate_times.size()); }
};

/// Lap splits from the event rows of a trajectory. Lap 1 starts at t = 0;
/// a lap ends with the passage that completes a full circuit of the track.
LapReport lap_report(const Trajectory& traj, std::size_t gate_count);

enum class StartMode { sampled, hover };

StartMode start_mode_from_string(const std::string& name);
std::string to_string(StartMode mode);

/// Hover at the track start, yawed toward the first target gate.
QuadState hover_state(ModelKind kind, const Track& track, const ModelParams& params);

struct RolloutConfig {
  ModelKind model = ModelKind::indi;
  std::uint64_t seed = 1;
  bool deterministic = true;
  int lap_target = 6;
  double timeout = 60.0;  // s
  double dt = 0.01;
  StartMode start = StartMode::sampled;
};

struct RolloutResult {
  Trajectory trajectory;
  LapReport report;
};

/// Flies the policy (mean actions when deterministic) until the lap target,
/// a collision, or the timeout. Throws DimensionError if the policy does not
/// match the model's observation/action sizes.
RolloutResult rollout(const GaussianPolicy& policy, const Track& track, const ModelParams& params,
                      const RolloutConfig& config);
RolloutResult rollout(const std::filesystem::path& policy_file, const Track& track,
                      const ModelParams& params, const RolloutConfig& config);

/// Repeated rollouts with seeds derived from config.seed; run in parallel,
/// results in run order.
std::vector<RolloutResult> evaluate(const GaussianPolicy& policy, const Track& track,
                                    const ModelParams& params, const RolloutConfig& config,
                                    int runs);

struct LapTable {
  std::string text;
  std::string csv;
  nlohmann::ordered_json json;
  std::optional<std::size_t> fastest;  // run with the lowest total among full-lap runs
};

/// Per-run rows, a mean row and the fastest run marked. `lap_count` sets the
/// number of lap columns; runs short of it leave the remaining cells empty.
LapTable lap_table(const std::vector<LapReport>& reports, int lap_count);

// ---------------------------------------------------------------------------

/// State column names of the flat layout for a model.
std::vector<std::string> state_columns(ModelKind kind);

/// CSV: t,step,<state columns>,a1..a4,reward,target,event.
std::string format_trajectory(const Trajectory& traj);
Trajectory parse_trajectory(const std::string& text);
void export_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory import_trajectory(const std::filesystem::path& path);

}  // namespace quadrace

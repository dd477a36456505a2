#pragma once

// Race-track geometry, gate passage / collision detection and the per-step
// racing reward.

#include "quadrace/mathcore.hpp"

#include <optional>
#include <string>
#include <vector>

namespace quadrace {

/// Square vertical gate. `yaw` is the heading of the forward pass direction,
/// i.e. the gate-plane normal is (cos yaw, sin yaw, 0).
struct Gate {
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  double half_size = 0.5;

  Vec3 normal() const;
  Vec3 lateral() const;  // in-plane horizontal axis (normal rotated +90 deg)
};

struct Track {
  std::vector<Gate> gates;
  Vec3 start = Vec3::Zero();
  double ground_z = 0.0;  // NED: positions with z >= ground_z are on the ground

  /// Four 1x1 m gates on the corners of a 4x3 m rectangle at 1.5 m altitude,
  /// each yawed 90 deg from the previous one for counter-clockwise laps in the
  /// x-y plane, with the start 1 m before gate 0 on its approach axis. Each
  /// gate faces along the rectangle edge leading into it, so no gate plane
  /// passes through the preceding gate.
  static Track canonical();

  std::size_t size() const { return gates.size(); }
  void validate() const;
};

enum class EventKind { none = 0, gate_passed = 1, collision = 2 };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

struct StepEvent {
  EventKind kind = EventKind::none;
  std::optional<Vec3> crossing_point;  // set iff the segment crossed the target gate plane
};

/// Classifies the segment p_prev -> p_curr against the target gate:
///   * forward plane crossing inside the square  -> gate_passed
///   * any plane crossing outside the square      -> collision
///   * backward crossing inside the square        -> none
///   * p_curr at or below ground level            -> collision
StepEvent detect_event(const Vec3& p_prev, const Vec3& p_curr, const Gate& target, double ground_z);

inline constexpr double kGateReward = 10.0;
inline constexpr double kCollisionPenalty = -10.0;

/// Gate pass: 10 - 10 |crossing - center|; collision: -10; otherwise the
/// reduction in distance to the gate center.
double step_reward(const Vec3& p_prev, const Vec3& p_curr, const Gate& target,
                   const StepEvent& event);

/// Target-gate bookkeeping.
struct GateCursor {
  std::size_t index = 0;
  int laps = 0;
  int gates_passed = 0;
};

GateCursor advance_target(const Track& track, GateCursor cursor);

/// Index of the gate the drone should aim for first from the start point:
/// the closest gate whose plane lies ahead of the start along its normal.
std::size_t initial_target(const Track& track);

}  // namespace quadrace

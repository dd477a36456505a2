#include "quadrace/track.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace quadrace {

Vec3 Gate::normal() const { return {std::cos(yaw), std::sin(yaw), 0.0}; }

Vec3 Gate::lateral() const { return {-std::sin(yaw), std::cos(yaw), 0.0}; }

Track Track::canonical() {
  Track t;
  const double z = -1.5;
  t.gates = {
      {{2.0, -1.5, z}, 0.0, 0.5},
      {{2.0, 1.5, z}, 0.5 * kPi, 0.5},
      {{-2.0, 1.5, z}, kPi, 0.5},
      {{-2.0, -1.5, z}, 1.5 * kPi, 0.5},
  };
  t.start = t.gates[0].center - t.gates[0].normal();
  t.ground_z = 0.0;
  return t;
}

void Track::validate() const {
  if (gates.empty()) throw std::invalid_argument("track needs at least one gate");
  for (const auto& g : gates) {
    if (!(g.half_size > 0.0)) throw std::invalid_argument("gate half_size must be positive");
  }
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::gate_passed: return "gate_passed";
    case EventKind::collision: return "collision";
    default: return "none";
  }
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "none") return EventKind::none;
  if (s == "gate_passed") return EventKind::gate_passed;
  if (s == "collision") return EventKind::collision;
  throw std::invalid_argument("unknown event kind '" + s + "'");
}

StepEvent detect_event(const Vec3& p_prev, const Vec3& p_curr, const Gate& target, double ground_z) {
  StepEvent ev;
  const Vec3 n = target.normal();
  const double d0 = n.dot(p_prev - target.center);
  const double d1 = n.dot(p_curr - target.center);
  const bool forward = d0 < 0.0 && d1 >= 0.0;
  const bool backward = d0 >= 0.0 && d1 < 0.0;

  if (forward || backward) {
    const double s = d0 / (d0 - d1);
    const Vec3 q = p_prev + s * (p_curr - p_prev);
    ev.crossing_point = q;
    const Vec3 rel = q - target.center;
    const bool inside = std::abs(target.lateral().dot(rel)) <= target.half_size &&
                        std::abs(rel.z()) <= target.half_size;
    if (!inside) {
      ev.kind = EventKind::collision;
    } else if (forward) {
      ev.kind = EventKind::gate_passed;
    }
  }
  if (p_curr.z() >= ground_z) ev.kind = EventKind::collision;
  return ev;
}

double step_reward(const Vec3& p_prev, const Vec3& p_curr, const Gate& target,
                   const StepEvent& event) {
  switch (event.kind) {
    case EventKind::gate_passed:
      return kGateReward - 10.0 * (*event.crossing_point - target.center).norm();
    case EventKind::collision:
      return kCollisionPenalty;
    default:
      return (p_prev - target.center).norm() - (p_curr - target.center).norm();
  }
}

GateCursor advance_target(const Track& track, GateCursor cursor) {
  cursor.index += 1;
  cursor.gates_passed += 1;
  if (cursor.index >= track.size()) {
    cursor.index = 0;
    cursor.laps += 1;
  }
  return cursor;
}

std::size_t initial_target(const Track& track) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < track.size(); ++i) {
    const Gate& g = track.gates[i];
    if (g.normal().dot(track.start - g.center) >= 0.0) continue;
    const double d = (g.center - track.start).norm();
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

}  // namespace quadrace

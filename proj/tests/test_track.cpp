#include "quadrace/track.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace quadrace;

namespace {

Gate gate_at_origin() { return Gate{Vec3(0, 0, -1.5), 0.0, 0.5}; }

}  // namespace

TEST_CASE("canonical track geometry") {
  const Track t = Track::canonical();
  REQUIRE(t.size() == 4);
  CHECK(t.gates[0].center == Vec3(2, -1.5, -1.5));
  CHECK(t.gates[1].center == Vec3(2, 1.5, -1.5));
  CHECK(t.gates[2].center == Vec3(-2, 1.5, -1.5));
  CHECK(t.gates[3].center == Vec3(-2, -1.5, -1.5));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.gates[i].half_size == 0.5);
    // consecutive gates are rotated by 90 degrees
    const double dyaw = wrap_angle(t.gates[(i + 1) % 4].yaw - t.gates[i].yaw);
    CHECK(dyaw == doctest::Approx(kPi / 2));
    // each gate faces along the edge leading into it
    const Vec3 edge = (t.gates[i].center - t.gates[(i + 3) % 4].center).normalized();
    CHECK(edge.dot(t.gates[i].normal()) == doctest::Approx(1.0));
  }
  CHECK((t.start - Vec3(1, -1.5, -1.5)).norm() < 1e-15);
  CHECK(initial_target(t) == 0);
  CHECK(t.ground_z == 0.0);
}

TEST_CASE("the flight path between consecutive gates never crosses the next target plane outside its square") {
  const Track t = Track::canonical();
  for (std::size_t i = 0; i < 4; ++i) {
    const Gate& from = t.gates[i];
    const Gate& to = t.gates[(i + 1) % 4];
    // straight line from just past gate i to gate i+1
    const Vec3 a = from.center + 0.05 * from.normal();
    const StepEvent ev = detect_event(a, to.center + 0.01 * to.normal(), to, t.ground_z);
    CHECK(ev.kind == EventKind::gate_passed);
  }
}

TEST_CASE("detect_event cases") {
  const Gate g = gate_at_origin();
  SUBCASE("forward through the centre") {
    const StepEvent ev = detect_event(Vec3(-0.1, 0, -1.5), Vec3(0.1, 0, -1.5), g, 0.0);
    CHECK(ev.kind == EventKind::gate_passed);
    CHECK((*ev.crossing_point - g.center).norm() < 1e-15);
  }
  SUBCASE("forward outside the square is a collision") {
    CHECK(detect_event(Vec3(-0.1, 0.6, -1.5), Vec3(0.1, 0.6, -1.5), g, 0.0).kind == EventKind::collision);
    CHECK(detect_event(Vec3(-0.1, 0, -2.1), Vec3(0.1, 0, -2.1), g, 0.0).kind == EventKind::collision);
  }
  SUBCASE("backward outside is a collision, backward inside is ignored") {
    CHECK(detect_event(Vec3(0.1, 3, -1.5), Vec3(-0.1, 3, -1.5), g, 0.0).kind == EventKind::collision);
    const StepEvent ev = detect_event(Vec3(0.1, 0, -1.5), Vec3(-0.1, 0, -1.5), g, 0.0);
    CHECK(ev.kind == EventKind::none);
    CHECK(ev.crossing_point.has_value());
  }
  SUBCASE("no crossing") {
    const StepEvent ev = detect_event(Vec3(-1, 0, -1.5), Vec3(-0.5, 0.2, -1.4), g, 0.0);
    CHECK(ev.kind == EventKind::none);
    CHECK_FALSE(ev.crossing_point.has_value());
  }
  SUBCASE("square edge counts as inside") {
    CHECK(detect_event(Vec3(-0.1, 0.5, -1.5), Vec3(0.1, 0.5, -1.5), g, 0.0).kind == EventKind::gate_passed);
  }
  SUBCASE("ground contact takes precedence") {
    CHECK(detect_event(Vec3(-1, 0, -0.1), Vec3(-1, 0, 0.0), g, 0.0).kind == EventKind::collision);
    Gate low{Vec3(0, 0, -0.2), 0.0, 0.5};
    CHECK(detect_event(Vec3(-0.1, 0, -0.1), Vec3(0.1, 0, 0.05), low, 0.0).kind == EventKind::collision);
  }
  SUBCASE("rotated gate") {
    Gate r{Vec3(1, 1, -2), kPi / 2, 0.5};
    CHECK(detect_event(Vec3(1.2, 0.9, -2), Vec3(1.2, 1.1, -2), r, 0.0).kind == EventKind::gate_passed);
    CHECK(detect_event(Vec3(1.2, 1.1, -2), Vec3(1.2, 0.9, -2), r, 0.0).kind == EventKind::none);
    CHECK(detect_event(Vec3(1.8, 0.9, -2), Vec3(1.8, 1.1, -2), r, 0.0).kind == EventKind::collision);
  }
}

TEST_CASE("detect_event agrees with the sampling oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0), yaw(-kPi, kPi);
  int decided = 0, passes = 0, collisions = 0;
  for (int i = 0; i < 10000; ++i) {
    const Gate g{Vec3(3 * u(rng), 3 * u(rng), -1.5 + 0.5 * u(rng)), yaw(rng), 0.3 + 0.2 * (u(rng) + 1)};
    const Vec3 a = g.center + Vec3(1.2 * u(rng), 1.2 * u(rng), 1.2 * u(rng));
    const Vec3 b = a + Vec3(u(rng), u(rng), u(rng));
    const double ground = g.center.z() + 0.9;
    const auto ref = oracle::detect_event_sampled(a, b, g, ground);
    if (ref.ambiguous) continue;
    ++decided;
    const EventKind got = detect_event(a, b, g, ground).kind;
    REQUIRE(got == ref.kind);
    passes += got == EventKind::gate_passed;
    collisions += got == EventKind::collision;
  }
  CHECK(decided > 9900);
  CHECK(passes > 100);
  CHECK(collisions > 100);
}

TEST_CASE("rewards") {
  const Gate g = gate_at_origin();
  SUBCASE("centre pass is exactly +10") {
    const Vec3 a(-0.1, 0, -1.5), b(0.1, 0, -1.5);
    CHECK(step_reward(a, b, g, detect_event(a, b, g, 0.0)) == 10.0);
  }
  SUBCASE("offset pass loses 10 per metre") {
    const Vec3 a(-0.1, 0.3, -1.4), b(0.1, 0.3, -1.4);
    const double off = std::hypot(0.3, 0.1);
    CHECK(step_reward(a, b, g, detect_event(a, b, g, 0.0)) == doctest::Approx(10.0 - 10.0 * off));
  }
  SUBCASE("collision is exactly -10") {
    const Vec3 a(-0.1, 2, -1.5), b(0.1, 2, -1.5);
    CHECK(step_reward(a, b, g, detect_event(a, b, g, 0.0)) == -10.0);
  }
  SUBCASE("progress is the reduction in distance to the gate") {
    const Vec3 a(-2, 0, -1.5), b(-1.5, 0.1, -1.5);
    const double expect = (a - g.center).norm() - (b - g.center).norm();
    CHECK(step_reward(a, b, g, detect_event(a, b, g, 0.0)) == doctest::Approx(expect));
    CHECK(step_reward(b, a, g, detect_event(b, a, g, 0.0)) == doctest::Approx(-expect));
  }
}

TEST_CASE("gate cursor") {
  const Track t = Track::canonical();
  GateCursor c;
  for (int i = 0; i < 9; ++i) c = advance_target(t, c);
  CHECK(c.index == 1);
  CHECK(c.laps == 2);
  CHECK(c.gates_passed == 9);
}

TEST_CASE("initial target picks the nearest gate ahead of the start") {
  Track t = Track::canonical();
  t.start = Vec3(-1, 1.5, -1.5);  // between gates 1 and 2, gate 2 ahead
  CHECK(initial_target(t) == 2);
}

TEST_CASE("event names") {
  for (EventKind k : {EventKind::none, EventKind::gate_passed, EventKind::collision}) {
    CHECK(event_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(event_kind_from_string("crash"), std::invalid_argument);
}

TEST_CASE("track validation") {
  Track t;
  CHECK_THROWS(t.validate());
  t.gates.push_back(Gate{});
  t.gates.back().half_size = 0.0;
  CHECK_THROWS(t.validate());
}

#include "quadrace/eval.hpp"
#include "quadrace/ppo.hpp"
#include "quadrace/weights_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

using namespace quadrace;

namespace {

GaussianPolicy untrained_policy(ModelKind kind, std::uint64_t seed, double gain = 1.0) {
  const ModelParams mp;
  Rng rng(seed);
  PolicyConfig pc;
  pc.output_gain = gain;
  return make_policy(observation_dim(kind), action_bounds(kind, mp), observation_scaling(kind, mp),
                     pc, rng);
}

LapReport report_with_laps(std::vector<double> laps) {
  LapReport r;
  r.lap_times = std::move(laps);
  for (double l : r.lap_times) r.total += l;
  return r;
}

/// Hand-made trajectory with gate passes at the given times on a 4-gate track.
Trajectory scripted(const std::vector<double>& pass_times, bool crash_at_end) {
  Trajectory tr;
  tr.model = ModelKind::indi;
  std::size_t target = 1;
  const std::size_t n = QuadStateIndi::kSize;
  tr.rows.push_back({0.0, 0, std::vector<double>(n, 0.0), Eigen::VectorXd::Zero(4), 0.0, target,
                     EventKind::none});
  std::int64_t step = 0;
  for (double t : pass_times) {
    while (double(step + 1) * 0.01 < t - 1e-9) {
      ++step;
      tr.rows.push_back({double(step) * 0.01, step, std::vector<double>(n, 0.1),
                         Eigen::VectorXd::Ones(4), 0.01, target, EventKind::none});
    }
    ++step;
    target = (target + 1) % 4;
    tr.rows.push_back({double(step) * 0.01, step, std::vector<double>(n, 0.2), Eigen::VectorXd::Ones(4),
                       9.5, target, EventKind::gate_passed});
  }
  if (crash_at_end) {
    ++step;
    tr.rows.push_back({double(step) * 0.01, step, std::vector<double>(n, 0.3), Eigen::VectorXd::Ones(4),
                       -10.0, target, EventKind::collision});
  }
  return tr;
}

}  // namespace

TEST_CASE("lap report splits laps at full circuits") {
  std::vector<double> passes;
  for (int k = 1; k <= 10; ++k) passes.push_back(0.7 * k);
  const LapReport r = lap_report(scripted(passes, true), 4);
  CHECK(r.gates() == 10);
  REQUIRE(r.laps() == 2);
  CHECK(r.lap_times[0] == doctest::Approx(2.8));
  CHECK(r.lap_times[1] == doctest::Approx(2.8));
  CHECK(r.total == doctest::Approx(5.6));
  CHECK(r.collision);
  CHECK(r.gate_ids[0] == 1);
  CHECK(r.gate_ids[3] == 0);
  CHECK_THROWS(lap_report(scripted(passes, false), 0));
}

TEST_CASE("lap table for a single run") {
  const LapTable t = lap_table({report_with_laps({3.0, 2.5})}, 2);
  std::istringstream csv(t.csv);
  std::string header, run, mean, extra;
  std::getline(csv, header);
  std::getline(csv, run);
  std::getline(csv, mean);
  CHECK(header == "run,lap1,lap2,total,gates,status");
  CHECK(run == "1,3,2.5,5.5,0,complete");
  CHECK(mean == "mean,3,2.5,5.5,,");
  CHECK_FALSE(std::getline(csv, extra));
  REQUIRE(t.fastest.has_value());
  CHECK(*t.fastest == 0);
  CHECK(t.text.find("1*") != std::string::npos);
  CHECK(t.json["runs"].size() == 1);
  CHECK(t.json["runs"][0]["fastest"] == true);
  CHECK_THROWS(lap_table({}, 2));
}

TEST_CASE("lap table reproduces the INDI simulation total") {
  const LapTable t = lap_table({report_with_laps({3.20, 2.82, 2.75, 2.80, 2.81, 2.76})}, 6);
  CHECK(t.json["runs"][0]["total"].get<double>() == doctest::Approx(17.14).epsilon(1e-12));
  CHECK(t.text.find("17.14") != std::string::npos);
  CHECK(t.text.find("3.20") != std::string::npos);
}

TEST_CASE("fastest run matches a brute-force minimum") {
  Rng rng(9);
  std::uniform_real_distribution<double> lap(2.5, 4.0);
  std::uniform_int_distribution<int> laps(0, 6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LapReport> reports;
    for (int i = 0; i < 8; ++i) {
      std::vector<double> l(std::size_t(laps(rng)));
      for (double& x : l) x = lap(rng);
      reports.push_back(report_with_laps(l));
      if (l.size() < 6) reports.back().collision = true;
    }
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (reports[i].laps() < 6) continue;
      if (!best || reports[i].total < reports[*best].total) best = i;
    }
    const LapTable t = lap_table(reports, 6);
    REQUIRE(t.fastest == best);
    int marked = 0;
    for (const auto& r : t.json["runs"]) marked += r["fastest"].get<bool>();
    REQUIRE(marked == (best ? 1 : 0));
  }
}

TEST_CASE("hover start faces the first target") {
  const Track track = Track::canonical();
  const ModelParams mp;
  const auto s = std::get<QuadStateIndi>(hover_state(ModelKind::indi, track, mp));
  CHECK(s.thrust == doctest::Approx(kGravity));
  CHECK(s.v.norm() == 0.0);
  const Vec3 to_gate = track.gates[initial_target(track)].center - track.start;
  CHECK(std::cos(s.lambda.psi) * to_gate.x() + std::sin(s.lambda.psi) * to_gate.y() ==
        doctest::Approx(to_gate.head<2>().norm()));
  const auto e = std::get<QuadStateE2E>(hover_state(ModelKind::e2e, track, mp));
  CHECK(e.rpm[0] == doctest::Approx(mp.nominal.hover_rpm()));
  CHECK(start_mode_from_string("hover") == StartMode::hover);
  CHECK(to_string(StartMode::sampled) == "sampled");
  CHECK_THROWS(start_mode_from_string("drop"));
}

TEST_CASE("an untrained policy is flagged and its trajectory round-trips") {
  const Track track = Track::canonical();
  const ModelParams mp;
  for (ModelKind kind : {ModelKind::indi, ModelKind::e2e}) {
    RolloutConfig rc;
    rc.model = kind;
    rc.timeout = 12.0;
    rc.seed = 3;
    const RolloutResult res = rollout(untrained_policy(kind, 1, 3.0), track, mp, rc);
    CHECK((res.report.collision || res.report.timed_out));
    CHECK(res.report.laps() < rc.lap_target);
    CHECK(std::int64_t(res.trajectory.rows.size()) == res.trajectory.steps() + 1);
    CHECK(res.trajectory.rows.back().step == res.trajectory.steps());
    CHECK(res.trajectory.rows.back().t == doctest::Approx(res.report.duration));

    const auto path = std::filesystem::temp_directory_path() / "quadrace_test_traj.csv";
    export_trajectory(res.trajectory, path);
    const Trajectory back = import_trajectory(path);
    std::filesystem::remove(path);
    REQUIRE(back.rows.size() == res.trajectory.rows.size());
    CHECK(back.model == kind);
    for (std::size_t k = 0; k < back.rows.size(); ++k) {
      REQUIRE(back.rows[k].state == res.trajectory.rows[k].state);
      REQUIRE(back.rows[k].event == res.trajectory.rows[k].event);
    }
    const LapReport again = lap_report(back, track.size());
    CHECK(again.gate_times == res.report.gate_times);
    CHECK(again.collision == res.report.collision);
  }
}

TEST_CASE("trajectory CSV header documents the columns") {
  const Trajectory tr = scripted({0.5, 1.0, 1.5, 2.0, 2.5}, true);
  const std::string text = format_trajectory(tr);
  const std::string header = text.substr(0, text.find('\n'));
  std::string expected = "t,step";
  for (const auto& c : state_columns(ModelKind::indi)) expected += "," + c;
  expected += ",a1,a2,a3,a4,reward,target,event";
  CHECK(header == expected);
  CHECK(state_columns(ModelKind::indi).size() == QuadStateIndi::kSize);
  CHECK(state_columns(ModelKind::e2e).size() == QuadStateE2E::kSize);

  const Trajectory back = parse_trajectory(text);
  CHECK(back.rows.size() == tr.rows.size());
  const LapReport a = lap_report(tr, 4);
  const LapReport b = lap_report(back, 4);
  CHECK(a.lap_times == b.lap_times);
  CHECK(a.gate_ids == b.gate_ids);
  CHECK(b.collision);
  CHECK_THROWS(parse_trajectory("t,step\n1,2\n"));
}

TEST_CASE("deterministic rollouts repeat exactly") {
  const Track track = Track::canonical();
  const ModelParams mp;
  const GaussianPolicy pol = untrained_policy(ModelKind::indi, 2, 0.3);
  RolloutConfig rc;
  rc.timeout = 5.0;
  rc.seed = 11;
  const RolloutResult a = rollout(pol, track, mp, rc);
  const RolloutResult b = rollout(pol, track, mp, rc);
  CHECK(format_trajectory(a.trajectory) == format_trajectory(b.trajectory));

  rc.deterministic = false;
  const RolloutResult c = rollout(pol, track, mp, rc);
  const RolloutResult d = rollout(pol, track, mp, rc);
  CHECK(format_trajectory(c.trajectory) == format_trajectory(d.trajectory));
  CHECK(format_trajectory(c.trajectory) != format_trajectory(a.trajectory));

  // parallel evaluation equals sequential rollouts with derived seeds
  rc.deterministic = true;
  const auto runs = evaluate(pol, track, mp, rc, 4);
  REQUIRE(runs.size() == 4);
  for (int i = 0; i < 4; ++i) {
    RolloutConfig one = rc;
    one.seed = derive_seed(rc.seed, std::uint64_t(i), 5);
    CHECK(format_trajectory(runs[std::size_t(i)].trajectory) ==
          format_trajectory(rollout(pol, track, mp, one).trajectory));
  }
}

TEST_CASE("policy and model dimensions must agree") {
  const Track track = Track::canonical();
  const ModelParams mp;
  RolloutConfig rc;
  rc.model = ModelKind::e2e;
  CHECK_THROWS_AS(rollout(untrained_policy(ModelKind::indi, 1), track, mp, rc), DimensionError);
  rc.model = ModelKind::indi;
  rc.lap_target = 0;
  CHECK_THROWS(rollout(untrained_policy(ModelKind::indi, 1), track, mp, rc));

  const auto path = std::filesystem::temp_directory_path() / "quadrace_test_policy.qnnw";
  save_policy(untrained_policy(ModelKind::indi, 1), nullptr, path);
  rc.lap_target = 1;
  rc.timeout = 1.0;
  CHECK_NOTHROW(rollout(path, track, mp, rc));
  rc.model = ModelKind::e2e;
  CHECK_THROWS_AS(rollout(path, track, mp, rc), DimensionError);
  std::filesystem::remove(path);
}

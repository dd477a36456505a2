#include "quadrace/eval.hpp"

#include "quadrace/weights_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace quadrace {

namespace {

constexpr std::uint64_t kTagEvalRun = 5;
constexpr std::uint64_t kTagEvalNoise = 6;

std::vector<double> flat_state(const QuadState& s) {
  return std::visit(
      [](const auto& x) {
        const auto a = x.flatten();
        return std::vector<double>(a.begin(), a.end());
      },
      s);
}

}  // namespace

LapReport lap_report(const Trajectory& traj, std::size_t gate_count) {
  if (gate_count == 0) throw std::invalid_argument("track has no gates");
  LapReport rep;
  double lap_start = 0.0;
  for (const auto& row : traj.rows) {
    if (row.event == EventKind::collision) rep.collision = true;
    if (row.event != EventKind::gate_passed) continue;
    rep.gate_times.push_back(row.t);
    // the row's target is the gate after the one just passed
    rep.gate_ids.push_back((row.target + gate_count - 1) % gate_count);
    if (rep.gate_times.size() % gate_count == 0) {
      rep.lap_times.push_back(row.t - lap_start);
      lap_start = row.t;
    }
  }
  for (double lap : rep.lap_times) rep.total += lap;
  rep.duration = traj.rows.empty() ? 0.0 : traj.rows.back().t;
  return rep;
}

StartMode start_mode_from_string(const std::string& name) {
  if (name == "sampled") return StartMode::sampled;
  if (name == "hover") return StartMode::hover;
  throw std::invalid_argument("unknown start mode '" + name + "' (expected sampled or hover)");
}

std::string to_string(StartMode mode) { return mode == StartMode::hover ? "hover" : "sampled"; }

QuadState hover_state(ModelKind kind, const Track& track, const ModelParams& params) {
  const Vec3 to_gate = track.gates[initial_target(track)].center - track.start;
  EulerAngles lambda{0.0, 0.0, std::atan2(to_gate.y(), to_gate.x())};
  if (kind == ModelKind::indi) {
    QuadStateIndi s;
    s.p = track.start;
    s.lambda = lambda;
    s.thrust = kGravity;
    return s;
  }
  QuadStateE2E s;
  s.p = track.start;
  s.lambda = lambda;
  s.rpm = Vec4::Constant(params.nominal.hover_rpm());
  return s;
}

RolloutResult rollout(const GaussianPolicy& policy, const Track& track, const ModelParams& params,
                      const RolloutConfig& config) {
  policy.validate();
  const int obs_dim = observation_dim(config.model);
  if (policy.obs_dim() != obs_dim || policy.action_dim() != kActionDim) {
    std::ostringstream os;
    os << "policy maps " << policy.obs_dim() << " -> " << policy.action_dim() << " but the "
       << to_string(config.model) << " model needs " << obs_dim << " -> " << kActionDim;
    throw DimensionError(os.str());
  }
  if (config.lap_target < 1) throw std::invalid_argument("lap target must be at least 1");

  EpisodeConfig ep;
  ep.dt = config.dt;
  ep.max_duration = config.timeout;
  ep.model = config.model;
  ep.validate();

  auto shared_track = std::make_shared<const Track>(track);
  auto shared_params = std::make_shared<const ModelParams>(params);
  RaceEnv env(shared_track, shared_params, ep, derive_seed(config.seed, 0, kTagEvalRun));
  Observation obs = config.start == StartMode::hover
                        ? env.reset_to(hover_state(config.model, track, params))
                        : env.reset();
  Rng noise(derive_seed(config.seed, 0, kTagEvalNoise));

  RolloutResult res;
  res.trajectory.model = config.model;
  res.trajectory.rows.push_back(
      {0.0, 0, flat_state(env.state()), Eigen::VectorXd::Zero(kActionDim), 0.0, env.cursor().index,
       EventKind::none});

  const auto n = static_cast<std::size_t>(track.size());
  int passes = 0;
  while (true) {
    const std::span<const double> o(obs.data(), std::size_t(obs.size()));
    Eigen::VectorXd action = config.deterministic ? policy.clamp(policy.mean(o))
                                                  : policy_sample(policy, o, noise).action;
    StepResult s = env.step(std::span<const double>(action.data(), std::size_t(action.size())));
    res.trajectory.rows.push_back({double(s.info.steps) * config.dt, s.info.steps,
                                   flat_state(env.state()), action, s.reward, s.info.target,
                                   s.info.event});
    if (s.info.event == EventKind::gate_passed) ++passes;
    if (s.info.terminated) break;
    if (passes >= config.lap_target * int(n)) break;
    if (s.info.truncated) break;
    obs = std::move(s.obs);
  }
  res.report = lap_report(res.trajectory, n);
  res.report.timed_out = !res.report.collision && res.report.laps() < config.lap_target;
  return res;
}

RolloutResult rollout(const std::filesystem::path& policy_file, const Track& track,
                      const ModelParams& params, const RolloutConfig& config) {
  return rollout(load_policy(policy_file), track, params, config);
}

std::vector<RolloutResult> evaluate(const GaussianPolicy& policy, const Track& track,
                                    const ModelParams& params, const RolloutConfig& config,
                                    int runs) {
  if (runs < 1) throw std::invalid_argument("evaluation needs at least one run");
  std::vector<RolloutResult> out(static_cast<std::size_t>(runs));
  std::vector<std::exception_ptr> errors(out.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < runs; ++i) {
    try {
      RolloutConfig c = config;
      c.seed = derive_seed(config.seed, std::uint64_t(i), kTagEvalRun);
      out[std::size_t(i)] = rollout(policy, track, params, c);
    } catch (...) {
      errors[std::size_t(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---------------------------------------------------------------------------

LapTable lap_table(const std::vector<LapReport>& reports, int lap_count) {
  if (reports.empty()) throw std::invalid_argument("lap table needs at least one report");
  if (lap_count < 1) throw std::invalid_argument("lap table needs at least one lap column");
  const auto cols = std::size_t(lap_count);

  LapTable table;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.lap_times.size() < cols) continue;
    if (!table.fastest || r.total < reports[*table.fastest].total) table.fastest = i;
  }

  // column means over the runs that reached each lap
  std::vector<double> sum(cols + 1, 0.0);
  std::vector<int> count(cols + 1, 0);
  for (const auto& r : reports) {
    for (std::size_t l = 0; l < cols && l < r.lap_times.size(); ++l) {
      sum[l] += r.lap_times[l];
      ++count[l];
    }
    if (r.lap_times.size() >= cols) {
      sum[cols] += r.total;
      ++count[cols];
    }
  }

  auto fmt = [](double x) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << x;
    return os.str();
  };

  std::vector<std::string> header{"run"};
  for (std::size_t l = 0; l < cols; ++l) header.push_back("lap" + std::to_string(l + 1));
  header.push_back("total");
  header.push_back("gates");
  header.push_back("status");

  std::vector<std::vector<std::string>> rows;
  std::ostringstream csv;
  csv.precision(17);
  for (std::size_t c = 0; c < header.size(); ++c) csv << (c ? "," : "") << header[c];
  csv << '\n';
  table.json["lap_count"] = lap_count;
  table.json["runs"] = nlohmann::ordered_json::array();

  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const bool full = r.lap_times.size() >= cols;
    const std::string status = r.collision ? "collision" : (full ? "complete" : "timeout");
    std::vector<std::string> row{std::to_string(i + 1) + (table.fastest == i ? "*" : "")};
    csv << i + 1;
    for (std::size_t l = 0; l < cols; ++l) {
      row.push_back(l < r.lap_times.size() ? fmt(r.lap_times[l]) : "-");
      csv << ',';
      if (l < r.lap_times.size()) csv << r.lap_times[l];
    }
    row.push_back(full ? fmt(r.total) : "-");
    row.push_back(std::to_string(r.gates()));
    row.push_back(status);
    csv << ',';
    if (full) csv << r.total;
    csv << ',' << r.gates() << ',' << status << '\n';
    rows.push_back(std::move(row));

    nlohmann::ordered_json j;
    j["run"] = i + 1;
    j["lap_times"] = r.lap_times;
    j["total"] = full ? nlohmann::ordered_json(r.total) : nlohmann::ordered_json(nullptr);
    j["gates"] = r.gates();
    j["gate_times"] = r.gate_times;
    j["collision"] = r.collision;
    j["status"] = status;
    j["fastest"] = table.fastest == i;
    table.json["runs"].push_back(j);
  }

  std::vector<std::string> mean_row{"mean"};
  csv << "mean";
  nlohmann::ordered_json mean_laps = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l <= cols; ++l) {
    const bool have = count[l] > 0;
    const double m = have ? sum[l] / count[l] : 0.0;
    mean_row.push_back(have ? fmt(m) : "-");
    csv << ',';
    if (have) csv << m;
    if (l < cols) mean_laps.push_back(have ? nlohmann::ordered_json(m) : nlohmann::ordered_json(nullptr));
  }
  mean_row.push_back("");
  mean_row.push_back("");
  csv << ",,\n";
  rows.push_back(mean_row);
  table.json["mean"] = {{"lap_times", mean_laps},
                        {"total", count[cols] ? nlohmann::ordered_json(sum[cols] / count[cols])
                                              : nlohmann::ordered_json(nullptr)}};
  table.json["fastest_run"] =
      table.fastest ? nlohmann::ordered_json(*table.fastest + 1) : nlohmann::ordered_json(nullptr);

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream text;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      text << (c ? "  " : "") << std::setw(int(width[c])) << row[c];
    }
    text << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  if (table.fastest) text << "* fastest total\n";
  table.text = text.str();
  table.csv = csv.str();
  return table;
}

// ---------------------------------------------------------------------------

std::vector<std::string> state_columns(ModelKind kind) {
  std::vector<std::string> c{"px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r"};
  if (kind == ModelKind::indi) {
    c.push_back("T");
  } else {
    for (const char* s : {"w1", "w2", "w3", "w4", "mx_ext", "my_ext", "mz_ext", "fx_ext", "fy_ext", "fz_ext"}) {
      c.push_back(s);
    }
  }
  return c;
}

std::string format_trajectory(const Trajectory& traj) {
  std::ostringstream os;
  os.precision(17);
  os << "t,step";
  for (const auto& c : state_columns(traj.model)) os << ',' << c;
  os << ",a1,a2,a3,a4,reward,target,event\n";
  for (const auto& row : traj.rows) {
    os << row.t << ',' << row.step;
    for (double x : row.state) os << ',' << x;
    for (Eigen::Index i = 0; i < row.action.size(); ++i) os << ',' << row.action[i];
    os << ',' << row.reward << ',' << row.target << ',' << to_string(row.event) << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::runtime_error("trajectory line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return x;
}

}  // namespace

Trajectory parse_trajectory(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trajectory file is empty");
  const auto header = split_csv(line);

  Trajectory traj;
  bool matched = false;
  for (ModelKind kind : {ModelKind::indi, ModelKind::e2e}) {
    std::vector<std::string> expect{"t", "step"};
    for (const auto& c : state_columns(kind)) expect.push_back(c);
    for (const char* c : {"a1", "a2", "a3", "a4", "reward", "target", "event"}) expect.push_back(c);
    if (expect == header) {
      traj.model = kind;
      matched = true;
    }
  }
  if (!matched) throw std::runtime_error("trajectory header does not match either model layout");

  const std::size_t ns = state_columns(traj.model).size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("trajectory line " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    }
    TrajectoryRow row;
    row.t = parse_double(cells[0], lineno);
    row.step = std::stoll(cells[1]);
    for (std::size_t i = 0; i < ns; ++i) row.state.push_back(parse_double(cells[2 + i], lineno));
    row.action.resize(kActionDim);
    for (int i = 0; i < kActionDim; ++i) row.action[i] = parse_double(cells[2 + ns + std::size_t(i)], lineno);
    row.reward = parse_double(cells[6 + ns], lineno);
    row.target = std::stoul(cells[7 + ns]);
    row.event = event_kind_from_string(cells[8 + ns]);
    traj.rows.push_back(std::move(row));
  }
  return traj;
}

void export_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory '" + path.string() + "'");
  out << format_trajectory(traj);
  if (!out) throw std::runtime_error("error writing trajectory '" + path.string() + "'");
}

Trajectory import_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trajectory(ss.str());
}

}  // namespace quadrace

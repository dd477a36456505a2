// quadrace command-line tool: training, rollouts, lap-time evaluation and
// model identification from flight logs. Run `quadrace --help` or
// `quadrace <command> --help` for the flags.

#include "quadrace/config.hpp"
#include "quadrace/eval.hpp"
#include "quadrace/ppo.hpp"
#include "quadrace/sysid.hpp"
#include "quadrace/weights_io.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

using namespace quadrace;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string track;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("-m,--model", c.model, "dynamics model: indi or e2e (overrides the config)")
      ->check(CLI::IsMember({"indi", "e2e"}));
  cmd->add_option("--track", c.track, "track JSON file (overrides the config)")->check(CLI::ExistingFile);
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) rc.seed = *c.seed;
  if (!c.model.empty()) rc.episode.model = model_kind_from_string(c.model);
  if (!c.track.empty()) rc.track = load_track(c.track);
  return rc;
}

Json metadata(const std::string& command, const RunConfig& rc) {
  return {{"command", command}, {"seed", rc.seed}, {"model", to_string(rc.episode.model)}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

std::vector<double> channel(const FlightLog& log, const std::string& name, bool measured) {
  std::vector<double> out(log.size());
  static const std::map<std::string, int> motors{{"w1", 0}, {"w2", 1}, {"w3", 2}, {"w4", 3}};
  static const std::map<std::string, int> axes{{"p", 0}, {"q", 1}, {"r", 2}};
  for (std::size_t k = 0; k < log.size(); ++k) {
    if (auto m = motors.find(name); m != motors.end()) {
      out[k] = measured ? log.rpm[k][m->second] : log.rpm_cmd[k][m->second];
    } else if (auto a = axes.find(name); a != axes.end()) {
      out[k] = measured ? log.rates[k][a->second] : log.rates_cmd[k][a->second];
    } else {
      out[k] = measured ? -log.accel[k].z() : log.thrust_cmd[k];
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quadrace: quadcopter racing simulator and reinforcement-learning toolkit"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  Common train_c;
  std::string train_out = "policy.qnnw";
  std::string train_log;
  std::optional<std::int64_t> train_steps;
  auto* train_cmd = app.add_subcommand("train", "train a PPO racing policy");
  add_common(train_cmd, train_c);
  train_cmd->add_option("-o,--out", train_out, "policy checkpoint to write");
  train_cmd->add_option("--log", train_log, "training log (one JSON record per iteration)");
  train_cmd->add_option("--steps", train_steps, "total environment steps (overrides the config)");

  // rollout ----------------------------------------------------------------
  Common roll_c;
  std::string roll_policy, roll_out;
  bool roll_stochastic = false;
  std::optional<int> roll_laps;
  std::optional<double> roll_timeout;
  std::string roll_start;
  auto* roll_cmd = app.add_subcommand("rollout", "fly one episode with a trained policy");
  add_common(roll_cmd, roll_c);
  roll_cmd->add_option("-p,--policy", roll_policy, "policy checkpoint")->required()->check(CLI::ExistingFile);
  roll_cmd->add_option("-o,--out", roll_out, "trajectory CSV to write");
  roll_cmd->add_flag("--stochastic", roll_stochastic, "sample actions instead of using the mean");
  roll_cmd->add_option("--laps", roll_laps, "lap target");
  roll_cmd->add_option("--timeout", roll_timeout, "timeout in seconds");
  roll_cmd->add_option("--start", roll_start, "initial state: sampled or hover")
      ->check(CLI::IsMember({"sampled", "hover"}));

  // eval -------------------------------------------------------------------
  Common eval_c;
  std::string eval_policy, eval_csv, eval_json;
  bool eval_stochastic = false;
  std::optional<int> eval_runs, eval_laps;
  std::optional<double> eval_timeout;
  std::string eval_start;
  auto* eval_cmd = app.add_subcommand("eval", "repeated rollouts and a lap-time table");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("-p,--policy", eval_policy, "policy checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-n,--runs", eval_runs, "number of rollouts");
  eval_cmd->add_option("--laps", eval_laps, "lap target");
  eval_cmd->add_option("--timeout", eval_timeout, "timeout in seconds");
  eval_cmd->add_option("--start", eval_start, "initial state: sampled or hover")
      ->check(CLI::IsMember({"sampled", "hover"}));
  eval_cmd->add_flag("--stochastic", eval_stochastic, "sample actions instead of using the mean");
  eval_cmd->add_option("--csv", eval_csv, "write the lap table as CSV");
  eval_cmd->add_option("--json", eval_json, "write the lap table and metadata as JSON");

  // fit-residual -----------------------------------------------------------
  Common fr_c;
  std::vector<std::string> fr_logs;
  std::string fr_out = "residual.qnnw";
  auto* fr_cmd = app.add_subcommand("fit-residual", "fit residual thrust/moment nets to flight logs");
  add_common(fr_cmd, fr_c);
  fr_cmd->add_option("-l,--log", fr_logs, "flight log CSV (repeatable)")->required()->check(CLI::ExistingFile);
  fr_cmd->add_option("-o,--out", fr_out, "residual weight file to write");

  // fit-delay --------------------------------------------------------------
  Common fd_c;
  std::string fd_log;
  std::vector<std::string> fd_channels;
  auto* fd_cmd = app.add_subcommand("fit-delay", "estimate first-order delay constants");
  add_common(fd_cmd, fd_c);
  fd_cmd->add_option("-l,--log", fd_log, "flight log CSV")->required()->check(CLI::ExistingFile);
  fd_cmd->add_option("--channel", fd_channels, "w1..w4, p, q, r or T (default: all of the model's)")
      ->check(CLI::IsMember({"w1", "w2", "w3", "w4", "p", "q", "r", "T"}));

  // fit-drag ---------------------------------------------------------------
  Common fg_c;
  std::string fg_log;
  double fg_min = 1e-3;
  auto* fg_cmd = app.add_subcommand("fit-drag", "estimate body x/y drag coefficients");
  add_common(fg_cmd, fg_c);
  fg_cmd->add_option("-l,--log", fg_log, "flight log CSV")->required()->check(CLI::ExistingFile);
  fg_cmd->add_option("--min-excitation", fg_min, "minimum mean-square body velocity (m^2/s^2)");

  // analyze-log ------------------------------------------------------------
  Common al_c;
  std::string al_log, al_prefix = "modeling_error";
  auto* al_cmd = app.add_subcommand("analyze-log", "modeled-vs-measured actuator responses per channel");
  add_common(al_cmd, al_c);
  al_cmd->add_option("-l,--log", al_log, "flight log CSV")->required()->check(CLI::ExistingFile);
  al_cmd->add_option("--prefix", al_prefix, "output prefix; writes <prefix>_<channel>.csv");

  // synth-log --------------------------------------------------------------
  Common sl_c;
  std::string sl_out = "flight_log.csv";
  SyntheticLogConfig sl_cfg;
  double sl_noise = 0.0;
  auto* sl_cmd = app.add_subcommand("synth-log", "simulate an excitation flight log");
  add_common(sl_cmd, sl_c);
  sl_cmd->add_option("-o,--out", sl_out, "flight log CSV to write");
  sl_cmd->add_option("--duration", sl_cfg.duration, "seconds");
  sl_cmd->add_option("--rate", sl_cfg.rate, "samples per second");
  sl_cmd->add_option("--noise", sl_noise, "relative Gaussian noise on measured channels");

  // export-track -----------------------------------------------------------
  Common et_c;
  std::string et_out = "track.json";
  auto* et_cmd = app.add_subcommand("export-track", "write the configured track as JSON");
  add_common(et_cmd, et_c);
  et_cmd->add_option("-o,--out", et_out, "track file to write");

  // dump-config ------------------------------------------------------------
  Common dc_c;
  std::string dc_out;
  auto* dc_cmd = app.add_subcommand("dump-config", "print the fully resolved configuration");
  add_common(dc_cmd, dc_c);
  dc_cmd->add_option("-o,--out", dc_out, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig rc = resolve(train_c);
      if (train_steps) rc.ppo.total_steps = *train_steps;
      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log);
        if (!log_file) throw std::runtime_error("cannot write '" + train_log + "'");
      }
      Json meta = metadata("train", rc);
      meta["config"] = to_json(rc);
      meta["policy"] = train_out;
      write_text(train_out + ".json", meta.dump(2) + "\n");
      std::cerr << meta.dump() << '\n';

      auto track = std::make_shared<const Track>(rc.track);
      auto params = std::make_shared<const ModelParams>(rc.params);
      TrainResult res = train(race_env_factory(track, params, rc.episode), rc.train_config(),
                              log_file.is_open() ? &log_file : nullptr,
                              [](const IterationLog& it) { std::cout << to_json_line(it) << '\n'; });
      save_policy(res.policy, &res.value, train_out);
      return 0;
    }

    if (*roll_cmd) {
      RunConfig rc = resolve(roll_c);
      RolloutConfig cfg = rc.rollout_config();
      if (roll_stochastic) cfg.deterministic = false;
      if (roll_laps) cfg.lap_target = *roll_laps;
      if (roll_timeout) cfg.timeout = *roll_timeout;
      if (!roll_start.empty()) cfg.start = start_mode_from_string(roll_start);
      RolloutResult res = rollout(std::filesystem::path(roll_policy), rc.track, rc.params, cfg);
      if (!roll_out.empty()) export_trajectory(res.trajectory, roll_out);
      Json j = metadata("rollout", rc);
      j["policy"] = roll_policy;
      j["actions"] = cfg.deterministic ? "deterministic" : "stochastic";
      j["start"] = to_string(cfg.start);
      j["steps"] = res.trajectory.steps();
      j["gates"] = res.report.gates();
      j["lap_times"] = res.report.lap_times;
      j["total"] = res.report.total;
      j["gate_times"] = res.report.gate_times;
      j["collision"] = res.report.collision;
      j["timed_out"] = res.report.timed_out;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*eval_cmd) {
      RunConfig rc = resolve(eval_c);
      RolloutConfig cfg = rc.rollout_config();
      if (eval_stochastic) cfg.deterministic = false;
      if (eval_laps) cfg.lap_target = *eval_laps;
      if (eval_timeout) cfg.timeout = *eval_timeout;
      if (!eval_start.empty()) cfg.start = start_mode_from_string(eval_start);
      const int runs = eval_runs.value_or(rc.eval.runs);
      const GaussianPolicy pol = load_policy(eval_policy);
      const auto results = evaluate(pol, rc.track, rc.params, cfg, runs);
      std::vector<LapReport> reports;
      for (const auto& r : results) reports.push_back(r.report);
      LapTable table = lap_table(reports, cfg.lap_target);

      const std::string label = cfg.deterministic ? "deterministic" : "stochastic";
      std::cout << "policy " << eval_policy << ", model " << to_string(cfg.model) << ", seed "
                << rc.seed << ", " << label << " actions, " << to_string(cfg.start) << " start, "
                << runs << " runs\n"
                << table.text;
      if (!eval_csv.empty()) write_text(eval_csv, table.csv);
      if (!eval_json.empty()) {
        Json j = metadata("eval", rc);
        j["policy"] = eval_policy;
        j["actions"] = label;
        j["start"] = to_string(cfg.start);
        j["table"] = table.json;
        write_text(eval_json, j.dump(2) + "\n");
      }
      return 0;
    }

    if (*fr_cmd) {
      RunConfig rc = resolve(fr_c);
      ResidualDataset ds;
      for (const auto& path : fr_logs) {
        ds.append(residual_targets(load_flight_log(path), rc.params.nominal, rc.filter));
      }
      ResidualFitConfig fit_cfg = rc.residual_fit;
      if (fr_c.seed) fit_cfg.seed = *fr_c.seed;
      ResidualFit fit = fit_residual_nets(ds, rc.params.nominal, fit_cfg);
      save_residual_nets(fit.nets, fr_out);
      const auto& r = fit.report;
      Json j = metadata("fit-residual", rc);
      j["seed"] = fit_cfg.seed;
      j["samples"] = ds.size();
      j["thrust"] = {{"train_mse", r.thrust_train_mse},
                     {"holdout_mse", r.thrust_holdout_mse},
                     {"target_variance", r.thrust_target_variance}};
      j["moment"] = {{"train_mse", r.moment_train_mse},
                     {"holdout_mse", r.moment_holdout_mse},
                     {"target_variance", r.moment_target_variance}};
      j["out"] = fr_out;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*fd_cmd) {
      RunConfig rc = resolve(fd_c);
      const FlightLog log = load_flight_log(fd_log);
      if (fd_channels.empty()) {
        fd_channels = rc.episode.model == ModelKind::e2e
                          ? std::vector<std::string>{"w1", "w2", "w3", "w4"}
                          : std::vector<std::string>{"p", "q", "r", "T"};
      }
      Json j = metadata("fit-delay", rc);
      for (const auto& name : fd_channels) {
        const TauFit fit = fit_first_order_tau(channel(log, name, false), channel(log, name, true),
                                               log.dt(), rc.filter);
        j["channels"][name] = {{"tau", fit.tau}, {"r2", fit.r2}};
      }
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*fg_cmd) {
      RunConfig rc = resolve(fg_c);
      const DragFit fit = fit_drag(load_flight_log(fg_log), fg_min);
      Json j = metadata("fit-drag", rc);
      j["d_x"] = fit.d_x;
      j["d_y"] = fit.d_y;
      j["r2_x"] = fit.r2_x;
      j["r2_y"] = fit.r2_y;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*al_cmd) {
      RunConfig rc = resolve(al_c);
      const ModelingErrorReport rep =
          modeling_error_report(load_flight_log(al_log), rc.params, rc.episode.model);
      Json j = metadata("analyze-log", rc);
      for (const auto& ch : rep.channels) {
        double max_abs = 0.0, ss = 0.0;
        for (double e : ch.error) {
          max_abs = std::max(max_abs, std::abs(e));
          ss += e * e;
        }
        j["channels"][ch.name] = {{"rms_error", std::sqrt(ss / double(ch.error.size()))},
                                  {"max_abs_error", max_abs}};
      }
      std::vector<std::string> files;
      for (const auto& p : write_report_csv(rep, al_prefix)) files.push_back(p.string());
      j["files"] = files;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*sl_cmd) {
      RunConfig rc = resolve(sl_c);
      FlightLog log;
      if (rc.episode.model == ModelKind::indi) {
        QuadStateIndi x0;
        x0.p = rc.track.start;
        x0.thrust = kGravity;
        const IndiSchedule u = indi_excitation();
        log = synthesize_indi_log(x0, u, rc.params.indi, sl_cfg);
      } else {
        QuadStateE2E x0;
        x0.p = rc.track.start;
        const double hover = rc.params.nominal.hover_rpm();
        x0.rpm = Vec4::Constant(hover);
        const RpmSchedule u = e2e_excitation(rc.params.nominal);
        log = synthesize_e2e_log(x0, u, rc.params.nominal, rc.params.residual, sl_cfg);
      }
      if (sl_noise > 0.0) {
        Rng rng(rc.seed);
        std::normal_distribution<double> n(0.0, 1.0);
        auto jitter = [&](auto& v) {
          for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += sl_noise * std::abs(v[i]) * n(rng);
        };
        for (std::size_t k = 0; k < log.size(); ++k) {
          jitter(log.rates[k]);
          jitter(log.accel[k]);
          jitter(log.rpm[k]);
        }
      }
      save_flight_log(log, sl_out);
      Json j = metadata("synth-log", rc);
      j["rows"] = log.size();
      j["out"] = sl_out;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (*et_cmd) {
      RunConfig rc = resolve(et_c);
      save_track(rc.track, et_out);
      std::cout << "wrote " << et_out << " (" << rc.track.size() << " gates)\n";
      return 0;
    }

    if (*dc_cmd) {
      RunConfig rc = resolve(dc_c);
      const std::string text = to_json(rc).dump(2) + "\n";
      if (dc_out.empty()) {
        std::cout << text;
      } else {
        write_text(dc_out, text);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

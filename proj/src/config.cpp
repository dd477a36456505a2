#include "quadrace/config.hpp"

#include "quadrace/weights_io.hpp"

#include <fstream>
#include <set>

namespace quadrace {

namespace {

constexpr double kDeg = kPi / 180.0;

/// Strict reader: every key of the object must be consumed.
class Reader {
 public:
  Reader(const Json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j.is_object()) throw ConfigError(ctx_ + ": expected an object");
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
    return true;
  }

  bool get(const std::string& key, Vec3& out) {
    std::vector<double> v;
    if (!get(key, v)) return false;
    if (v.size() != 3) throw ConfigError(ctx_ + "." + key + ": expected 3 numbers");
    out = Vec3(v[0], v[1], v[2]);
    return true;
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const std::string& ctx() const { return ctx_; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(ctx_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const Json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

Json vec(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& dir) {
  return p.is_absolute() || dir.empty() ? p : dir / p;
}

/// Runs a string-to-enum conversion, reporting failures as config errors.
template <class F>
auto converted(F&& convert, const std::string& ctx) {
  try {
    return convert();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
}

template <class T>
void checked(const T& value, const std::string& ctx) {
  try {
    value.validate();
  } catch (const std::exception& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
}

void read_nominal(const Json& j, NominalParams& p) {
  Reader r(j, "model.nominal");
  r.get("k_x", p.k_x);
  r.get("k_y", p.k_y);
  r.get("k_z", p.k_z);
  r.get("k_omega", p.k_omega);
  r.get("k_h", p.k_h);
  r.get("k_p", p.k_p);
  r.get("k_pv", p.k_pv);
  r.get("k_q", p.k_q);
  r.get("k_qv", p.k_qv);
  r.get("k_r1", p.k_r1);
  r.get("k_r2", p.k_r2);
  r.get("k_rr", p.k_rr);
  r.get("inertia", p.inertia);
  r.get("tau_motor", p.tau_motor);
  r.get("omega_min", p.omega_min);
  r.get("omega_max", p.omega_max);
  r.finish();
  checked(p, r.ctx());
}

void read_indi(const Json& j, IndiParams& p) {
  Reader r(j, "model.indi");
  r.get("tau_rates", p.tau_rates);
  r.get("tau_thrust", p.tau_thrust);
  r.get("d_x", p.d_x);
  r.get("d_y", p.d_y);
  r.get("rate_bound", p.rate_bound);
  r.get("thrust_min", p.thrust_min);
  r.get("thrust_max", p.thrust_max);
  r.finish();
  checked(p, r.ctx());
}

void read_episode(const Json& j, EpisodeConfig& c) {
  Reader r(j, "episode");
  r.get("dt", c.dt);
  r.get("max_duration", c.max_duration);
  r.get("parallel_envs", c.parallel_envs);
  r.get("gamma", c.gamma);
  std::string model;
  if (r.get("model", model)) {
    c.model = converted([&] { return model_kind_from_string(model); }, r.ctx() + ".model");
  }
  r.finish();
  checked(c, r.ctx());
}

void read_ppo(const Json& j, PpoConfig& c) {
  Reader r(j, "ppo");
  r.get("gae_lambda", c.gae_lambda);
  r.get("clip_ratio", c.clip_ratio);
  r.get("learning_rate", c.learning_rate);
  r.get("rollout_horizon", c.rollout_horizon);
  r.get("minibatch_size", c.minibatch_size);
  r.get("epochs", c.epochs);
  r.get("value_coef", c.value_coef);
  r.get("entropy_coef", c.entropy_coef);
  r.get("max_grad_norm", c.max_grad_norm);
  r.get("reward_scale", c.reward_scale);
  r.get("total_steps", c.total_steps);
  r.get("checkpoint_every", c.checkpoint_every);
  std::string dir;
  if (r.get("checkpoint_dir", dir)) c.checkpoint_dir = dir;
  r.finish();
}

void read_policy(const Json& j, PolicyConfig& c) {
  Reader r(j, "policy");
  r.get("hidden", c.hidden);
  std::string act;
  if (r.get("activation", act)) {
    if (act == "relu") {
      c.activation = Activation::relu;
    } else if (act == "tanh") {
      c.activation = Activation::tanh;
    } else {
      throw ConfigError("policy.activation: expected relu or tanh, got '" + act + "'");
    }
  }
  r.get("init_std_fraction", c.init_std_fraction);
  r.get("output_gain", c.output_gain);
  r.finish();
}

void read_eval(const Json& j, EvalConfig& c) {
  Reader r(j, "eval");
  r.get("runs", c.runs);
  r.get("lap_target", c.lap_target);
  r.get("timeout", c.timeout);
  r.get("deterministic", c.deterministic);
  std::string start;
  if (r.get("start", start)) {
    c.start = converted([&] { return start_mode_from_string(start); }, r.ctx() + ".start");
  }
  r.finish();
  if (c.runs < 1 || c.lap_target < 1 || !(c.timeout > 0.0)) {
    throw ConfigError("eval: runs and lap_target must be positive, timeout > 0");
  }
}

void read_sysid(const Json& j, DerivativeFilter& f, ResidualFitConfig& fit) {
  Reader r(j, "sysid");
  if (const Json* fj = r.child("filter")) {
    Reader rf(*fj, "sysid.filter");
    rf.get("window", f.window);
    rf.get("passes", f.passes);
    rf.finish();
    if (f.window < 1 || f.window % 2 == 0 || f.passes < 0) {
      throw ConfigError("sysid.filter: window must be odd and positive, passes non-negative");
    }
  }
  if (const Json* rj = r.child("residual_fit")) {
    Reader rr(*rj, "sysid.residual_fit");
    rr.get("epochs", fit.epochs);
    rr.get("learning_rate", fit.learning_rate);
    rr.get("minibatch_size", fit.minibatch_size);
    rr.get("seed", fit.seed);
    rr.get("blocks", fit.blocks);
    rr.finish();
  }
  r.finish();
}

}  // namespace

// ---------------------------------------------------------------------------

Json to_json(const Track& track) {
  Json gates = Json::array();
  for (const auto& g : track.gates) {
    gates.push_back({{"center", vec(g.center)}, {"yaw_deg", wrap_angle(g.yaw) / kDeg}, {"size", 2.0 * g.half_size}});
  }
  return {{"gates", gates}, {"start", vec(track.start)}, {"ground_z", track.ground_z}};
}

Track track_from_json(const Json& j) {
  Reader r(j, "track");
  Track t;
  const Json* gates = r.child("gates");
  if (!gates || !gates->is_array()) throw ConfigError("track.gates: expected an array");
  for (std::size_t i = 0; i < gates->size(); ++i) {
    Reader rg((*gates)[i], "track.gates[" + std::to_string(i) + "]");
    Gate g;
    if (!rg.get("center", g.center)) throw ConfigError(rg.ctx() + ": missing center");
    double yaw_deg = 0.0;
    rg.get("yaw_deg", yaw_deg);
    g.yaw = wrap_angle(yaw_deg * kDeg);
    double size = 2.0 * g.half_size;
    rg.get("size", size);
    g.half_size = 0.5 * size;
    rg.finish();
    t.gates.push_back(g);
  }
  if (!r.get("start", t.start)) throw ConfigError("track: missing start");
  r.get("ground_z", t.ground_z);
  r.finish();
  try {
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("track: ") + e.what());
  }
  return t;
}

Track load_track(const std::filesystem::path& path) { return track_from_json(read_json(path)); }

void save_track(const Track& track, const std::filesystem::path& path) {
  write_json(to_json(track), path);
}

Json to_json(const NominalParams& p) {
  return {{"k_x", p.k_x},         {"k_y", p.k_y},       {"k_z", p.k_z},
          {"k_omega", p.k_omega}, {"k_h", p.k_h},       {"k_p", p.k_p},
          {"k_pv", p.k_pv},       {"k_q", p.k_q},       {"k_qv", p.k_qv},
          {"k_r1", p.k_r1},       {"k_r2", p.k_r2},     {"k_rr", p.k_rr},
          {"inertia", vec(p.inertia)}, {"tau_motor", p.tau_motor},
          {"omega_min", p.omega_min},  {"omega_max", p.omega_max}};
}

Json to_json(const IndiParams& p) {
  return {{"tau_rates", p.tau_rates},   {"tau_thrust", p.tau_thrust}, {"d_x", p.d_x},
          {"d_y", p.d_y},               {"rate_bound", p.rate_bound},
          {"thrust_min", p.thrust_min}, {"thrust_max", p.thrust_max}};
}

Json to_json(const EpisodeConfig& c) {
  return {{"dt", c.dt},
          {"max_duration", c.max_duration},
          {"parallel_envs", c.parallel_envs},
          {"gamma", c.gamma},
          {"model", to_string(c.model)}};
}

Json to_json(const PpoConfig& c) {
  return {{"gae_lambda", c.gae_lambda},
          {"clip_ratio", c.clip_ratio},
          {"learning_rate", c.learning_rate},
          {"rollout_horizon", c.rollout_horizon},
          {"minibatch_size", c.minibatch_size},
          {"epochs", c.epochs},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"reward_scale", c.reward_scale},
          {"total_steps", c.total_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir.string()}};
}

Json to_json(const PolicyConfig& c) {
  return {{"hidden", c.hidden},
          {"activation", c.activation == Activation::relu ? "relu" : "tanh"},
          {"init_std_fraction", c.init_std_fraction},
          {"output_gain", c.output_gain}};
}

Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["track"] = to_json(c.track);
  j["model"] = {{"nominal", to_json(c.params.nominal)}, {"indi", to_json(c.params.indi)}};
  j["episode"] = to_json(c.episode);
  j["ppo"] = to_json(c.ppo);
  j["policy"] = to_json(c.policy);
  j["sysid"] = {{"filter", {{"window", c.filter.window}, {"passes", c.filter.passes}}},
                {"residual_fit",
                 {{"epochs", c.residual_fit.epochs},
                  {"learning_rate", c.residual_fit.learning_rate},
                  {"minibatch_size", c.residual_fit.minibatch_size},
                  {"seed", c.residual_fit.seed},
                  {"blocks", c.residual_fit.blocks}}}};
  j["eval"] = {{"runs", c.eval.runs},
               {"lap_target", c.eval.lap_target},
               {"timeout", c.eval.timeout},
               {"deterministic", c.eval.deterministic},
               {"start", to_string(c.eval.start)}};
  return j;
}

RunConfig run_config_from_json(const Json& j, const std::filesystem::path& dir, RunConfig c) {
  Reader r(j, "config");
  r.get("seed", c.seed);
  if (const Json* t = r.child("track")) {
    c.track = t->is_string() ? load_track(resolve(t->get<std::string>(), dir)) : track_from_json(*t);
  }
  if (const Json* m = r.child("model")) {
    Reader rm(*m, "model");
    if (const Json* n = rm.child("nominal")) read_nominal(*n, c.params.nominal);
    if (const Json* i = rm.child("indi")) read_indi(*i, c.params.indi);
    std::string residual;
    if (rm.get("residual_weights", residual)) {
      c.params.residual = load_residual_nets(resolve(residual, dir));
    }
    rm.finish();
    c.params.residual.validate();
  }
  if (const Json* e = r.child("episode")) read_episode(*e, c.episode);
  if (const Json* p = r.child("ppo")) read_ppo(*p, c.ppo);
  if (const Json* p = r.child("policy")) read_policy(*p, c.policy);
  if (const Json* s = r.child("sysid")) read_sysid(*s, c.filter, c.residual_fit);
  if (const Json* e = r.child("eval")) read_eval(*e, c.eval);
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json(path), path.parent_path());
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  write_json(to_json(config), path);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.ppo = ppo;
  t.ppo.seed = seed;
  t.ppo.gamma = episode.gamma;
  t.ppo.num_envs = episode.parallel_envs;
  t.policy = policy;
  return t;
}

RolloutConfig RunConfig::rollout_config() const {
  RolloutConfig r;
  r.model = episode.model;
  r.seed = seed;
  r.deterministic = eval.deterministic;
  r.lap_target = eval.lap_target;
  r.timeout = eval.timeout;
  r.dt = episode.dt;
  r.start = eval.start;
  return r;
}

}  // namespace quadrace

#pragma once

// JSON configuration: track files and the main run configuration.
//
// Track file:
//   {
//     "gates": [ {"center": [x, y, z], "yaw_deg": 0.0, "size": 1.0}, ... ],
//     "start": [x, y, z],
//     "ground_z": 0.0
//   }
// Positions are NED metres, yaw in degrees about +z (down), size is the full
// edge length of the square opening.
//
// Main config (every section and key optional, unknown keys are errors):
//   {
//     "seed": 1,
//     "track": "config/track_canonical.json" | { ...track object... },
//     "model": { "nominal": {...}, "indi": {...}, "residual_weights": "path" },
//     "episode": {...}, "ppo": {...}, "policy": {...},
//     "sysid": { "filter": {...}, "residual_fit": {...} },
//     "eval": {...}
//   }
// Relative paths inside a config file resolve against the file's directory.

#include "quadrace/env.hpp"
#include "quadrace/eval.hpp"
#include "quadrace/ppo.hpp"
#include "quadrace/sysid.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <stdexcept>

namespace quadrace {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

Json to_json(const Track& track);
Track track_from_json(const Json& j);
Track load_track(const std::filesystem::path& path);
void save_track(const Track& track, const std::filesystem::path& path);

struct EvalConfig {
  int runs = 20;
  int lap_target = 6;
  double timeout = 60.0;
  bool deterministic = true;
  StartMode start = StartMode::sampled;
};

struct RunConfig {
  std::uint64_t seed = 1;
  Track track = Track::canonical();
  ModelParams params;
  EpisodeConfig episode;
  PpoConfig ppo;
  PolicyConfig policy;
  DerivativeFilter filter;
  ResidualFitConfig residual_fit;
  EvalConfig eval;

  TrainConfig train_config() const;
  RolloutConfig rollout_config() const;
};

Json to_json(const RunConfig& config);
/// Reads sections present in `j` over `base`; `dir` resolves relative paths.
RunConfig run_config_from_json(const Json& j, const std::filesystem::path& dir = {},
                               RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

Json to_json(const NominalParams& p);
Json to_json(const IndiParams& p);
Json to_json(const EpisodeConfig& c);
Json to_json(const PpoConfig& c);
Json to_json(const PolicyConfig& c);

}  // namespace quadrace

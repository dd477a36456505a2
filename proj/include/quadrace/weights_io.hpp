#pragma once

// Binary weight files shared by policies, value nets and residual models.
//
// Layout (all integers uint32 little-endian, all reals IEEE-754 binary64
// little-endian):
//
//   magic    4 bytes  "QNNW"
//   version  u32      = 1
//   count    u32      number of entries
//   entry*   count times:
//     name_len u32, name bytes (UTF-8, no terminator)
//     kind     u32    0 = net, 1 = vector
//     net:     activation u32 (0 relu, 1 tanh), n_sizes u32, sizes u32[n_sizes],
//              in_shift f64[sizes[0]], in_scale f64[sizes[0]],
//              for each layer l: W f64[sizes[l+1]*sizes[l]] (row-major), b f64[sizes[l+1]]
//     vector:  length u32, values f64[length]
//
// A file written by save_net holds a single net entry named "net".

#include "quadrace/neuralnet.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>

namespace quadrace {

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

struct WeightFile {
  std::map<std::string, std::variant<MlpNet, Eigen::VectorXd>> entries;

  const MlpNet& net(const std::string& name) const;
  const Eigen::VectorXd& vector(const std::string& name) const;
  bool contains(const std::string& name) const { return entries.count(name) != 0; }
};

std::string encode_weights(const WeightFile& file);
WeightFile decode_weights(const std::string& bytes);

void save_weights(const WeightFile& file, const std::filesystem::path& path);
WeightFile load_weights(const std::filesystem::path& path);

void save_net(const MlpNet& net, const std::filesystem::path& path);
MlpNet load_net(const std::filesystem::path& path);

/// Policy checkpoint: entries "policy.mean", "policy.log_std", "policy.low",
/// "policy.high" and optionally "value".
void save_policy(const GaussianPolicy& pol, const MlpNet* value, const std::filesystem::path& path);
GaussianPolicy load_policy(const std::filesystem::path& path, MlpNet* value = nullptr);

}  // namespace quadrace

#pragma once

// Model identification from flight logs: residual force/moment targets and
// network fits, first-order delay constants, body drag, and
// modeled-vs-measured reports for the first-order actuator models.

#include "quadrace/dynamics_e2e.hpp"
#include "quadrace/dynamics_indi.hpp"
#include "quadrace/env.hpp"
#include "quadrace/flight_log.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadrace {

class SysidError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smoothed differentiation: second-order central differences followed by
/// `passes` centred moving averages of `window` samples.
struct DerivativeFilter {
  int window = 5;
  int passes = 2;

  /// Samples at each end that the filter cannot centre on.
  std::size_t edge() const { return std::size_t(passes * (window / 2) + 1); }
};

std::vector<double> smooth(std::span<const double> x, const DerivativeFilter& filter);
std::vector<double> smoothed_derivative(std::span<const double> x, double dt,
                                        const DerivativeFilter& filter);

/// Residual-model training data, one column per sample.
struct ResidualDataset {
  Eigen::MatrixXd thrust_inputs;   // 7 x N: omega, v_body
  Eigen::MatrixXd thrust_targets;  // 1 x N
  Eigen::MatrixXd moment_inputs;   // 10 x N: omega, v_body, Omega
  Eigen::MatrixXd moment_targets;  // 3 x N

  Eigen::Index size() const { return thrust_inputs.cols(); }
  void validate() const;
  /// Concatenates another dataset's samples after this one's.
  void append(const ResidualDataset& other);
};

/// thrust target = -a_z + F_nom,z;  moment target = I Omega_dot + Omega x I Omega - M_nom.
/// Rows within the filter edge at either end are dropped.
ResidualDataset residual_targets(const FlightLog& log, const NominalParams& params,
                                 const DerivativeFilter& filter = {});

struct ResidualFitConfig {
  int epochs = 200;
  double learning_rate = 3e-3;
  int minibatch_size = 256;
  std::uint64_t seed = 1;
  int blocks = 10;  // contiguous blocks; every fifth one is held out
};

struct ResidualFitReport {
  double thrust_train_mse = 0.0;
  double thrust_holdout_mse = 0.0;
  double thrust_target_variance = 0.0;
  double moment_train_mse = 0.0;
  double moment_holdout_mse = 0.0;
  double moment_target_variance = 0.0;
};

struct ResidualFit {
  ResidualNets nets;
  ResidualFitReport report;
};

/// Holdout mask for contiguous-block splitting (true = holdout).
std::vector<bool> holdout_mask(Eigen::Index n, int blocks);

/// Trains 7-32-1 and 10-32-3 tanh nets by minibatch Adam on MSE.
ResidualFit fit_residual_nets(const ResidualDataset& ds, const NominalParams& params,
                              const ResidualFitConfig& config = {});

/// Weight file with entries "residual.thrust" and "residual.moment".
void save_residual_nets(const ResidualNets& nets, const std::filesystem::path& path);
ResidualNets load_residual_nets(const std::filesystem::path& path);

struct TauFit {
  double tau = 0.0;
  double r2 = 0.0;
};

/// Least-squares fit of y_dot = (u - y) / tau with commands held between
/// samples (u_k applies over [t_k, t_k+1)). Throws SysidError when the
/// series are shorter than 100 samples or u == y throughout.
TauFit fit_first_order_tau(std::span<const double> commanded, std::span<const double> measured,
                           double dt, const DerivativeFilter& filter = {});

struct DragFit {
  double d_x = 0.0;
  double d_y = 0.0;
  double r2_x = 0.0;
  double r2_y = 0.0;
};

/// Regresses body x/y specific force on -v_body. Throws SysidError when the
/// mean-square body velocity on either axis is below `min_excitation` (m^2/s^2).
DragFit fit_drag(const FlightLog& log, double min_excitation = 1e-3);

struct ChannelSeries {
  std::string name;
  std::vector<double> measured;
  std::vector<double> modeled;
  std::vector<double> error;  // measured - modeled
};

struct ModelingErrorReport {
  std::vector<double> t;
  std::vector<ChannelSeries> channels;
};

/// Runs the first-order actuator models open loop over the logged commands,
/// starting from the first measured value: motor speeds (e2e) or body rates
/// and thrust (indi). Commands are held constant between samples and the
/// models are propagated with their exact exponential step.
ModelingErrorReport modeling_error_report(const FlightLog& log, const ModelParams& params,
                                          ModelKind kind);

/// Writes `<prefix>_<channel>.csv` with columns t,measured,modeled,error.
std::vector<std::filesystem::path> write_report_csv(const ModelingErrorReport& report,
                                                    const std::filesystem::path& prefix);

// ---------------------------------------------------------------------------
// Simulated logs, used for identification round-trips and demos.

struct SyntheticLogConfig {
  double duration = 10.0;
  double rate = 1000.0;  // Hz
  int substeps = 1;      // RK4 steps per sample
};

/// Command schedules see the current state so they can close a loop.
using RpmSchedule = std::function<Vec4(double t, const QuadStateE2E& x)>;
using IndiSchedule = std::function<IndiCommand(double t, const QuadStateIndi& x)>;

/// Sum of three incommensurate sines with peak amplitude below 2.
double multisine(double t, double phase);

/// Motor speed schedule that tracks slowly varying velocity references with
/// a PD attitude loop and adds a per-motor multisine of `amplitude` rpm.
/// Keeps long identification flights bounded while exciting all channels.
RpmSchedule e2e_excitation(const NominalParams& params, double amplitude = 300.0,
                           double phase = 0.0);

/// Open-loop multisine on body rates and collective thrust around hover.
IndiSchedule indi_excitation(double phase = 0.0);

FlightLog synthesize_e2e_log(const QuadStateE2E& initial, const RpmSchedule& commands,
                             const NominalParams& params, const ResidualNets& res,
                             const SyntheticLogConfig& config = {});

FlightLog synthesize_indi_log(const QuadStateIndi& initial, const IndiSchedule& commands,
                              const IndiParams& params, const SyntheticLogConfig& config = {});

}  // namespace quadrace

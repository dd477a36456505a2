#include "quadrace/sysid.hpp"

#include "quadrace/weights_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace quadrace {

std::vector<double> smooth(std::span<const double> x, const DerivativeFilter& filter) {
  std::vector<double> cur(x.begin(), x.end());
  const auto n = static_cast<std::ptrdiff_t>(cur.size());
  const std::ptrdiff_t half = filter.window / 2;
  std::vector<double> next(cur.size());
  for (int pass = 0; pass < filter.passes; ++pass) {
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const std::ptrdiff_t h = std::min({half, k, n - 1 - k});
      double s = 0.0;
      for (std::ptrdiff_t j = k - h; j <= k + h; ++j) s += cur[std::size_t(j)];
      next[std::size_t(k)] = s / double(2 * h + 1);
    }
    std::swap(cur, next);
  }
  return cur;
}

std::vector<double> smoothed_derivative(std::span<const double> x, double dt,
                                        const DerivativeFilter& filter) {
  const std::size_t n = x.size();
  if (n < 3) throw SysidError("differentiation needs at least three samples");
  std::vector<double> d(n);
  d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
  d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
  for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (x[k + 1] - x[k - 1]) / (2.0 * dt);
  return smooth(d, filter);
}

void ResidualDataset::validate() const {
  const Eigen::Index n = size();
  if (thrust_inputs.rows() != 7 || thrust_targets.rows() != 1 || moment_inputs.rows() != 10 ||
      moment_targets.rows() != 3) {
    throw SysidError("residual dataset has wrong feature/target dimensions");
  }
  if (thrust_targets.cols() != n || moment_inputs.cols() != n || moment_targets.cols() != n) {
    throw SysidError("residual dataset input/target row counts differ");
  }
  if (!thrust_inputs.allFinite() || !thrust_targets.allFinite() || !moment_inputs.allFinite() ||
      !moment_targets.allFinite()) {
    throw SysidError("residual dataset contains non-finite values");
  }
}

void ResidualDataset::append(const ResidualDataset& other) {
  other.validate();
  auto grow = [](Eigen::MatrixXd& dst, const Eigen::MatrixXd& src) {
    if (dst.size() == 0) {
      dst = src;
      return;
    }
    const Eigen::Index n0 = dst.cols();
    dst.conservativeResize(Eigen::NoChange, n0 + src.cols());
    dst.rightCols(src.cols()) = src;
  };
  grow(thrust_inputs, other.thrust_inputs);
  grow(thrust_targets, other.thrust_targets);
  grow(moment_inputs, other.moment_inputs);
  grow(moment_targets, other.moment_targets);
}

ResidualDataset residual_targets(const FlightLog& log, const NominalParams& params,
                                 const DerivativeFilter& filter) {
  log.validate();
  if (log.duration() < 1.0) {
    throw SysidError("residual identification needs at least 1 s of flight log");
  }
  const std::size_t n = log.size();
  const double dt = log.dt();

  std::array<std::vector<double>, 3> rate_dot;
  std::array<std::vector<double>, 4> rpm_dot;
  std::vector<double> ch(n);
  for (int a = 0; a < 3; ++a) {
    for (std::size_t k = 0; k < n; ++k) ch[k] = log.rates[k][a];
    rate_dot[std::size_t(a)] = smoothed_derivative(ch, dt, filter);
  }
  for (int m = 0; m < 4; ++m) {
    for (std::size_t k = 0; k < n; ++k) ch[k] = log.rpm[k][m];
    rpm_dot[std::size_t(m)] = smoothed_derivative(ch, dt, filter);
  }

  const std::size_t edge = filter.edge();
  if (n <= 2 * edge) throw SysidError("flight log too short for the derivative filter");
  const auto rows = static_cast<Eigen::Index>(n - 2 * edge);
  ResidualDataset ds{Eigen::MatrixXd(7, rows), Eigen::MatrixXd(1, rows), Eigen::MatrixXd(10, rows),
                     Eigen::MatrixXd(3, rows)};
  const Vec3& inertia = params.inertia;
  for (Eigen::Index j = 0; j < rows; ++j) {
    const std::size_t k = edge + std::size_t(j);
    const Vec4& w = log.rpm[k];
    const Vec3 vb = log.v_body(k);
    const Vec3& om = log.rates[k];
    const Vec3 om_dot(rate_dot[0][k], rate_dot[1][k], rate_dot[2][k]);
    const Vec4 w_dot(rpm_dot[0][k], rpm_dot[1][k], rpm_dot[2][k], rpm_dot[3][k]);

    ds.thrust_inputs.col(j) << w, vb;
    ds.thrust_targets(0, j) = -log.accel[k].z() + nominal_force(w, vb, params).z();

    ds.moment_inputs.col(j) << w, vb, om;
    const Vec3 i_om = inertia.cwiseProduct(om);
    ds.moment_targets.col(j) = inertia.cwiseProduct(om_dot) + om.cross(i_om) -
                               nominal_moment(w, w_dot, vb, om, params);
  }
  return ds;
}

std::vector<bool> holdout_mask(Eigen::Index n, int blocks) {
  if (blocks < 5) throw SysidError("contiguous-block split needs at least 5 blocks");
  std::vector<bool> mask(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto block = static_cast<int>((k * blocks) / std::max<Eigen::Index>(n, 1));
    mask[std::size_t(k)] = block % 5 == 4;
  }
  return mask;
}

namespace {

struct FitOutcome {
  double train_mse;
  double holdout_mse;
  double variance;
};

double mse(const MlpNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.cols() == 0) return 0.0;
  return (net.forward_batch(x) - y).squaredNorm() / double(y.size());
}

FitOutcome fit_one(MlpNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                   const std::vector<bool>& holdout, const ResidualFitConfig& config, Rng& rng) {
  std::vector<Eigen::Index> train_idx, hold_idx;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    (holdout[std::size_t(k)] ? hold_idx : train_idx).push_back(k);
  }
  if (train_idx.empty()) throw SysidError("no training rows after the holdout split");
  const Eigen::MatrixXd xt = x(Eigen::all, train_idx);
  const Eigen::MatrixXd yt = y(Eigen::all, train_idx);
  const Eigen::MatrixXd xh = x(Eigen::all, hold_idx);
  const Eigen::MatrixXd yh = y(Eigen::all, hold_idx);

  // fit standardized targets, then fold the scaling into the output layer
  const Eigen::VectorXd mu = yt.rowwise().mean();
  Eigen::VectorXd sigma = ((yt.colwise() - mu).array().square().rowwise().mean()).sqrt();
  std::vector<bool> constant(std::size_t(sigma.size()));
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    constant[std::size_t(i)] = !(sigma[i] > 1e-9);
    if (constant[std::size_t(i)]) sigma[i] = 1.0;
  }
  const Eigen::MatrixXd ys = (yt.colwise() - mu).array().colwise() / sigma.array();

  Adam adam(parameter_views(net), AdamConfig{config.learning_rate});
  MlpGrad grad = MlpGrad::zeros_like(net);
  std::vector<Eigen::Index> order(train_idx.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto n = static_cast<Eigen::Index>(order.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    adam.set_learning_rate(config.learning_rate * (1.0 - double(epoch) / config.epochs));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index s = 0; s < n; s += config.minibatch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.minibatch_size, n - s);
      std::vector<Eigen::Index> cols(order.begin() + s, order.begin() + s + len);
      MlpCache cache;
      const Eigen::MatrixXd err = forward_batch(net, xt(Eigen::all, cols), cache) - ys(Eigen::all, cols);
      epoch_loss += err.squaredNorm();
      grad.set_zero();
      backward_batch(net, cache, (2.0 / double(err.size())) * err, grad);
      adam.step(parameter_views(grad));
    }
    if (!std::isfinite(epoch_loss)) {
      std::ostringstream os;
      os << "residual fit diverged in epoch " << epoch << " (loss " << epoch_loss << ")";
      throw SysidError(os.str());
    }
  }
  net.weights.back() = sigma.asDiagonal() * net.weights.back();
  net.biases.back() = sigma.cwiseProduct(net.biases.back()) + mu;
  // constant targets (e.g. all zero) are reproduced exactly
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!constant[std::size_t(i)]) continue;
    net.weights.back().row(i).setZero();
    net.biases.back()[i] = mu[i];
  }

  const Eigen::VectorXd ymu = y.rowwise().mean();
  const double variance = (y.colwise() - ymu).squaredNorm() / double(y.size());
  return {mse(net, xt, yt), mse(net, xh, yh), variance};
}

}  // namespace

ResidualFit fit_residual_nets(const ResidualDataset& ds, const NominalParams& params,
                              const ResidualFitConfig& config) {
  ds.validate();
  if (ds.size() == 0) throw SysidError("residual dataset is empty");
  Rng rng(config.seed);
  ResidualFit fit{ResidualNets::random(params, rng), {}};
  const auto mask = holdout_mask(ds.size(), config.blocks);
  const FitOutcome t = fit_one(fit.nets.thrust, ds.thrust_inputs, ds.thrust_targets, mask, config, rng);
  const FitOutcome m = fit_one(fit.nets.moment, ds.moment_inputs, ds.moment_targets, mask, config, rng);
  fit.report = {t.train_mse, t.holdout_mse, t.variance, m.train_mse, m.holdout_mse, m.variance};
  return fit;
}

void save_residual_nets(const ResidualNets& nets, const std::filesystem::path& path) {
  WeightFile f;
  f.entries["residual.thrust"] = nets.thrust;
  f.entries["residual.moment"] = nets.moment;
  save_weights(f, path);
}

ResidualNets load_residual_nets(const std::filesystem::path& path) {
  const WeightFile f = load_weights(path);
  ResidualNets nets{f.net("residual.thrust"), f.net("residual.moment")};
  nets.validate();
  return nets;
}

TauFit fit_first_order_tau(std::span<const double> commanded, std::span<const double> measured,
                           double dt, const DerivativeFilter& filter) {
  const std::size_t n = measured.size();
  if (commanded.size() != n) throw SysidError("commanded and measured series differ in length");
  if (n < 100) throw SysidError("delay identification needs at least 100 samples");
  if (!(dt > 0.0)) throw SysidError("sample interval must be positive");

  std::vector<double> e(n);
  double scale = 1.0;
  double max_e = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    // the central difference at k spans the commands held from k-1 and k
    const double u = k == 0 ? commanded[0] : 0.5 * (commanded[k - 1] + commanded[k]);
    e[k] = u - measured[k];
    scale = std::max(scale, std::abs(measured[k]));
    max_e = std::max(max_e, std::abs(commanded[k] - measured[k]));
  }
  if (max_e <= 1e-12 * scale) {
    throw SysidError("delay unidentifiable: command equals response over the whole series");
  }
  const std::vector<double> ydot = smoothed_derivative(measured, dt, filter);
  const std::vector<double> ef = smooth(e, filter);

  const std::size_t edge = filter.edge();
  double see = 0.0, sey = 0.0, sy = 0.0, syy = 0.0;
  std::size_t m = 0;
  for (std::size_t k = edge; k + edge < n; ++k) {
    see += ef[k] * ef[k];
    sey += ef[k] * ydot[k];
    sy += ydot[k];
    syy += ydot[k] * ydot[k];
    ++m;
  }
  if (!(see > 0.0) || !(sey > 0.0)) {
    throw SysidError("delay unidentifiable: response does not move toward the command");
  }
  const double gain = sey / see;  // 1 / tau
  double ss_res = 0.0;
  for (std::size_t k = edge; k + edge < n; ++k) {
    const double r = ydot[k] - gain * ef[k];
    ss_res += r * r;
  }
  const double ss_tot = syy - sy * sy / double(m);
  return {1.0 / gain, ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0};
}

DragFit fit_drag(const FlightLog& log, double min_excitation) {
  log.validate();
  const std::size_t n = log.size();
  double sxx = 0.0, syy = 0.0, sxa = 0.0, sya = 0.0, saa_x = 0.0, saa_y = 0.0, ma_x = 0.0, ma_y = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 vb = log.v_body(k);
    sxx += vb.x() * vb.x();
    syy += vb.y() * vb.y();
    sxa += -vb.x() * log.accel[k].x();
    sya += -vb.y() * log.accel[k].y();
    saa_x += log.accel[k].x() * log.accel[k].x();
    saa_y += log.accel[k].y() * log.accel[k].y();
    ma_x += log.accel[k].x();
    ma_y += log.accel[k].y();
  }
  const double nn = double(n);
  if (sxx / nn < min_excitation || syy / nn < min_excitation) {
    std::ostringstream os;
    os << "insufficient lateral excitation for drag identification (mean square body velocity x "
       << sxx / nn << ", y " << syy / nn << ", need " << min_excitation << ")";
    throw SysidError(os.str());
  }
  DragFit fit;
  fit.d_x = sxa / sxx;
  fit.d_y = sya / syy;
  // residual sum of squares of a + d v for a through-origin fit
  const double res_x = saa_x - fit.d_x * sxa;
  const double res_y = saa_y - fit.d_y * sya;
  const double tot_x = saa_x - ma_x * ma_x / nn;
  const double tot_y = saa_y - ma_y * ma_y / nn;
  fit.r2_x = tot_x > 0.0 ? 1.0 - res_x / tot_x : 0.0;
  fit.r2_y = tot_y > 0.0 ? 1.0 - res_y / tot_y : 0.0;
  return fit;
}

namespace {

ChannelSeries first_order_channel(std::string name, const std::vector<double>& t,
                                  const std::vector<double>& measured,
                                  const std::vector<double>& command, double tau) {
  ChannelSeries c{std::move(name), measured, std::vector<double>(t.size()),
                  std::vector<double>(t.size())};
  double y = measured.front();
  for (std::size_t k = 0; k < t.size(); ++k) {
    c.modeled[k] = y;
    c.error[k] = measured[k] - y;
    if (k + 1 < t.size()) {
      const double decay = std::exp(-(t[k + 1] - t[k]) / tau);
      y = command[k] + (y - command[k]) * decay;
    }
  }
  return c;
}

}  // namespace

ModelingErrorReport modeling_error_report(const FlightLog& log, const ModelParams& params,
                                          ModelKind kind) {
  log.validate();
  const std::size_t n = log.size();
  ModelingErrorReport rep;
  rep.t = log.t;
  std::vector<double> meas(n), cmd(n);
  if (kind == ModelKind::e2e) {
    for (int m = 0; m < 4; ++m) {
      for (std::size_t k = 0; k < n; ++k) {
        meas[k] = log.rpm[k][m];
        cmd[k] = std::clamp(log.rpm_cmd[k][m], params.nominal.omega_min, params.nominal.omega_max);
      }
      rep.channels.push_back(
          first_order_channel("w" + std::to_string(m + 1), rep.t, meas, cmd, params.nominal.tau_motor));
    }
    return rep;
  }
  const char* names[] = {"p", "q", "r"};
  for (int a = 0; a < 3; ++a) {
    for (std::size_t k = 0; k < n; ++k) {
      meas[k] = log.rates[k][a];
      cmd[k] = clamp_command({log.rates_cmd[k], log.thrust_cmd[k]}, params.indi).rates[a];
    }
    rep.channels.push_back(first_order_channel(names[a], rep.t, meas, cmd, params.indi.tau_rates));
  }
  for (std::size_t k = 0; k < n; ++k) {
    meas[k] = -log.accel[k].z();
    cmd[k] = clamp_command({log.rates_cmd[k], log.thrust_cmd[k]}, params.indi).thrust;
  }
  rep.channels.push_back(first_order_channel("T", rep.t, meas, cmd, params.indi.tau_thrust));
  return rep;
}

std::vector<std::filesystem::path> write_report_csv(const ModelingErrorReport& report,
                                                    const std::filesystem::path& prefix) {
  std::vector<std::filesystem::path> written;
  for (const auto& ch : report.channels) {
    std::filesystem::path path = prefix;
    path += "_" + ch.name + ".csv";
    std::ofstream out(path);
    if (!out) throw SysidError("cannot write report '" + path.string() + "'");
    out.precision(17);
    out << "t,measured,modeled,error\n";
    for (std::size_t k = 0; k < report.t.size(); ++k) {
      out << report.t[k] << ',' << ch.measured[k] << ',' << ch.modeled[k] << ',' << ch.error[k] << '\n';
    }
    written.push_back(path);
  }
  return written;
}

// ---------------------------------------------------------------------------

double multisine(double t, double phase) {
  return std::sin(2.1 * t + phase) + 0.6 * std::sin(5.3 * t + 2.0 * phase) +
         0.35 * std::sin(11.7 * t + 3.0 * phase);
}

RpmSchedule e2e_excitation(const NominalParams& params, double amplitude, double phase) {
  return [params, amplitude, phase](double t, const QuadStateE2E& x) {
    constexpr double kVel = 0.15;     // rad per m/s
    constexpr double kTilt = 0.35;    // rad
    constexpr double kAtt = 300.0;    // 1/s^2
    constexpr double kRate = 25.0;    // 1/s
    constexpr double kYawRate = 12.0;  // 1/s
    constexpr double kClimb = 2.0;    // 1/s
    const Vec3 v_ref(2.0 * std::sin(0.7 * t + phase), 2.0 * std::sin(0.5 * t + 2.0 * phase),
                     0.5 * std::sin(0.9 * t + 3.0 * phase));
    const double c = std::cos(x.lambda.psi);
    const double s = std::sin(x.lambda.psi);
    const Vec3 e = v_ref - x.v;
    const double e_fwd = c * e.x() + s * e.y();
    const double e_side = -s * e.x() + c * e.y();
    const double theta_d = std::clamp(-kVel * e_fwd, -kTilt, kTilt);
    const double phi_d = std::clamp(kVel * e_side, -kTilt, kTilt);
    const double tilt = std::cos(x.lambda.phi) * std::cos(x.lambda.theta);
    const double accel = (kGravity - kClimb * e.z()) / std::max(tilt, 0.5);
    const double mx = params.inertia.x() * (kAtt * (phi_d - x.lambda.phi) - kRate * x.rates.x());
    const double my = params.inertia.y() * (kAtt * (theta_d - x.lambda.theta) - kRate * x.rates.y());
    const double mz = -params.inertia.z() * kYawRate * x.rates.z();
    const double base = std::max(accel, 0.0) / (4.0 * params.k_omega);
    const Vec4 roll(1.0, -1.0, -1.0, 1.0);
    const Vec4 pitch(1.0, 1.0, -1.0, -1.0);
    const Vec4 yaw(-1.0, 1.0, -1.0, 1.0);
    Vec4 w;
    for (int i = 0; i < 4; ++i) {
      const double sq = base + roll[i] * mx / (4.0 * params.k_p) + pitch[i] * my / (4.0 * params.k_q);
      w[i] = std::sqrt(std::max(sq, 0.0)) + yaw[i] * mz / (4.0 * params.k_r1) +
             amplitude * multisine(t, phase + 0.9 * i);
    }
    return w;
  };
}

IndiSchedule indi_excitation(double phase) {
  return [phase](double t, const QuadStateIndi&) {
    return IndiCommand{{0.8 * multisine(t, phase), 0.8 * multisine(t, phase + 1.3),
                        0.5 * multisine(t, phase + 2.6)},
                       kGravity + 2.0 * multisine(t, phase + 0.7)};
  };
}

FlightLog synthesize_e2e_log(const QuadStateE2E& initial, const RpmSchedule& commands,
                             const NominalParams& params, const ResidualNets& res,
                             const SyntheticLogConfig& config) {
  const auto n = static_cast<std::size_t>(std::llround(config.duration * config.rate)) + 1;
  const double dt = 1.0 / config.rate;
  const double h = dt / config.substeps;
  FlightLog log;
  log.resize(n);
  QuadStateE2E x = initial;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = double(k) * dt;
    const Vec4 u = commands(t, x);
    const Vec3 vb = euler_to_rotmat(x.lambda).transpose() * x.v;
    log.t[k] = t;
    log.p[k] = x.p;
    log.v[k] = x.v;
    log.lambda[k] = x.lambda;
    log.rates[k] = x.rates;
    log.accel[k] = nominal_force(x.rpm, vb, params) + residual_force(x.rpm, vb, res) + x.f_ext;
    log.rpm[k] = x.rpm;
    log.rpm_cmd[k] = u;
    for (int s = 0; s < config.substeps; ++s) x = step_e2e(x, u, h, params, res, Integrator::rk4);
  }
  return log;
}

FlightLog synthesize_indi_log(const QuadStateIndi& initial, const IndiSchedule& commands,
                              const IndiParams& params, const SyntheticLogConfig& config) {
  const auto n = static_cast<std::size_t>(std::llround(config.duration * config.rate)) + 1;
  const double dt = 1.0 / config.rate;
  const double h = dt / config.substeps;
  FlightLog log;
  log.resize(n);
  QuadStateIndi x = initial;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = double(k) * dt;
    const IndiCommand u = commands(t, x);
    const Vec3 vb = euler_to_rotmat(x.lambda).transpose() * x.v;
    log.t[k] = t;
    log.p[k] = x.p;
    log.v[k] = x.v;
    log.lambda[k] = x.lambda;
    log.rates[k] = x.rates;
    log.accel[k] = indi_specific_force(vb, x.thrust, params);
    log.rates_cmd[k] = u.rates;
    log.thrust_cmd[k] = u.thrust;
    for (int s = 0; s < config.substeps; ++s) x = step_indi(x, u, h, params, Integrator::rk4);
  }
  return log;
}

}  // namespace quadrace

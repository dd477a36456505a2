#pragma once

// End-to-end quadcopter model: nominal aerodynamic force/moment model plus
// learned residual corrections, first-order motor lag, and constant external
// specific-force / moment offsets.
//
// Motor layout (NED body frame): 1 front-left, 2 front-right, 3 rear-right,
// 4 rear-left.

#include "quadrace/mathcore.hpp"
#include "quadrace/neuralnet.hpp"

#include <array>
#include <span>

namespace quadrace {

using Vec4 = Eigen::Vector4d;

/// Flat order: p(3) v(3) lambda(3) Omega(3) omega(4) M_ext(3) F_ext(3).
struct QuadStateE2E {
  static constexpr std::size_t kSize = 22;

  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  EulerAngles lambda;
  Vec3 rates = Vec3::Zero();  // body rates p, q, r
  Vec4 rpm = Vec4::Zero();    // propeller speeds
  Vec3 m_ext = Vec3::Zero();
  Vec3 f_ext = Vec3::Zero();

  std::array<double, kSize> flatten() const;
  static QuadStateE2E unflatten(std::span<const double> x);
  bool finite() const;
};

struct NominalParams {
  // force coefficients
  double k_x = 1.2e-5;
  double k_y = 1.5e-5;
  double k_z = 2.0e-5;
  double k_omega = 5.0e-8;
  double k_h = 1.0e-2;
  // moment coefficients
  double k_p = 8.0e-9;
  double k_pv = -5.0e-3;
  double k_q = 7.0e-9;
  double k_qv = 5.0e-3;
  double k_r1 = 2.0e-5;
  double k_r2 = 2.0e-7;
  double k_rr = 5.0e-3;
  // diagonal inertia, mass-normalized (m^2)
  Vec3 inertia{0.0045, 0.0045, 0.0080};
  double tau_motor = 0.03;
  double omega_min = 3000.0;
  double omega_max = 11000.0;

  void validate() const;
  /// Equal-motor speed at which thrust balances gravity.
  double hover_rpm() const;
};

/// Residual thrust and moment networks with their input normalization
/// stored inside each net.
struct ResidualNets {
  MlpNet thrust;  // 7 -> 32 -> 1: (omega, v_body)
  MlpNet moment;  // 10 -> 32 -> 3: (omega, v_body, Omega)

  static constexpr int kHidden = 32;

  static ResidualNets zeros(const NominalParams& params);
  static ResidualNets random(const NominalParams& params, Rng& rng, double output_gain = 1.0);
  void validate() const;
};

/// Input normalization used by residual nets: RPM mapped from
/// [omega_min, omega_max] to [-1, 1], velocities and rates scaled by 1/10.
void set_residual_normalization(MlpNet& net, const NominalParams& params);

Vec3 nominal_force(const Vec4& rpm, const Vec3& v_body, const NominalParams& params);
Vec3 nominal_moment(const Vec4& rpm, const Vec4& rpm_dot, const Vec3& v_body, const Vec3& rates,
                    const NominalParams& params);

/// Residual specific force (0, 0, -N_T) and residual moment N_M.
Vec3 residual_force(const Vec4& rpm, const Vec3& v_body, const ResidualNets& res);
Vec3 residual_moment(const Vec4& rpm, const Vec3& v_body, const Vec3& rates,
                     const ResidualNets& res);

Vec4 clamp_rpm(const Vec4& u, const NominalParams& params);

/// Time derivative of the state, returned in state layout.
QuadStateE2E e2e_derivative(const QuadStateE2E& x, const Vec4& u, const NominalParams& params,
                            const ResidualNets& res);

QuadStateE2E step_e2e(const QuadStateE2E& x, const Vec4& u, double dt, const NominalParams& params,
                      const ResidualNets& res, Integrator method = Integrator::euler);

}  // namespace quadrace

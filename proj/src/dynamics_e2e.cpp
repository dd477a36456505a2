#include "quadrace/dynamics_e2e.hpp"

#include <cmath>
#include <stdexcept>

namespace quadrace {

std::array<double, QuadStateE2E::kSize> QuadStateE2E::flatten() const {
  return {p.x(),       p.y(),        p.z(),      v.x(),      v.y(),      v.z(),
          lambda.phi,  lambda.theta, lambda.psi, rates.x(),  rates.y(),  rates.z(),
          rpm[0],      rpm[1],       rpm[2],     rpm[3],     m_ext.x(),  m_ext.y(),
          m_ext.z(),   f_ext.x(),    f_ext.y(),  f_ext.z()};
}

QuadStateE2E QuadStateE2E::unflatten(std::span<const double> x) {
  if (x.size() != kSize) throw std::invalid_argument("E2E state must have 22 components");
  QuadStateE2E s;
  s.p = {x[0], x[1], x[2]};
  s.v = {x[3], x[4], x[5]};
  s.lambda = {x[6], x[7], x[8]};
  s.rates = {x[9], x[10], x[11]};
  s.rpm = {x[12], x[13], x[14], x[15]};
  s.m_ext = {x[16], x[17], x[18]};
  s.f_ext = {x[19], x[20], x[21]};
  return s;
}

bool QuadStateE2E::finite() const {
  for (double c : flatten()) {
    if (!std::isfinite(c)) return false;
  }
  return true;
}

void NominalParams::validate() const {
  if (!(inertia.minCoeff() > 0.0)) throw std::invalid_argument("inertia must be positive");
  if (!(tau_motor > 0.0)) throw std::invalid_argument("tau_motor must be positive");
  if (!(omega_min < omega_max)) throw std::invalid_argument("omega_min must be below omega_max");
}

double NominalParams::hover_rpm() const { return std::sqrt(kGravity / (4.0 * k_omega)); }

void set_residual_normalization(MlpNet& net, const NominalParams& params) {
  const double mid = 0.5 * (params.omega_min + params.omega_max);
  const double half = 0.5 * (params.omega_max - params.omega_min);
  for (int i = 0; i < net.input_dim(); ++i) {
    if (i < 4) {
      net.in_shift[i] = mid;
      net.in_scale[i] = 1.0 / half;
    } else {
      net.in_shift[i] = 0.0;
      net.in_scale[i] = 0.1;
    }
  }
}

ResidualNets ResidualNets::zeros(const NominalParams& params) {
  ResidualNets r{MlpNet::zeros({7, kHidden, 1}, Activation::tanh),
                 MlpNet::zeros({10, kHidden, 3}, Activation::tanh)};
  set_residual_normalization(r.thrust, params);
  set_residual_normalization(r.moment, params);
  return r;
}

ResidualNets ResidualNets::random(const NominalParams& params, Rng& rng, double output_gain) {
  ResidualNets r{MlpNet::random({7, kHidden, 1}, Activation::tanh, rng, 1.0, output_gain),
                 MlpNet::random({10, kHidden, 3}, Activation::tanh, rng, 1.0, output_gain)};
  set_residual_normalization(r.thrust, params);
  set_residual_normalization(r.moment, params);
  return r;
}

void ResidualNets::validate() const {
  thrust.validate();
  moment.validate();
  if (thrust.sizes != std::vector<int>{7, kHidden, 1}) {
    throw DimensionError("residual thrust net must be 7 -> 32 -> 1");
  }
  if (moment.sizes != std::vector<int>{10, kHidden, 3}) {
    throw DimensionError("residual moment net must be 10 -> 32 -> 3");
  }
}

Vec3 nominal_force(const Vec4& rpm, const Vec3& v_body, const NominalParams& params) {
  const double sum = rpm.sum();
  const double sum_sq = rpm.squaredNorm();
  const double vx = v_body.x(), vy = v_body.y(), vz = v_body.z();
  return {-params.k_x * vx * sum,
          -params.k_y * vy * sum,
          -params.k_omega * sum_sq - params.k_z * vz * sum - params.k_h * (vx * vx + vy * vy)};
}

Vec3 nominal_moment(const Vec4& rpm, const Vec4& rpm_dot, const Vec3& v_body, const Vec3& rates,
                    const NominalParams& params) {
  const Vec4 w2 = rpm.cwiseProduct(rpm);
  return {params.k_p * (w2[0] - w2[1] - w2[2] + w2[3]) + params.k_pv * v_body.y(),
          params.k_q * (w2[0] + w2[1] - w2[2] - w2[3]) + params.k_qv * v_body.x(),
          params.k_r1 * (-rpm[0] + rpm[1] - rpm[2] + rpm[3]) +
              params.k_r2 * (-rpm_dot[0] + rpm_dot[1] - rpm_dot[2] + rpm_dot[3]) -
              params.k_rr * rates.z()};
}

Vec3 residual_force(const Vec4& rpm, const Vec3& v_body, const ResidualNets& res) {
  const std::array<double, 7> in{rpm[0], rpm[1], rpm[2], rpm[3], v_body.x(), v_body.y(), v_body.z()};
  return {0.0, 0.0, -res.thrust.forward(in)[0]};
}

Vec3 residual_moment(const Vec4& rpm, const Vec3& v_body, const Vec3& rates,
                     const ResidualNets& res) {
  const std::array<double, 10> in{rpm[0],     rpm[1],     rpm[2],     rpm[3],    v_body.x(),
                                  v_body.y(), v_body.z(), rates.x(), rates.y(), rates.z()};
  return res.moment.forward(in);
}

Vec4 clamp_rpm(const Vec4& u, const NominalParams& params) {
  return u.cwiseMax(params.omega_min).cwiseMin(params.omega_max);
}

QuadStateE2E e2e_derivative(const QuadStateE2E& x, const Vec4& u, const NominalParams& params,
                            const ResidualNets& res) {
  const Vec4 cmd = clamp_rpm(u, params);
  const RotMat r = euler_to_rotmat(x.lambda);
  const Vec3 v_body = r.transpose() * x.v;

  QuadStateE2E d;
  d.p = x.v;
  d.rpm = (cmd - x.rpm) / params.tau_motor;

  const Vec3 f_mod = nominal_force(x.rpm, v_body, params) + residual_force(x.rpm, v_body, res);
  d.v = Vec3(0.0, 0.0, kGravity) + r * (f_mod + x.f_ext);

  const Vec3 ldot = euler_kinematics(x.lambda, x.rates);
  d.lambda = {ldot.x(), ldot.y(), ldot.z()};

  const Vec3 m_mod = nominal_moment(x.rpm, d.rpm, v_body, x.rates, params) +
                     residual_moment(x.rpm, v_body, x.rates, res);
  const Vec3 i_omega = params.inertia.cwiseProduct(x.rates);
  d.rates = (-x.rates.cross(i_omega) + m_mod + x.m_ext).cwiseQuotient(params.inertia);

  d.m_ext.setZero();
  d.f_ext.setZero();
  return d;
}

QuadStateE2E step_e2e(const QuadStateE2E& x, const Vec4& u, double dt, const NominalParams& params,
                      const ResidualNets& res, Integrator method) {
  const auto flat = x.flatten();
  const Derivative deriv = [&](std::span<const double> s, std::span<double> out) {
    const auto d = e2e_derivative(QuadStateE2E::unflatten(s), u, params, res).flatten();
    std::copy(d.begin(), d.end(), out.begin());
  };
  QuadStateE2E next = QuadStateE2E::unflatten(integrate(flat, deriv, dt, method));
  next.rpm = clamp_rpm(next.rpm, params);
  return next;
}

}  // namespace quadrace

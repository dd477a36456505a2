#include "quadrace/dynamics_indi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quadrace {

std::array<double, QuadStateIndi::kSize> QuadStateIndi::flatten() const {
  return {p.x(),      p.y(),        p.z(),      v.x(),     v.y(),     v.z(),    lambda.phi,
          lambda.theta, lambda.psi, rates.x(), rates.y(), rates.z(), thrust};
}

QuadStateIndi QuadStateIndi::unflatten(std::span<const double> x) {
  if (x.size() != kSize) throw std::invalid_argument("INDI state must have 13 components");
  QuadStateIndi s;
  s.p = {x[0], x[1], x[2]};
  s.v = {x[3], x[4], x[5]};
  s.lambda = {x[6], x[7], x[8]};
  s.rates = {x[9], x[10], x[11]};
  s.thrust = x[12];
  return s;
}

bool QuadStateIndi::finite() const {
  for (double c : flatten()) {
    if (!std::isfinite(c)) return false;
  }
  return true;
}

void IndiParams::validate() const {
  if (!(tau_rates > 0.0) || !(tau_thrust > 0.0)) {
    throw std::invalid_argument("INDI delay constants must be positive");
  }
  if (!(thrust_min < thrust_max)) throw std::invalid_argument("thrust_min must be below thrust_max");
  if (!(rate_bound > 0.0)) throw std::invalid_argument("rate_bound must be positive");
}

IndiCommand clamp_command(const IndiCommand& u, const IndiParams& params) {
  IndiCommand c;
  c.rates = u.rates.cwiseMax(-params.rate_bound).cwiseMin(params.rate_bound);
  c.thrust = std::clamp(u.thrust, params.thrust_min, params.thrust_max);
  return c;
}

Vec3 indi_specific_force(const Vec3& v_body, double thrust, const IndiParams& params) {
  return {-params.d_x * v_body.x(), -params.d_y * v_body.y(), -thrust};
}

QuadStateIndi indi_derivative(const QuadStateIndi& x, const IndiCommand& u,
                              const IndiParams& params) {
  const IndiCommand cmd = clamp_command(u, params);
  const RotMat r = euler_to_rotmat(x.lambda);
  const Vec3 v_body = r.transpose() * x.v;

  QuadStateIndi d;
  d.p = x.v;
  d.v = Vec3(0.0, 0.0, kGravity) + r * indi_specific_force(v_body, x.thrust, params);
  const Vec3 ldot = euler_kinematics(x.lambda, x.rates);
  d.lambda = {ldot.x(), ldot.y(), ldot.z()};
  d.rates = (cmd.rates - x.rates) / params.tau_rates;
  d.thrust = (cmd.thrust - x.thrust) / params.tau_thrust;
  return d;
}

QuadStateIndi step_indi(const QuadStateIndi& x, const IndiCommand& u, double dt,
                        const IndiParams& params, Integrator method) {
  const IndiCommand cmd = clamp_command(u, params);
  const Derivative deriv = [&](std::span<const double> s, std::span<double> out) {
    const auto d = indi_derivative(QuadStateIndi::unflatten(s), cmd, params).flatten();
    std::copy(d.begin(), d.end(), out.begin());
  };
  return QuadStateIndi::unflatten(integrate(x.flatten(), deriv, dt, method));
}

}  // namespace quadrace

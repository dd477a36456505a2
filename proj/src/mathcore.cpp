#include "quadrace/mathcore.hpp"

#include <cmath>
#include <sstream>

namespace quadrace {

namespace {

std::string singularity_message(double theta) {
  std::ostringstream os;
  os << "Euler kinematics singular: pitch " << theta << " rad is within "
     << kPitchSingularityMargin << " of +-pi/2";
  return os.str();
}

std::string integration_message(std::size_t index, double value) {
  std::ostringstream os;
  os << "non-finite derivative component " << index << " (" << value << ")";
  return os.str();
}

void check_finite(std::span<const double> d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) throw IntegrationError(i, d[i]);
  }
}

}  // namespace

SingularityError::SingularityError(double theta)
    : std::runtime_error(singularity_message(theta)), theta_(theta) {}

IntegrationError::IntegrationError(std::size_t index, double value)
    : std::runtime_error(integration_message(index, value)), index_(index) {}

RotMat euler_to_rotmat(const EulerAngles& lambda) {
  const double cf = std::cos(lambda.phi), sf = std::sin(lambda.phi);
  const double ct = std::cos(lambda.theta), st = std::sin(lambda.theta);
  const double cp = std::cos(lambda.psi), sp = std::sin(lambda.psi);
  RotMat r;
  r << ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp,
       ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp,
       -st,     sf * ct,                cf * ct;
  return r;
}

bool pitch_is_singular(double theta) {
  return !(std::abs(theta) < kPi / 2.0 - kPitchSingularityMargin);
}

Vec3 euler_kinematics(const EulerAngles& lambda, const Vec3& omega_body) {
  if (pitch_is_singular(lambda.theta)) throw SingularityError(lambda.theta);
  const double cf = std::cos(lambda.phi), sf = std::sin(lambda.phi);
  const double ct = std::cos(lambda.theta), tt = std::tan(lambda.theta);
  const double p = omega_body.x(), q = omega_body.y(), r = omega_body.z();
  return {p + sf * tt * q + cf * tt * r,
          cf * q - sf * r,
          (sf * q + cf * r) / ct};
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Integrator integrator_from_string(const std::string& name) {
  if (name == "euler") return Integrator::euler;
  if (name == "rk4") return Integrator::rk4;
  throw std::invalid_argument("unknown integrator '" + name + "'");
}

std::string to_string(Integrator method) {
  return method == Integrator::euler ? "euler" : "rk4";
}

std::vector<double> integrate(std::span<const double> state, const Derivative& deriv, double dt,
                              Integrator method) {
  const std::size_t n = state.size();
  std::vector<double> out(state.begin(), state.end());
  if (dt == 0.0) return out;

  std::vector<double> k1(n);
  deriv(state, k1);
  check_finite(k1);
  if (method == Integrator::euler) {
    for (std::size_t i = 0; i < n; ++i) out[i] += dt * k1[i];
    return out;
  }

  std::vector<double> k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + 0.5 * dt * k1[i];
  deriv(tmp, k2);
  check_finite(k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + 0.5 * dt * k2[i];
  deriv(tmp, k3);
  check_finite(k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + dt * k3[i];
  deriv(tmp, k4);
  check_finite(k4);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

}  // namespace quadrace

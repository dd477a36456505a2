#pragma once

// Closed-loop abstraction of a quadcopter flown through an INDI inner loop:
// body rates and mass-normalized thrust follow their commands with first-order
// delays, and the airframe sees a linear body-frame drag.

#include "quadrace/mathcore.hpp"

#include <array>
#include <span>

namespace quadrace {

/// Flat order: p(3) v(3) lambda(3) Omega(3) T(1).
struct QuadStateIndi {
  static constexpr std::size_t kSize = 13;

  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  EulerAngles lambda;
  Vec3 rates = Vec3::Zero();
  double thrust = 0.0;  // m/s^2

  std::array<double, kSize> flatten() const;
  static QuadStateIndi unflatten(std::span<const double> x);
  bool finite() const;
};

struct IndiCommand {
  Vec3 rates = Vec3::Zero();
  double thrust = 0.0;
};

struct IndiParams {
  double tau_rates = 0.03;
  double tau_thrust = 0.03;
  double d_x = 0.34;
  double d_y = 0.43;
  double rate_bound = 3.0;
  double thrust_min = 0.0;
  double thrust_max = 15.0;

  void validate() const;
};

IndiCommand clamp_command(const IndiCommand& u, const IndiParams& params);

/// Body-frame specific force (-d_x v_x, -d_y v_y, -T).
Vec3 indi_specific_force(const Vec3& v_body, double thrust, const IndiParams& params);

QuadStateIndi indi_derivative(const QuadStateIndi& x, const IndiCommand& u,
                              const IndiParams& params);

QuadStateIndi step_indi(const QuadStateIndi& x, const IndiCommand& u, double dt,
                        const IndiParams& params, Integrator method = Integrator::euler);

}  // namespace quadrace

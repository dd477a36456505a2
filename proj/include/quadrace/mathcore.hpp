#pragma once

// Frames, rotations and fixed-step integrators shared by both quadcopter models.
//
// Conventions used everywhere in quadrace:
//   * world frame is NED (x north, y east, z down); gravity acts along +z
//   * Euler angles are ZYX (yaw psi, then pitch theta, then roll phi)
//   * rotations map body-frame vectors into the world frame
//   * thrust acts along the body -z axis

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadrace {

using Vec3 = Eigen::Vector3d;
using RotMat = Eigen::Matrix3d;

inline constexpr double kGravity = 9.81;
inline constexpr double kPi = 3.14159265358979323846;

/// Pitch angles closer than this to +-pi/2 make the Euler kinematics singular.
inline constexpr double kPitchSingularityMargin = 1e-3;

struct EulerAngles {
  double phi = 0.0;    // roll
  double theta = 0.0;  // pitch
  double psi = 0.0;    // yaw
};

class SingularityError : public std::runtime_error {
 public:
  explicit SingularityError(double theta);
  double pitch() const { return theta_; }

 private:
  double theta_;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(std::size_t index, double value);
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Body-to-world rotation for ZYX Euler angles, R = Rz(psi) Ry(theta) Rx(phi).
RotMat euler_to_rotmat(const EulerAngles& lambda);

/// Euler-angle rates from body rates, lambda_dot = Q(lambda) * omega_body.
/// Throws SingularityError when |theta| >= pi/2 - kPitchSingularityMargin.
Vec3 euler_kinematics(const EulerAngles& lambda, const Vec3& omega_body);

bool pitch_is_singular(double theta);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

enum class Integrator { euler, rk4 };

Integrator integrator_from_string(const std::string& name);
std::string to_string(Integrator method);

using Derivative = std::function<void(std::span<const double> x, std::span<double> dxdt)>;

/// One fixed step of size dt. Throws IntegrationError if any derivative
/// component evaluated during the step is non-finite.
std::vector<double> integrate(std::span<const double> state, const Derivative& deriv, double dt,
                              Integrator method);

}  // namespace quadrace

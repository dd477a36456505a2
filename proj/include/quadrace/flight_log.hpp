#pragma once

// Flight logs: fixed-rate time series of state, IMU specific force, motor
// speeds and commands, stored as CSV.
//
// CSV layout: the first line names the columns, the second line gives units,
// every following line is one sample. Columns may appear in any order; all of
// the following are required.
//
//   t                     s            (ms accepted)
//   px py pz              m            world NED position
//   vx vy vz              m/s          world NED velocity
//   phi theta psi         rad          (deg accepted)
//   p q r                 rad/s        body rates (deg/s accepted)
//   ax ay az              m/s^2        body-frame specific force (accelerometer)
//   w1 w2 w3 w4           rpm          measured propeller speeds
//   u1 u2 u3 u4           rpm          commanded propeller speeds
//   p_cmd q_cmd r_cmd     rad/s        commanded body rates (deg/s accepted)
//   T_cmd                 m/s^2        commanded mass-normalized thrust
//
// Commands on row k are the values held over [t_k, t_{k+1}).

#include "quadrace/dynamics_e2e.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace quadrace {

class FlightLogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlightLog {
  std::vector<double> t;
  std::vector<Vec3> p;
  std::vector<Vec3> v;
  std::vector<EulerAngles> lambda;
  std::vector<Vec3> rates;
  std::vector<Vec3> accel;
  std::vector<Vec4> rpm;
  std::vector<Vec4> rpm_cmd;
  std::vector<Vec3> rates_cmd;
  std::vector<double> thrust_cmd;

  std::size_t size() const { return t.size(); }
  double duration() const { return t.empty() ? 0.0 : t.back() - t.front(); }
  /// Mean sample interval.
  double dt() const;
  void resize(std::size_t n);
  /// Body-frame velocity of sample k.
  Vec3 v_body(std::size_t k) const;

  /// Strictly increasing timestamps and sample intervals within 1% of the
  /// median; errors name the offending data row (1-based, after header/units).
  void validate() const;
};

extern const std::vector<std::string> kFlightLogColumns;

FlightLog load_flight_log(const std::filesystem::path& path);
FlightLog parse_flight_log(const std::string& text);
void save_flight_log(const FlightLog& log, const std::filesystem::path& path);
std::string format_flight_log(const FlightLog& log);

}  // namespace quadrace

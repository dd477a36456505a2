#include "quadrace/flight_log.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace quadrace {

const std::vector<std::string> kFlightLogColumns = {
    "t",  "px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "psi", "p",     "q",     "r",    "ax",
    "ay", "az", "w1", "w2", "w3", "w4", "u1", "u2",  "u3",    "u4",  "p_cmd", "q_cmd", "r_cmd", "T_cmd"};

namespace {

const std::vector<std::string> kUnits = {
    "s",     "m",     "m",     "m",     "m/s",   "m/s",   "m/s",   "rad",   "rad",   "rad",
    "rad/s", "rad/s", "rad/s", "m/s^2", "m/s^2", "m/s^2", "rpm",   "rpm",   "rpm",   "rpm",
    "rpm",   "rpm",   "rpm",   "rpm",   "rad/s", "rad/s", "rad/s", "m/s^2"};

constexpr double kDeg = kPi / 180.0;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double unit_factor(const std::string& column, const std::string& expected, const std::string& unit) {
  if (unit == expected) return 1.0;
  if (expected == "s" && unit == "ms") return 1e-3;
  if (expected == "rad" && unit == "deg") return kDeg;
  if (expected == "rad/s" && unit == "deg/s") return kDeg;
  throw FlightLogError("column '" + column + "' has unit '" + unit + "', expected '" + expected + "'");
}

std::string row_label(std::size_t data_row) {
  return "data row " + std::to_string(data_row + 1) + " (line " + std::to_string(data_row + 3) + ")";
}

}  // namespace

double FlightLog::dt() const {
  if (size() < 2) return 0.0;
  return duration() / double(size() - 1);
}

void FlightLog::resize(std::size_t n) {
  t.resize(n);
  p.resize(n, Vec3::Zero());
  v.resize(n, Vec3::Zero());
  lambda.resize(n);
  rates.resize(n, Vec3::Zero());
  accel.resize(n, Vec3::Zero());
  rpm.resize(n, Vec4::Zero());
  rpm_cmd.resize(n, Vec4::Zero());
  rates_cmd.resize(n, Vec3::Zero());
  thrust_cmd.resize(n, 0.0);
}

Vec3 FlightLog::v_body(std::size_t k) const {
  return euler_to_rotmat(lambda[k]).transpose() * v[k];
}

void FlightLog::validate() const {
  const std::size_t n = size();
  if (p.size() != n || v.size() != n || lambda.size() != n || rates.size() != n ||
      accel.size() != n || rpm.size() != n || rpm_cmd.size() != n || rates_cmd.size() != n ||
      thrust_cmd.size() != n) {
    throw FlightLogError("flight log channels have different lengths");
  }
  if (n < 2) throw FlightLogError("flight log needs at least two samples");
  std::vector<double> steps(n - 1);
  for (std::size_t k = 1; k < n; ++k) {
    steps[k - 1] = t[k] - t[k - 1];
    if (!(steps[k - 1] > 0.0)) {
      throw FlightLogError("timestamps not strictly increasing at " + row_label(k));
    }
  }
  std::vector<double> sorted = steps;
  std::nth_element(sorted.begin(), sorted.begin() + long(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (std::abs(steps[k] - median) > 0.01 * median) {
      throw FlightLogError("sample interval deviates more than 1% from the median at " +
                           row_label(k + 1));
    }
  }
}

FlightLog parse_flight_log(const std::string& text) {
  std::istringstream in(text);
  std::string header, units;
  if (!std::getline(in, header) || !std::getline(in, units)) {
    throw FlightLogError("flight log needs a header line and a units line");
  }
  const auto names = split(header);
  const auto unit_cells = split(units);
  if (unit_cells.size() != names.size()) {
    throw FlightLogError("units line has " + std::to_string(unit_cells.size()) +
                         " cells, header has " + std::to_string(names.size()));
  }
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < names.size(); ++i) where[names[i]] = i;

  std::vector<std::size_t> index(kFlightLogColumns.size());
  std::vector<double> factor(kFlightLogColumns.size());
  for (std::size_t c = 0; c < kFlightLogColumns.size(); ++c) {
    auto it = where.find(kFlightLogColumns[c]);
    if (it == where.end()) throw FlightLogError("missing column '" + kFlightLogColumns[c] + "'");
    index[c] = it->second;
    factor[c] = unit_factor(kFlightLogColumns[c], kUnits[c], unit_cells[it->second]);
  }

  FlightLog log;
  std::string line;
  std::vector<double> vals(kFlightLogColumns.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    if (cells.size() != names.size()) {
      throw FlightLogError(row_label(row) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(names.size()));
    }
    for (std::size_t c = 0; c < kFlightLogColumns.size(); ++c) {
      const std::string& cell = cells[index[c]];
      double x = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(x)) {
        throw FlightLogError(row_label(row) + ": bad value '" + cell + "' in column '" +
                             kFlightLogColumns[c] + "'");
      }
      vals[c] = x * factor[c];
    }
    log.t.push_back(vals[0]);
    log.p.emplace_back(vals[1], vals[2], vals[3]);
    log.v.emplace_back(vals[4], vals[5], vals[6]);
    log.lambda.push_back({vals[7], vals[8], vals[9]});
    log.rates.emplace_back(vals[10], vals[11], vals[12]);
    log.accel.emplace_back(vals[13], vals[14], vals[15]);
    log.rpm.emplace_back(vals[16], vals[17], vals[18], vals[19]);
    log.rpm_cmd.emplace_back(vals[20], vals[21], vals[22], vals[23]);
    log.rates_cmd.emplace_back(vals[24], vals[25], vals[26]);
    log.thrust_cmd.push_back(vals[27]);
    ++row;
  }
  log.validate();
  return log;
}

FlightLog load_flight_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FlightLogError("cannot open flight log '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_flight_log(ss.str());
}

std::string format_flight_log(const FlightLog& log) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t c = 0; c < kFlightLogColumns.size(); ++c) {
    os << (c ? "," : "") << kFlightLogColumns[c];
  }
  os << '\n';
  for (std::size_t c = 0; c < kUnits.size(); ++c) os << (c ? "," : "") << kUnits[c];
  os << '\n';
  for (std::size_t k = 0; k < log.size(); ++k) {
    const double row[] = {
        log.t[k],           log.p[k].x(),         log.p[k].y(),         log.p[k].z(),
        log.v[k].x(),       log.v[k].y(),         log.v[k].z(),         log.lambda[k].phi,
        log.lambda[k].theta, log.lambda[k].psi,   log.rates[k].x(),     log.rates[k].y(),
        log.rates[k].z(),   log.accel[k].x(),     log.accel[k].y(),     log.accel[k].z(),
        log.rpm[k][0],      log.rpm[k][1],        log.rpm[k][2],        log.rpm[k][3],
        log.rpm_cmd[k][0],  log.rpm_cmd[k][1],    log.rpm_cmd[k][2],    log.rpm_cmd[k][3],
        log.rates_cmd[k].x(), log.rates_cmd[k].y(), log.rates_cmd[k].z(), log.thrust_cmd[k]};
    for (std::size_t c = 0; c < std::size(row); ++c) os << (c ? "," : "") << row[c];
    os << '\n';
  }
  return os.str();
}

void save_flight_log(const FlightLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FlightLogError("cannot write flight log '" + path.string() + "'");
  out << format_flight_log(log);
}

}  // namespace quadrace

#include "quadrace/dynamics_e2e.hpp"
#include "quadrace/dynamics_indi.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace quadrace;

namespace {

double rel_err(const Vec3& a, const Vec3& b) {
  return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

QuadStateE2E hover_e2e(const NominalParams& p) {
  QuadStateE2E x;
  x.p = Vec3(0, 0, -1.5);
  x.rpm = Vec4::Constant(p.hover_rpm());
  return x;
}

}  // namespace

TEST_CASE("nominal force and moment match independent formulas") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> w(3000, 11000), wd(-2e5, 2e5), v(-8, 8), r(-6, 6);
  const NominalParams k;
  for (int i = 0; i < 10000; ++i) {
    const Vec4 om(w(rng), w(rng), w(rng), w(rng));
    const Vec4 omd(wd(rng), wd(rng), wd(rng), wd(rng));
    const Vec3 vb(v(rng), v(rng), v(rng));
    const Vec3 rates(r(rng), r(rng), r(rng));
    REQUIRE(rel_err(nominal_force(om, vb, k), oracle::nominal_force(om, vb, k)) < 1e-12);
    REQUIRE(rel_err(nominal_moment(om, omd, vb, rates, k), oracle::nominal_moment(om, omd, vb, rates.z(), k)) < 1e-12);
  }
}

TEST_CASE("hover rpm balances gravity") {
  const NominalParams k;
  const double w = k.hover_rpm();
  CHECK(w > k.omega_min);
  CHECK(w < k.omega_max);
  CHECK(nominal_force(Vec4::Constant(w), Vec3::Zero(), k).z() == doctest::Approx(-kGravity).epsilon(1e-14));
}

TEST_CASE("hover is a fixed point of the E2E model") {
  const NominalParams k;
  const ResidualNets res = ResidualNets::zeros(k);
  QuadStateE2E x = hover_e2e(k);
  const Vec3 p0 = x.p;
  for (int i = 0; i < 100; ++i) x = step_e2e(x, x.rpm, 0.01, k, res);
  CHECK((x.p - p0).norm() < 1e-6);
  CHECK(x.v.norm() < 1e-6);
}

TEST_CASE("E2E derivative structure") {
  std::mt19937_64 rng(22);
  const NominalParams k;
  const ResidualNets res = ResidualNets::random(k, rng, 0.5);
  QuadStateE2E x;
  x.p = Vec3(1, 2, -3);
  x.v = Vec3(1.5, -0.5, 0.3);
  x.lambda = {0.2, -0.3, 1.1};
  x.rates = Vec3(0.4, -0.7, 0.2);
  x.rpm = Vec4(6000, 7000, 8000, 7500);
  x.m_ext = Vec3(0.01, -0.02, 0.003);
  x.f_ext = Vec3(0, 0, 0.4);
  const Vec4 u(9000, 5000, 7000, 11000);
  const QuadStateE2E d = e2e_derivative(x, u, k, res);

  const RotMat r = euler_to_rotmat(x.lambda);
  const Vec3 vb = r.transpose() * x.v;
  CHECK((d.p - x.v).norm() == 0.0);
  const Vec3 f = oracle::nominal_force(x.rpm, vb, k) + residual_force(x.rpm, vb, res) + x.f_ext;
  CHECK((d.v - (Vec3(0, 0, kGravity) + r * f)).norm() < 1e-12);
  const Vec4 wd = (u - x.rpm) / k.tau_motor;
  CHECK((d.rpm - wd).norm() < 1e-9);
  const Vec3 m = oracle::nominal_moment(x.rpm, wd, vb, x.rates.z(), k) + residual_moment(x.rpm, vb, x.rates, res) + x.m_ext;
  const Vec3 iw = k.inertia.cwiseProduct(x.rates);
  const Vec3 expect = (m - x.rates.cross(iw)).cwiseQuotient(k.inertia);
  CHECK((d.rates - expect).norm() < 1e-9 * (1 + expect.norm()));
  CHECK(d.m_ext.norm() == 0.0);
  CHECK(d.f_ext.norm() == 0.0);
}

TEST_CASE("residual nets") {
  const NominalParams k;
  SUBCASE("zero nets contribute nothing") {
    const ResidualNets z = ResidualNets::zeros(k);
    CHECK(residual_force(Vec4::Constant(7000), Vec3(1, 2, 3), z).norm() == 0.0);
    CHECK(residual_moment(Vec4::Constant(7000), Vec3(1, 2, 3), Vec3(1, 1, 1), z).norm() == 0.0);
  }
  SUBCASE("shapes and normalization") {
    std::mt19937_64 rng(23);
    const ResidualNets r = ResidualNets::random(k, rng);
    CHECK(r.thrust.sizes == std::vector<int>{7, 32, 1});
    CHECK(r.moment.sizes == std::vector<int>{10, 32, 3});
    CHECK(r.thrust.hidden == Activation::tanh);
    // omega_min -> -1, omega_max -> +1
    const double lo = (k.omega_min - r.thrust.in_shift[0]) * r.thrust.in_scale[0];
    const double hi = (k.omega_max - r.thrust.in_shift[0]) * r.thrust.in_scale[0];
    CHECK(lo == doctest::Approx(-1.0));
    CHECK(hi == doctest::Approx(1.0));
    CHECK(r.moment.in_scale[9] == doctest::Approx(0.1));
    CHECK(residual_force(Vec4::Constant(7000), Vec3(1, 2, 3), r).head<2>().norm() == 0.0);
  }
  SUBCASE("wrong shapes are rejected") {
    ResidualNets bad = ResidualNets::zeros(k);
    bad.thrust = MlpNet::zeros({7, 16, 1}, Activation::tanh);
    CHECK_THROWS_AS(bad.validate(), DimensionError);
  }
}

TEST_CASE("motor commands are clamped and speeds stay in range") {
  const NominalParams k;
  const ResidualNets res = ResidualNets::zeros(k);
  CHECK(clamp_rpm(Vec4(0, 20000, 5000, -1), k) == Vec4(3000, 11000, 5000, 3000));
  QuadStateE2E x = hover_e2e(k);
  for (int i = 0; i < 50; ++i) {
    x = step_e2e(x, Vec4(20000, 20000, 20000, 20000), 0.01, k, res);
    CHECK(x.rpm.maxCoeff() <= k.omega_max);
  }
}

TEST_CASE("motor step response follows the first-order lag") {
  const NominalParams k;
  const ResidualNets res = ResidualNets::zeros(k);
  for (double dt : {0.01, 0.001}) {
    QuadStateE2E x = hover_e2e(k);
    x.rpm = Vec4::Constant(4000);
    const Vec4 u = Vec4::Constant(10000);
    const int n = int(std::lround(0.3 / dt));
    const double a = dt / k.tau_motor;
    double worst = 0.0;
    for (int i = 1; i <= n; ++i) {
      x = step_e2e(x, u, dt, k, res);
      const double exact = 10000 - 6000 * std::exp(-i * dt / k.tau_motor);
      const double euler = 10000 - 6000 * std::pow(1 - a, i);
      CHECK(x.rpm[0] == doctest::Approx(euler).epsilon(1e-12));
      worst = std::max(worst, std::abs(x.rpm[0] - exact));
    }
    CHECK(worst <= 6000 * a / std::exp(1.0));
  }
}

TEST_CASE("E2E step rejects singular attitudes") {
  const NominalParams k;
  QuadStateE2E x = hover_e2e(k);
  x.lambda.theta = kPi / 2;
  CHECK_THROWS_AS(step_e2e(x, x.rpm, 0.01, k, ResidualNets::zeros(k)), SingularityError);
}

TEST_CASE("state flatten / unflatten round trip") {
  QuadStateE2E x;
  std::array<double, QuadStateE2E::kSize> flat;
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = double(i) + 0.5;
  x = QuadStateE2E::unflatten(flat);
  CHECK(x.flatten() == flat);
  CHECK(x.rpm[0] == 12.5);
  CHECK(x.f_ext.z() == 21.5);

  std::array<double, QuadStateIndi::kSize> fi;
  for (std::size_t i = 0; i < fi.size(); ++i) fi[i] = -double(i);
  CHECK(QuadStateIndi::unflatten(fi).flatten() == fi);
  CHECK(QuadStateIndi::unflatten(fi).thrust == -12.0);
}

// ---------------------------------------------------------------------------

TEST_CASE("INDI defaults") {
  const IndiParams p;
  CHECK(p.tau_rates == 0.03);
  CHECK(p.tau_thrust == 0.03);
  CHECK(p.d_x == 0.34);
  CHECK(p.d_y == 0.43);
}

TEST_CASE("INDI specific force and derivative") {
  const IndiParams p;
  CHECK((indi_specific_force(Vec3(2, -1, 5), 9.0, p) - Vec3(-0.68, 0.43, -9.0)).norm() < 1e-15);

  QuadStateIndi x;
  x.v = Vec3(1, 2, 0.5);
  x.lambda = {0.1, 0.2, -0.4};
  x.rates = Vec3(0.3, -0.1, 0.2);
  x.thrust = 8.0;
  const IndiCommand u{{1.0, -1.0, 0.5}, 12.0};
  const QuadStateIndi d = indi_derivative(x, u, p);
  const RotMat r = euler_to_rotmat(x.lambda);
  const Vec3 vb = r.transpose() * x.v;
  const Vec3 f(-p.d_x * vb.x(), -p.d_y * vb.y(), -x.thrust);
  CHECK((d.v - (Vec3(0, 0, kGravity) + r * f)).norm() < 1e-14);
  CHECK((d.rates - (u.rates - x.rates) / p.tau_rates).norm() < 1e-12);
  CHECK(d.thrust == doctest::Approx((12.0 - 8.0) / p.tau_thrust));
}

TEST_CASE("INDI commands are clamped") {
  const IndiParams p;
  const IndiCommand c = clamp_command({{5, -5, 1}, 20}, p);
  CHECK(c.rates == Vec3(3, -3, 1));
  CHECK(c.thrust == 15.0);
  CHECK(clamp_command({{0, 0, 0}, -2}, p).thrust == 0.0);
}

TEST_CASE("INDI rate and thrust step responses") {
  const IndiParams p;
  for (double dt : {0.01, 0.001}) {
    QuadStateIndi x;
    x.p = Vec3(0, 0, -10);
    x.thrust = 5.0;
    const IndiCommand u{{0.0, 0.0, 2.0}, 12.0};  // pure yaw keeps pitch away from the singularity
    const int n = int(std::lround(0.3 / dt));
    const double a = dt / p.tau_rates;
    double worst_r = 0.0, worst_t = 0.0;
    for (int i = 1; i <= n; ++i) {
      x = step_indi(x, u, dt, p);
      worst_r = std::max(worst_r, std::abs(x.rates.z() - 2.0 * (1 - std::exp(-i * dt / p.tau_rates))));
      worst_t = std::max(worst_t, std::abs(x.thrust - (12.0 - 7.0 * std::exp(-i * dt / p.tau_thrust))));
    }
    CHECK(worst_r <= 2.0 * a / std::exp(1.0));
    CHECK(worst_t <= 7.0 * a / std::exp(1.0));
  }
}

TEST_CASE("INDI free fall and hover") {
  const IndiParams p;
  QuadStateIndi x;
  x.thrust = kGravity;
  for (int i = 0; i < 100; ++i) x = step_indi(x, {{0, 0, 0}, kGravity}, 0.01, p);
  CHECK(x.p.norm() < 1e-12);
  QuadStateIndi y;
  for (int i = 0; i < 10; ++i) y = step_indi(y, {{0, 0, 0}, 0.0}, 0.01, p);
  CHECK(y.v.z() == doctest::Approx(0.1 * kGravity));
}

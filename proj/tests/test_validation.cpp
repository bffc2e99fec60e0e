#include "test_helpers.hpp"

#include <boost/math/special_functions/bessel.hpp>
#include <gtest/gtest.h>

#include "hdiff/validation.hpp"

using namespace hdiff;

TEST(SphereBins, UniformDirectionsFillBinsEvenly) {
  for (std::size_t d : {2u, 3u, 4u, 7u}) {
    Rng rng(40 + d);
    std::vector<double> counts(12, 0.0);
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      const std::size_t b = detail::sphere_bin(rng.unit_vector(d));
      ASSERT_LT(b, 12u);
      counts[b] += 1.0;
    }
    const double e = n / 12.0, sd = std::sqrt(n * (1.0 / 12.0) * (11.0 / 12.0));
    for (double c : counts) EXPECT_NEAR(c, e, 5.0 * sd) << "d = " << d;
  }
}

TEST(ControlCost, ZeroPerturbationReproducesTheBridgePath) {
  const auto k = GreenKernel::brownian(3, 1.0);
  const Vec target{1.0, 0.0, 0.0}, start{0.0, 0.0, 0.0};
  const double dt = 1e-3, radius = 0.1;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto run = detail::control_cost(k, target, start, Vec(3, 0.0), radius, dt, seed, 1'000'000);
    const Path p = simulate(HSpec::bridge(k, target), start, KillRule::hit_ball(target, radius), dt, seed);
    ASSERT_EQ(p.kill_reason, KillReason::HitKill);
    double cost = 0.0;
    for (std::size_t i = 0; i < p.kill_index; ++i)
      cost += (1.0 + 0.5 * squared_norm(grad_log_green(k, p.state(i), target))) * dt;
    cost -= log_green(k, p.final_state(), target);
    EXPECT_FALSE(run.capped);
    EXPECT_NEAR(run.cost, cost, 1e-9 * std::max(1.0, std::abs(cost)));
  }
}

TEST(ControlCheck, SmallRunPassesAndReports) {
  const auto fwd = HSpec::bridge(GreenKernel::brownian(2, 0.5), Vec{2.0, 0.0});
  ControlCheckConfig cfg;
  cfg.runs = 500;
  cfg.dt = 1e-3;
  cfg.seed = 3;
  const auto rep = check_control_optimality(fwd, Vec{0.0, 0.0}, cfg);
  EXPECT_TRUE(rep.passed) << rep.details.dump();
  EXPECT_EQ(rep.details["scales"].size(), 5u);
  EXPECT_NEAR(rep.details["log_h_start"].get<double>(),
              log_green(fwd.kernel, Vec{0.0, 0.0}, Vec{2.0, 0.0}), 1e-15);
  for (const auto& s : rep.details["scales"]) {
    if (s["scale"].get<double>() != 0.0) {
      EXPECT_GT(s["gap"].get<double>(), 0.0);
    }
  }
}

TEST(ControlCheck, Errors) {
  const auto k = GreenKernel::brownian(2, 1.0);
  EXPECT_THROW(check_control_optimality(HSpec::constant(k), Vec{0.0, 0.0}, {}), PreconditionError);
  ControlCheckConfig no_zero;
  no_zero.scales = {0.5, 1.0};
  EXPECT_THROW(check_control_optimality(HSpec::bridge(k, Vec{1.0, 0.0}), Vec{0.0, 0.0}, no_zero), PreconditionError);
  EXPECT_THROW(check_control_optimality(HSpec::bridge(k, Vec{1.0, 0.0}), Vec{0.95, 0.0}, {}), PreconditionError);
}

TEST(OuApprox, ReportsDeviationAgainstBesselOracle) {
  const std::vector<double> radii{0.0, 0.01, 3.0};
  const auto rep = check_ou_approx(4, 0.5, radii, 0.05);
  const auto& rows = rep.details["radii"];
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["drift"].get<double>(), 0.0);
  EXPECT_EQ(rows[0]["relative_deviation"].get<double>(), 0.0);
  // |b| = sqrt(2r) I_{nu+1}(z) / I_nu(z), nu = 1, z = rho sqrt(2r)
  const double z = 3.0;
  const double exact = boost::math::cyl_bessel_i(2.0, z) / boost::math::cyl_bessel_i(1.0, z);
  EXPECT_NEAR(rows[2]["drift"].get<double>(), exact, 1e-12);
  EXPECT_NEAR(rows[2]["relative_deviation"].get<double>(), std::abs(exact - 0.75) / 0.75, 1e-12);
  EXPECT_FALSE(rep.passed);
  EXPECT_TRUE(check_ou_approx(4, 0.5, std::vector<double>{0.0, 0.01}, 0.05).passed);
}

TEST(EndpointCheck, ConstantAndBridgePass) {
  EndpointCheckConfig cfg;
  cfg.runs = 2000;
  cfg.dt = 1e-2;
  cfg.seed = 5;
  const auto k = GreenKernel::brownian(2, 0.5);
  const auto c = check_endpoint_law(HSpec::constant(k), Vec{0.0, 0.0}, cfg);
  EXPECT_TRUE(c.passed) << c.details.dump();
  cfg.runs = 200;
  cfg.dt = 1e-3;
  const auto b = check_endpoint_law(HSpec::bridge(k, Vec{1.0, 1.0}), Vec{0.0, 0.0}, cfg);
  EXPECT_TRUE(b.passed) << b.details.dump();
  EXPECT_LE(b.details["max_endpoint_distance"].get<double>(), 0.05);
}

TEST(EndpointCheck, OffCentreSphereStartIsRejected) {
  // from a start near the sphere the exit law is far from uniform
  EndpointCheckConfig cfg;
  cfg.runs = 1000;
  cfg.dt = 1e-3;
  cfg.seed = 6;
  const auto rep = check_endpoint_law(HSpec::sphere(GreenKernel::brownian(3, 0.5), 2.0), Vec{1.5, 0.0, 0.0}, cfg);
  EXPECT_FALSE(rep.passed);
  EXPECT_LT(rep.details["p_value"].get<double>(), 1e-6);
  EXPECT_EQ(to_json(rep)["check"], "endpoint-law/sphere");
}

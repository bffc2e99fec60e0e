#include "test_helpers.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "hdiff/kernels.hpp"
#include "hdiff/rng.hpp"

using namespace hdiff;
using hdiff::testing::fd_gradient;
using hdiff::testing::random_point;
using hdiff::testing::relative_error;
using hdiff::testing::unit;

namespace {

// int_0^inf e^{-rt} (2 pi t)^{-d/2} exp(-rho^2 / 2t) dt by tanh-sinh on [0, inf).
double heat_kernel_green(std::size_t d, double r, double rho) {
  boost::math::quadrature::exp_sinh<double> integrator;
  const double dd = static_cast<double>(d);
  auto f = [&](double t) {
    if (t <= 0.0) return 0.0;
    return std::exp(-r * t - 0.5 * dd * std::log(2.0 * M_PI * t) - rho * rho / (2.0 * t));
  };
  return integrator.integrate(f, 1e-14);
}

}  // namespace

TEST(GreenKernel, ThreeDimensionalClosedForm) {
  const auto k = GreenKernel::brownian(3, 0.5);
  const Vec x{0.3, -0.2, 1.0}, y{0.3, -0.2, 0.0};
  EXPECT_NEAR(log_green(k, x, y), std::log(std::exp(-1.0) / (2.0 * M_PI)), 1e-13);
  EXPECT_NEAR(log_green(k, x, y), -2.8379, 1e-4);
}

TEST(GreenKernel, MatchesHeatKernelQuadrature) {
  for (std::size_t d : {1u, 2u, 3u, 5u}) {
    for (double r : {0.1, 0.5, 2.0}) {
      const auto k = GreenKernel::brownian(d, r);
      for (double rho : {0.1, 0.4, 1.0, 2.0, 3.0}) {
        const double expected = heat_kernel_green(d, r, rho);
        const double got = std::exp(log_green(k, unit(d, 0, rho), Vec(d, 0.0)));
        EXPECT_LT(std::abs(got - expected) / expected, 1e-8) << "d=" << d << " r=" << r << " rho=" << rho;
      }
    }
  }
}

TEST(GreenKernel, DecreasingInDistance) {
  const auto k = GreenKernel::brownian(2, 1.0);
  const Vec o(2, 0.0);
  EXPECT_GT(log_green(k, unit(2, 0, 0.5), o), log_green(k, unit(2, 0, 1.0), o));
  for (std::size_t d : {1u, 2u, 3u, 7u}) {
    const auto kd = GreenKernel::brownian(d, 0.5);
    double prev = INFINITY;
    for (double rho = 0.01; rho < 20.0; rho *= 1.5) {
      const double v = log_green(kd, unit(d, 0, rho), Vec(d, 0.0));
      EXPECT_LT(v, prev);
      prev = v;
    }
  }
}

TEST(GreenKernel, SymmetryBothModes) {
  std::mt19937_64 gen(11);
  const auto bm = GreenKernel::brownian(3, 0.7);
  const auto ou = GreenKernel::ornstein_uhlenbeck(2, 0.5, 1.3);
  for (int i = 0; i < 1000; ++i) {
    const Vec x = random_point(gen, 3), y = random_point(gen, 3);
    EXPECT_LT(std::abs(log_green(bm, x, y) - log_green(bm, y, x)), 1e-12);
    const Vec a = random_point(gen, 2), b = random_point(gen, 2);
    EXPECT_LT(std::abs(log_green(ou, a, b) - log_green(ou, b, a)), 1e-12);
  }
}

TEST(GreenKernel, QuadratureModeMatchesAnalyticForBrownianMotion) {
  for (std::size_t d : {1u, 2u, 3u, 6u}) {
    auto q = GreenKernel::brownian(d, 0.5);
    q.mode = KernelMode::Quadrature;
    const auto a = GreenKernel::brownian(d, 0.5);
    for (double rho : {0.1, 0.5, 1.5, 3.0}) {
      const Vec x = unit(d, 0, rho), y(d, 0.0);
      EXPECT_NEAR(log_green(q, x, y), log_green(a, x, y), 1e-9 * std::abs(log_green(a, x, y)) + 1e-10);
    }
  }
}

TEST(GreenKernel, OuWithVanishingThetaApproachesBrownian) {
  for (std::size_t d : {2u, 3u}) {
    const auto ou = GreenKernel::ornstein_uhlenbeck(d, 0.5, 1e-6);
    const auto bm = GreenKernel::brownian(d, 0.5);
    for (double rho = 0.1; rho <= 3.0 + 1e-12; rho += 0.1) {
      Vec x(d, 0.0), y(d, 0.0);
      x[0] = 0.5 * rho;
      y[0] = -0.5 * rho;
      const double a = log_green(bm, x, y);
      EXPECT_LT(std::abs(log_green(ou, x, y) - a) / std::abs(a), 1e-4) << "rho=" << rho;
    }
  }
}

TEST(GreenKernel, GradientThreeDimensionalExample) {
  const auto k = GreenKernel::brownian(3, 0.5);
  const Vec y{1.0, 2.0, 3.0};
  const Vec x{2.0, 2.0, 3.0};
  const Vec g = grad_log_green(k, x, y);
  EXPECT_NEAR(g[0], -2.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-15);
  EXPECT_NEAR(g[2], 0.0, 1e-15);
}

TEST(GreenKernel, GradientIsRadial) {
  std::mt19937_64 gen(3);
  for (std::size_t d : {2u, 4u}) {
    const auto k = GreenKernel::brownian(d, 0.8);
    for (int i = 0; i < 50; ++i) {
      const Vec x = random_point(gen, d), y = random_point(gen, d);
      const Vec g = grad_log_green(k, x, y);
      const Vec u = difference(x, y);
      // remove the radial component; the remainder must vanish
      Vec perp = g;
      axpy(-dot(g, u) / dot(u, u), u, perp);
      EXPECT_LT(norm(perp), 1e-12 * norm(g));
      EXPECT_LT(dot(g, u), 0.0);
    }
  }
}

TEST(GreenKernel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(5);
  std::vector<GreenKernel> kernels = {GreenKernel::brownian(1, 0.5), GreenKernel::brownian(2, 0.5),
                                      GreenKernel::brownian(3, 1.5), GreenKernel::brownian(5, 0.2),
                                      GreenKernel::brownian(12, 0.5), GreenKernel::ornstein_uhlenbeck(2, 0.5, 1.0),
                                      GreenKernel::ornstein_uhlenbeck(3, 0.2, 0.5)};
  for (const auto& k : kernels) {
    for (int i = 0; i < 60; ++i) {
      const Vec x = random_point(gen, k.dim()), y = random_point(gen, k.dim());
      if (distance(x, y) < 0.05) continue;
      const Vec g = grad_log_green(k, x, y);
      const Vec fd = fd_gradient([&](std::span<const double> z) { return log_green(k, z, y); }, x);
      EXPECT_LT(relative_error(g, fd), 1e-5) << "dim " << k.dim();
    }
  }
}

TEST(GreenKernel, ResolventIdentityByMonteCarlo) {
  // r int G_r(x, y) dy = 1, with y ~ N(x, s^2 I) as proposal
  for (std::size_t d : {1u, 2u, 3u}) {
    const double r = 0.5, s = 1.5;
    const auto k = GreenKernel::brownian(d, r);
    Rng rng(99, d);
    const Vec x(d, 0.2);
    const std::size_t n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Vec z(d);
      rng.fill_normal(z);
      Vec y = x;
      axpy(s, z, y);
      const double logq = -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * s * s) - 0.5 * squared_norm(z);
      const double w = r * std::exp(log_green(k, x, y) - logq);
      sum += w;
      sum2 += w * w;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - 1.0), 3.0 * se) << "d=" << d << " mean=" << mean << " se=" << se;
  }
}

TEST(GreenKernel, Errors) {
  const auto k = GreenKernel::brownian(2, 0.5);
  const Vec x{1.0, 1.0};
  EXPECT_THROW(log_green(k, x, x), CoincidentPointsError);
  EXPECT_THROW(grad_log_green(k, x, Vec{1.0 + 1e-11, 1.0}), CoincidentPointsError);
  EXPECT_NO_THROW(log_green(k, x, Vec{1.0 + 1e-9, 1.0}));

  auto bad = GreenKernel::ornstein_uhlenbeck(2, 0.5, 1.0);
  bad.quad_t_max = 0.5;  // e^{-r t_max} far from negligible
  EXPECT_THROW(log_green(bad, x, Vec{0.0, 0.0}), ConvergenceError);

  auto analytic_ou = GreenKernel::ornstein_uhlenbeck(2, 0.5, 1.0);
  analytic_ou.mode = KernelMode::Analytic;
  EXPECT_THROW(analytic_ou.validate(), PreconditionError);
  EXPECT_THROW(GreenKernel::brownian(0, 0.5).validate(), PreconditionError);
  EXPECT_THROW(GreenKernel::brownian(2, 0.0).validate(), PreconditionError);
  EXPECT_THROW(GreenKernel::ornstein_uhlenbeck(2, 0.5, 0.0).validate(), PreconditionError);
  EXPECT_THROW(log_green(k, Vec{1.0}, Vec{0.0, 0.0}), PreconditionError);
}

TEST(GreenKernel, OuBaseDrift) {
  const auto k = GreenKernel::ornstein_uhlenbeck(3, 0.5, 2.0);
  const Vec b = base_drift(k.process, Vec{1.0, -2.0, 0.5});
  EXPECT_EQ(b, (Vec{-2.0, 4.0, -1.0}));
  const Vec z = base_drift(GreenKernel::brownian(2, 1.0).process, Vec{3.0, 4.0});
  EXPECT_EQ(z, (Vec{0.0, 0.0}));
}

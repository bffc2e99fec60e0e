#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include "hdiff/applications.hpp"

using namespace hdiff;

namespace {

PointCloud two_clusters(int per_cluster, double radius, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud pc(2);
  for (int c = 0; c < 2; ++c) {
    const double cx = c == 0 ? -2.0 : 2.0;
    for (int i = 0; i < per_cluster; ++i) {
      const double a = 2.0 * M_PI * u(gen), r = radius * std::sqrt(u(gen));
      pc.add_labelled(Vec{cx + r * std::cos(a), r * std::sin(a)}, c);
    }
  }
  return pc;
}

}  // namespace

TEST(Anomaly, PointsInsideTheSupportAreNeverAnomalous) {
  const auto data = PointCloud::from_points({{0.0, 0.0}});
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(2, 0.5)));
  const auto support = SupportEstimate::build(data, 0.1);
  const auto r = anomaly_score(Vec{0.05, 0.0}, back, support, 10, 1e-3, 1, 0.0);
  EXPECT_TRUE(r.in_support);
  EXPECT_FALSE(r.is_anomaly);
  EXPECT_EQ(r.mean_lifetime, 0.0);
}

TEST(Anomaly, SingleRunEqualsOneGeneration) {
  const auto data = PointCloud::from_points({{0.0, 0.0}});
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(2, 0.5)));
  const auto support = SupportEstimate::build(data, 0.1);
  const Vec x{1.0, 0.5};
  const auto r = anomaly_score(x, back, support, 1, 1e-3, 17, 0.5);
  const auto g = generate(back, support, x, 1e-3, stream_seed(17, 0));
  EXPECT_EQ(r.mean_lifetime, g.lifetime);
  EXPECT_EQ(r.is_anomaly, g.lifetime > 0.5);
  EXPECT_EQ(r.failures, 0u);
}

TEST(Anomaly, LifetimeGrowsWithDistance) {
  const auto data = PointCloud::from_points({{0.0, 0.0, 0.0}});
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(3, 0.5)));
  const auto support = SupportEstimate::build(data, 0.1);
  double prev = 0.0;
  for (double dist : {0.5, 1.0, 2.0, 4.0}) {
    const auto r = anomaly_score(Vec{dist, 0.0, 0.0}, back, support, 100, 2e-3, 5, INFINITY);
    EXPECT_GT(r.mean_lifetime, prev);
    prev = r.mean_lifetime;
  }
}

TEST(Anomaly, CalibratedThresholdFlagsFarPoints) {
  const auto data = two_clusters(20, 0.3, 2);
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(2, 1.0)));
  const auto support = SupportEstimate::build(data, 0.1);
  std::vector<Vec> probes;
  for (std::size_t i = 0; i < data.size(); i += 4) {
    Vec p(data.point(i).begin(), data.point(i).end());
    p[1] += 0.2;
    probes.push_back(p);
  }
  const double t = calibrate_threshold(probes, back, support, 20, 1e-3, 3);
  EXPECT_GT(t, 0.0);
  const auto far = anomaly_score(Vec{0.0, 4.0}, back, support, 20, 1e-3, 4, t);
  EXPECT_TRUE(far.is_anomaly);
  const auto near = anomaly_score(probes.front(), back, support, 20, 1e-3, 3, t);
  EXPECT_FALSE(near.is_anomaly);
}

TEST(Anomaly, CappedRunsCountAtTheCap) {
  const auto data = PointCloud::from_points({{0.0, 0.0}});
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(2, 0.5)));
  const auto support = SupportEstimate::build(data, 0.1);
  const auto r = anomaly_score(Vec{5.0, 0.0}, back, support, 4, 1e-3, 1, 0.001, 1, 20);
  EXPECT_EQ(r.failures, 4u);
  EXPECT_NEAR(r.mean_lifetime, 0.02, 1e-12);
  EXPECT_TRUE(r.is_anomaly);
  EXPECT_THROW(anomaly_score(Vec{5.0, 0.0}, back, support, 0, 1e-3, 1, 1.0), PreconditionError);
}

TEST(Classify, ProbesNearAClusterGetItsLabel) {
  const auto data = two_clusters(20, 0.3, 3);
  const auto back = build_exact_backward(data, HSpec::constant(GreenKernel::brownian(2, 1.0)));
  const auto support = SupportEstimate::build(data, 0.1);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 0.3);
  int correct = 0, total = 0;
  for (int i = 0; i < 60; ++i) {
    const int c = i % 2;
    const Vec x{(c == 0 ? -2.0 : 2.0) + n(gen), n(gen)};
    const auto r = classify(x, back, support, 1e-3, stream_seed(5, i));
    ASSERT_TRUE(r.ok());
    ++total;
    if (*r.label == c) ++correct;
  }
  EXPECT_GE(correct, total * 95 / 100);
}

TEST(Classify, InsideTheSupportUsesTheNearestClass) {
  PointCloud pc(2);
  pc.add_labelled(Vec{0.0, 0.0}, 3);
  pc.add_labelled(Vec{1.0, 0.0}, 7);
  const auto back = build_exact_backward(pc, HSpec::constant(GreenKernel::brownian(2, 1.0)));
  const auto s = SupportEstimate::build(pc, 0.2);
  const auto r = classify(Vec{0.9, 0.1}, back, s, 1e-3, 1);
  EXPECT_TRUE(r.in_support);
  EXPECT_EQ(*r.label, 7);
  EXPECT_EQ(r.lifetime, 0.0);
  EXPECT_THROW(classify(Vec{0.5, 0.5}, back, SupportEstimate::build(PointCloud::from_points({{0.0, 0.0}}), 0.1), 1e-3, 1),
               PreconditionError);
}

TEST(Classify, SymmetricProbeIsAFairCoin) {
  const auto data = two_clusters(10, 0.3, 5);
  PointCloud sym(2);
  // mirror cluster 0 onto cluster 1 so that x = 0 is exactly symmetric
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.label(i) == 0) {
      const auto p = data.point(i);
      sym.add_labelled(Vec{p[0], p[1]}, 0);
      sym.add_labelled(Vec{-p[0], p[1]}, 1);
    }
  const auto back = build_exact_backward(sym, HSpec::constant(GreenKernel::brownian(2, 1.0)));
  const auto support = SupportEstimate::build(sym, 0.1);
  const auto post = class_posterior(Vec{0.0, 0.0}, back, support, 600, 2e-3, 6);
  ASSERT_TRUE(post.exact.has_value());
  EXPECT_NEAR((*post.exact)[0], 0.5, 1e-12);
  EXPECT_NEAR(post.frequencies[0], 0.5, 0.06);
  EXPECT_NEAR(post.frequencies[0] + post.frequencies[1], 1.0, 1e-12);
  EXPECT_EQ(post.labels, (std::vector<std::int64_t>{0, 1}));
}

TEST(Classify, SingleClassAlwaysWins) {
  PointCloud pc(2);
  pc.add_labelled(Vec{0.0, 0.0}, 4);
  pc.add_labelled(Vec{1.0, 0.0}, 4);
  const auto back = build_exact_backward(pc, HSpec::constant(GreenKernel::brownian(2, 1.0)));
  const auto s = SupportEstimate::build(pc, 0.1);
  const auto post = class_posterior(Vec{0.5, 1.0}, back, s, 30, 1e-3, 7);
  EXPECT_EQ(post.labels, (std::vector<std::int64_t>{4}));
  EXPECT_EQ(post.frequencies, (std::vector<double>{1.0}));
  EXPECT_NEAR((*post.exact)[0], 1.0, 1e-12);
}

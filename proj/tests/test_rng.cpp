#include "calmix/rng.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <vector>

#include "oracles.hpp"

namespace {

using calmix::Rng;

TEST(Rng, SameSeedAndTagReproduce) {
  Rng a = Rng::stream(42, "shuffle");
  Rng b = Rng::stream(42, "shuffle");
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentTagsDiverge) {
  Rng a = Rng::stream(42, "shuffle");
  Rng b = Rng::stream(42, "lambda");
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_LT(same, 4);
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a = Rng::stream(1, "init");
  Rng b = Rng::stream(2, "init");
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_LT(same, 4);
}

TEST(Rng, UniformStaysInHalfOpenUnitInterval) {
  Rng r(7);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
  EXPECT_LT(lo, 0.001);
  EXPECT_GT(hi, 0.999);
}

TEST(Rng, UniformIndexCoversRangeWithoutBias) {
  Rng r(11);
  std::vector<int> counts(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts.at(r.uniform_index(5));
  for (int c : counts) EXPECT_NEAR(c, n / 5.0, 0.05 * n);
  EXPECT_EQ(r.uniform_index(1), 0u);
  EXPECT_THROW(r.uniform_index(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng r(13);
  std::vector<double> xs(100000);
  for (double& x : xs) x = r.normal();
  EXPECT_NEAR(oracles::mean(xs), 0.0, 0.02);
  EXPECT_NEAR(oracles::variance(xs), 1.0, 0.03);
}

TEST(Rng, GammaMomentsMatchShapeParameter) {
  for (double shape : {0.4, 1.0, 2.5}) {
    Rng r(17);
    std::vector<double> xs(100000);
    for (double& x : xs) {
      x = r.gamma(shape);
      ASSERT_GE(x, 0.0);
    }
    EXPECT_NEAR(oracles::mean(xs), shape, 0.03) << "shape " << shape;
    EXPECT_NEAR(oracles::variance(xs), shape, 0.08) << "shape " << shape;
  }
  Rng r(17);
  EXPECT_THROW(r.gamma(0.0), std::invalid_argument);
  EXPECT_THROW(r.gamma(-1.0), std::invalid_argument);
}

TEST(Rng, BetaSymmetricMomentsAndSupport) {
  Rng r(19);
  std::vector<double> xs(100000);
  for (double& x : xs) {
    x = r.beta(0.4, 0.4);
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 1.0);
  }
  // Beta(0.4, 0.4): mean 1/2, variance 0.24/1.728 = 0.1388...
  EXPECT_NEAR(oracles::mean(xs), 0.5, 0.01);
  EXPECT_NEAR(oracles::variance(xs), 0.4 * 0.4 / (0.8 * 0.8 * 1.8), 0.005);
}

TEST(Rng, BetaMatchesAnalyticCdf) {
  Rng r(23);
  std::vector<double> xs(100000);
  for (double& x : xs) x = r.beta(0.4, 0.4);
  const double ks = oracles::ks_statistic(
      xs, [](double x) { return oracles::beta_cdf(0.4, 0.4, x); });
  EXPECT_LT(ks, 0.01);
}

TEST(Rng, BetaAsymmetricMatchesAnalyticCdf) {
  Rng r(29);
  std::vector<double> xs(100000);
  for (double& x : xs) x = r.beta(2.0, 5.0);
  const double ks = oracles::ks_statistic(
      xs, [](double x) { return oracles::beta_cdf(2.0, 5.0, x); });
  EXPECT_LT(ks, 0.01);
  EXPECT_THROW(r.beta(0.0, 1.0), std::invalid_argument);
}

TEST(Rng, ShuffleIsDeterministicPermutation) {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  Rng a(31);
  a.shuffle(v);
  std::set<int> seen(v.begin(), v.end());
  EXPECT_EQ(seen.size(), 100u);

  std::vector<int> w(100);
  std::iota(w.begin(), w.end(), 0);
  Rng b(31);
  b.shuffle(w);
  EXPECT_EQ(v, w);
}

TEST(Rng, StreamsDrawIndependently) {
  // Interleaving draws from one stream must not change another stream.
  Rng a1 = Rng::stream(5, "a");
  Rng b = Rng::stream(5, "b");
  std::vector<uint64_t> interleaved;
  for (int i = 0; i < 10; ++i) {
    interleaved.push_back(a1.next_u64());
    (void)b.next_u64();
  }
  Rng a2 = Rng::stream(5, "a");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(interleaved[i], a2.next_u64());
}

}  // namespace

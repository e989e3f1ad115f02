#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ttsa/rng.hpp"
#include "ttsa/stats.hpp"

using namespace ttsa;

namespace {

Matrix rows(std::vector<std::vector<double>> r) { return matrix_from_rows(r); }

// Inverse of the standard normal CDF by bisection; only used to build test inputs.
double normal_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (standard_normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> normals(std::uint64_t seed, std::uint64_t stream, std::size_t n) {
  CounterRng rng(seed, stream);
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

}  // namespace

TEST(EmpiricalCov, SmallExamples) {
  const auto est = empirical_cov(rows({{1, 0}, {-1, 0}}));
  EXPECT_EQ(est.matrix, rows({{1, 0}, {0, 0}}));
  EXPECT_EQ(est.n_samples, 2u);
  EXPECT_EQ(empirical_cov(Matrix::Zero(5, 3)).matrix, Matrix::Zero(3, 3));
  try {
    empirical_cov(Matrix::Zero(1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
  }
}

TEST(EmpiricalCov, GaussianDiagonal) {
  const Eigen::Index r = 100000;
  CounterRng rng(17, 0);
  Matrix s(r, 2);
  for (Eigen::Index i = 0; i < r; ++i) {
    s(i, 0) = std::sqrt(2.0) * rng.normal();
    s(i, 1) = std::sqrt(3.0) * rng.normal();
  }
  const auto est = empirical_cov(s);
  const Matrix want = rows({{2, 0}, {0, 3}});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      EXPECT_LT(std::abs(est.matrix(i, j) - want(i, j)), 3.0 * est.std_error(i, j)) << i << j;
  // Var(u^2) = 2 sigma^4, so SE(Sigma_00) = 2 sqrt(2 / R).
  EXPECT_NEAR(est.std_error(0, 0), 2.0 * std::sqrt(2.0 / r), 0.05 * est.std_error(0, 0));
}

TEST(EmpiricalCov, PermutationInvariant) {
  CounterRng rng(18, 0);
  Matrix s = Matrix::NullaryExpr(64, 3, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
  std::vector<Eigen::Index> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::rotate(order.begin(), order.begin() + 13, order.end());
  Matrix permuted(64, 3);
  for (Eigen::Index i = 0; i < 64; ++i) permuted.row(i) = s.row(order[static_cast<std::size_t>(i)]);
  EXPECT_LT((empirical_cov(s).matrix - empirical_cov(permuted).matrix).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MeanReport, FlagsOffsetMean) {
  CounterRng rng(19, 0);
  Matrix s = Matrix::NullaryExpr(10000, 2, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
  EXPECT_FALSE(mean_report(s).flagged);
  s.col(1).array() += 0.2;
  const auto rep = mean_report(s);
  EXPECT_TRUE(rep.flagged);
  EXPECT_GT(rep.max_abs_z, 4.0);
}

TEST(RateSlope, ProportionalInputs) {
  std::vector<double> steps, lin, quad;
  std::vector<std::size_t> ns;
  for (std::size_t n = 256; n <= 16384; n *= 2) {
    const double a = std::pow(n + 1.0, -0.6);
    ns.push_back(n);
    steps.push_back(a);
    lin.push_back(3.0 * a);
    quad.push_back(3.0 * a * a);
  }
  const auto f1 = rate_slope(ns, lin, steps);
  EXPECT_NEAR(f1.slope, 1.0, 1e-12);
  EXPECT_NEAR(f1.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(f1.intercept, std::log(3.0), 1e-10);
  EXPECT_NEAR(rate_slope(quad, steps).slope, 2.0, 1e-12);
}

TEST(RateSlope, Errors) {
  try {
    rate_slope({1.0, 2.0, 0.0, 4.0}, {1.0, 0.5, 0.25, 0.125});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveInput);
  }
  EXPECT_THROW(rate_slope({1.0, 2.0, 3.0}, {1.0, 0.5, 0.25}), Error);
  EXPECT_THROW(rate_slope({1.0, 2.0, 3.0, 4.0}, {1.0, 0.5, 0.25}), Error);
}

TEST(Kolmogorov, SurvivalFunction) {
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
  // Reference values of 1 - K(lambda) from scipy's kstwobign.
  EXPECT_NEAR(kolmogorov_survival(0.5), 0.9639452436648751, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.0), 0.26999967167735456, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.36), 0.049485876755377876, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.63), 0.009846364888486529, 1e-12);
  // The two series agree where they switch.
  EXPECT_NEAR(kolmogorov_survival(1.0 - 1e-12), kolmogorov_survival(1.0), 1e-10);
}

TEST(Ks, SinglePoint) { EXPECT_DOUBLE_EQ(ks_statistic({0.0}, standard_normal_cdf), 0.5); }

TEST(Ks, QuantileConstruction) {
  const int n = 1000;
  std::vector<double> q;
  for (int i = 1; i <= n; ++i) q.push_back(normal_quantile((i - 0.5) / n));
  EXPECT_LE(ks_statistic(q, standard_normal_cdf), 0.5 / n + 1e-12);
  const auto v = ks_test_1d(q, standard_normal_cdf);
  EXPECT_TRUE(v.pass);
  EXPECT_NEAR(*v.p_value, 1.0, 1e-12);
}

TEST(Ks, GoldenStatistic) {
  // Frozen from tests/oracles/golden.py (seed 2024, stream 0, 1e5 draws).
  EXPECT_NEAR(ks_statistic(normals(2024, 0, 100000), standard_normal_cdf), 0.0032711919072335727, 1e-15);
}

TEST(Ks, NullPValuesRoughlyUniform) {
  int below = 0;
  for (std::uint64_t trial = 0; trial < 200; ++trial)
    if (*ks_test_1d(normals(31, trial, 2000), standard_normal_cdf).p_value < 0.01) ++below;
  EXPECT_GE(below, 1);
  EXPECT_LE(below, 8);
}

TEST(Ks, DetectsShiftAndRejectsTinySamples) {
  auto s = normals(32, 0, 5000);
  for (double& v : s) v += 0.1;
  const auto v = ks_test_1d(s, standard_normal_cdf, 0.01, "shifted");
  EXPECT_EQ(v.name, "shifted");
  EXPECT_FALSE(v.pass);
  try {
    ks_test_1d({0.0, 1.0}, standard_normal_cdf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSamples);
  }
}

TEST(Autocov, Examples) {
  FddSamples fdd;
  const double t = 0.3, s = 0.5;
  fdd.times = {t, t + s};
  fdd.replica_ids = {0, 1};
  fdd.by_time = {rows({{std::exp(-t)}, {-std::exp(-t)}}), rows({{std::exp(-(t + s))}, {-std::exp(-(t + s))}})};
  EXPECT_NEAR(autocov_estimate(fdd, 0, 1)(0, 0), std::exp(-t) * std::exp(-(t + s)), 1e-15);
  EXPECT_THROW(autocov_estimate(fdd, 0, 2), Error);
}

TEST(Autocov, LagZeroMatchesEmpiricalCovExactly) {
  CounterRng rng(33, 0);
  FddSamples fdd;
  fdd.times = {0.0};
  fdd.by_time = {Matrix::NullaryExpr(500, 3, [&](Eigen::Index, Eigen::Index) { return rng.normal(); })};
  EXPECT_EQ(autocov_estimate(fdd, 0, 0), empirical_cov(fdd.by_time[0]).matrix);
}

TEST(Verdict, ThresholdRule) {
  EXPECT_TRUE(threshold_verdict("a", 0.05, 0.1).pass);
  EXPECT_TRUE(threshold_verdict("a", 0.1, 0.1).pass);
  EXPECT_FALSE(threshold_verdict("a", 0.11, 0.1).pass);
  EXPECT_FALSE(threshold_verdict("a", NAN, 0.1).pass);
}

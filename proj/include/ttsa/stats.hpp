#pragma once

// Ensemble estimators and pass/fail verdicts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/trajectory.hpp"

namespace ttsa {

/// Raw second moment sum_i u_i u_i^T / R (no centering) with per-entry
/// standard errors; for a sample mean the jackknife SE equals sd / sqrt(R).
struct CovEstimate {
  Matrix matrix;
  Matrix std_error;
  std::size_t n_samples = 0;
};

struct MeanReport {
  Vector mean;
  Vector std_error;
  double max_abs_z = 0.0;
  bool flagged = false;  // some |mean| > 4 SE
};

struct TestVerdict {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  std::optional<double> p_value;
  std::string rule;  // how pass follows from statistic / threshold / p_value
  bool pass = false;
  std::map<std::string, std::string> context;
};

/// E[a_i b_i^T] over rows, with per-entry standard errors. Rows are
/// accumulated in index order so results are reproducible bit for bit.
inline CovEstimate cross_moment(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), ErrorCode::DimensionMismatch, "cross moment row counts differ");
  const Eigen::Index r = a.rows();
  require(r >= 2, ErrorCode::InsufficientSamples, "need at least 2 replicas, got " + std::to_string(r));
  CovEstimate est;
  est.n_samples = static_cast<std::size_t>(r);
  est.matrix = Matrix::Zero(a.cols(), b.cols());
  Matrix sq = Matrix::Zero(a.cols(), b.cols());
  for (Eigen::Index k = 0; k < r; ++k) {
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
      for (Eigen::Index j = 0; j < b.cols(); ++j) {
        const double v = a(k, i) * b(k, j);
        est.matrix(i, j) += v;
        sq(i, j) += v * v;
      }
    }
  }
  const double n = static_cast<double>(r);
  est.matrix /= n;
  est.std_error.resize(a.cols(), b.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      const double m = est.matrix(i, j);
      const double var = std::max(0.0, (sq(i, j) - n * m * m) / (n - 1.0));
      est.std_error(i, j) = std::sqrt(var / n);
    }
  }
  return est;
}

inline CovEstimate empirical_cov(const Matrix& samples) { return cross_moment(samples, samples); }

inline MeanReport mean_report(const Matrix& samples) {
  const Eigen::Index r = samples.rows();
  require(r >= 2, ErrorCode::InsufficientSamples, "need at least 2 replicas");
  MeanReport rep;
  rep.mean = Vector::Zero(samples.cols());
  for (Eigen::Index k = 0; k < r; ++k) rep.mean += samples.row(k).transpose();
  rep.mean /= static_cast<double>(r);
  rep.std_error = Vector::Zero(samples.cols());
  for (Eigen::Index k = 0; k < r; ++k) rep.std_error += (samples.row(k).transpose() - rep.mean).cwiseAbs2();
  rep.std_error = (rep.std_error / (static_cast<double>(r) - 1.0) / static_cast<double>(r)).cwiseSqrt();
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    const double se = rep.std_error[i];
    const double z = se > 0.0 ? std::abs(rep.mean[i]) / se : (rep.mean[i] == 0.0 ? 0.0 : INFINITY);
    rep.max_abs_z = std::max(rep.max_abs_z, z);
  }
  rep.flagged = rep.max_abs_z > 4.0;
  return rep;
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares slope of log(mean_sq_norm) against log(step).
inline RateFit rate_slope(const std::vector<double>& mean_sq_norms, const std::vector<double>& steps) {
  require(mean_sq_norms.size() == steps.size(), ErrorCode::DimensionMismatch, "rate_slope input lengths differ");
  require(steps.size() >= 4, ErrorCode::InsufficientValues, "rate_slope needs at least 4 checkpoints");
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    require(mean_sq_norms[k] > 0.0 && steps[k] > 0.0, ErrorCode::NonPositiveInput,
            "rate_slope inputs must be positive");
    lx.push_back(std::log(steps[k]));
    ly.push_back(std::log(mean_sq_norms[k]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    mx += lx[k];
    my += ly[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
    syy += (ly[k] - my) * (ly[k] - my);
  }
  require(sxx > 0.0, ErrorCode::InvalidArgument, "rate_slope needs distinct step values");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

/// Overload taking the checkpoint indices for reporting symmetry.
inline RateFit rate_slope(const std::vector<std::size_t>& ns, const std::vector<double>& mean_sq_norms,
                          const std::vector<double>& steps) {
  require(ns.size() == steps.size(), ErrorCode::DimensionMismatch, "rate_slope input lengths differ");
  return rate_slope(mean_sq_norms, steps);
}

/// P(K > lambda) for the Kolmogorov distribution.
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  if (lambda < 1.0) {
    // Theta-function form, fast for small lambda.
    const double pi = std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= 100; ++k) {
      const double m = 2.0 * k - 1.0;
      const double term = std::exp(-m * m * pi * pi / (8.0 * lambda * lambda));
      cdf += term;
      if (term < 1e-300) break;
    }
    cdf *= std::sqrt(2.0 * pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// sup |F_emp - F_ref| over the sample.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  require(!samples.empty(), ErrorCode::InsufficientSamples, "KS statistic needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Two-sided KS test with the asymptotic Kolmogorov p-value; passes when
/// p > alpha.
inline TestVerdict ks_test_1d(const std::vector<double>& samples, const std::function<double(double)>& cdf,
                              double alpha = 0.01, const std::string& name = "ks") {
  require(samples.size() >= 50, ErrorCode::InsufficientSamples,
          "KS test needs at least 50 samples, got " + std::to_string(samples.size()));
  TestVerdict v;
  v.name = name;
  v.statistic = ks_statistic(samples, cdf);
  v.p_value = kolmogorov_survival(std::sqrt(static_cast<double>(samples.size())) * v.statistic);
  v.threshold = alpha;
  v.rule = "p_value > threshold";
  v.pass = *v.p_value > alpha;
  return v;
}

/// E[U(t) U(t+s)^T] across replicas, t = times[t_index], t+s = times[s_index].
inline Matrix autocov_estimate(const FddSamples& fdd, std::size_t t_index, std::size_t s_index) {
  require(t_index < fdd.by_time.size() && s_index < fdd.by_time.size(), ErrorCode::IndexOutOfRange,
          "fdd time index out of range");
  return cross_moment(fdd.by_time[t_index], fdd.by_time[s_index]).matrix;
}

inline TestVerdict threshold_verdict(std::string name, double statistic, double threshold,
                                     std::map<std::string, std::string> context = {}) {
  TestVerdict v;
  v.name = std::move(name);
  v.statistic = statistic;
  v.threshold = threshold;
  v.rule = "statistic <= threshold";
  v.pass = std::isfinite(statistic) && statistic <= threshold;
  v.context = std::move(context);
  return v;
}

}  // namespace ttsa

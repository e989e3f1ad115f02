#pragma once

// Ornstein-Uhlenbeck limit laws dU = -B U dt + S^{1/2} dW of the rescaled
// fast and slow errors, and an exact-transition OU sampler.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/schedule.hpp"

namespace ttsa {

struct LimitSpec {
  Matrix drift;
  Matrix diffusion_cov;
  Matrix stationary_cov;
};

/// Builds the stationary law for a drift / diffusion pair and checks the
/// Lyapunov residual.
inline LimitSpec make_limit_spec(const Matrix& drift, const Matrix& diffusion) {
  LimitSpec lim{drift, diffusion, solve_lyapunov(drift, diffusion)};
  const double resid = lyapunov_residual(drift, lim.stationary_cov, diffusion);
  require(resid <= kLyapunovTolerance * (1.0 + diffusion.norm()), ErrorCode::NonConvergence,
          "Lyapunov residual " + std::to_string(resid) + " above tolerance");
  return lim;
}

/// S_psi - M S_xipsi - S_xipsi^T M^T + M S_xi M^T with M = B2 B1^{-1}.
inline Matrix sigma_tilde_psi(const Matrix& sigma_psi, const Matrix& sigma_xipsi, const Matrix& sigma_xi,
                              const Matrix& b1, const Matrix& b2) {
  require_square(b1, "B1");
  require(b2.cols() == b1.rows() && sigma_xi.rows() == b1.rows() && sigma_xi.cols() == b1.rows() &&
              sigma_psi.rows() == b2.rows() && sigma_psi.cols() == b2.rows() &&
              sigma_xipsi.rows() == b1.rows() && sigma_xipsi.cols() == b2.rows(),
          ErrorCode::DimensionMismatch, "sigma_tilde_psi operand shapes");
  Eigen::FullPivLU<Matrix> lu(b1);
  require(lu.isInvertible(), ErrorCode::SingularB1, "B1 is singular");
  const Matrix m = b2 * lu.inverse();
  Matrix out = sigma_psi - m * sigma_xipsi - sigma_xipsi.transpose() * m.transpose() +
               m * sigma_xi * m.transpose();
  out = 0.5 * (out + out.transpose()).eval();
  const double scale = std::max(1.0, out.cwiseAbs().maxCoeff());
  require(min_symmetric_eigenvalue(out) >= -1e-10 * scale, ErrorCode::InvalidArgument,
          "corrected slow diffusion is not positive semidefinite");
  return out;
}

inline LimitSpec fast_limit(const ProblemSpec& p) {
  const auto lin = linearize(p);
  const auto noise = asymptotic_noise_cov(p);
  return make_limit_spec(lin.b1, noise.xi);
}

/// Drift B3 - beta_tilde I / 2, diffusion sigma_tilde_psi(...).
inline Matrix slow_drift(const ProblemSpec& p, const StepSchedule& sched) {
  const auto lin = linearize(p);
  return lin.b3 - 0.5 * sched.beta_tilde() * Matrix::Identity(lin.b3.rows(), lin.b3.cols());
}

inline LimitSpec slow_limit(const ProblemSpec& p, const StepSchedule& sched) {
  const auto lin = linearize(p);
  const auto noise = asymptotic_noise_cov(p);
  const Matrix diffusion = sigma_tilde_psi(noise.psi, noise.xipsi, noise.xi, lin.b1, lin.b2);
  return make_limit_spec(slow_drift(p, sched), diffusion);
}

/// Cov(U(t), U(t+s)) = Sigma exp(-B^T s) for the stationary process.
inline Matrix ou_autocov(const LimitSpec& lim, double s) {
  require(s >= 0.0, ErrorCode::InvalidArgument, "autocovariance lag must be >= 0");
  return lim.stationary_cov * matrix_exp(lim.drift.transpose(), -s);
}

enum class OuStart { Stationary, Fixed };

/// Exact OU sampler on a fixed time grid:
/// U(t+h) = e^{-Bh} U(t) + N(0, Sigma - e^{-Bh} Sigma e^{-B^T h}).
/// Transition factors are computed once per grid.
class OuPathSampler {
 public:
  OuPathSampler(const LimitSpec& lim, std::vector<double> times) : times_(std::move(times)) {
    require(!times_.empty(), ErrorCode::InvalidArgument, "empty OU time grid");
    for (std::size_t k = 0; k < times_.size(); ++k) {
      require(times_[k] >= 0.0 && std::isfinite(times_[k]), ErrorCode::InvalidArgument,
              "OU times must be finite and >= 0");
      require(k == 0 || times_[k] >= times_[k - 1], ErrorCode::InvalidArgument, "OU times must be sorted");
    }
    const Matrix& sigma = lim.stationary_cov;
    stationary_factor_ = psd_factor(sigma, "stationary covariance");
    // Leading transition from time 0 to times[0] (used for fixed starts).
    double prev = 0.0;
    for (double t : times_) {
      const Matrix e = matrix_exp(lim.drift, -(t - prev));
      const Matrix cov = sigma - e * sigma * e.transpose();
      transitions_.push_back(e);
      factors_.push_back(psd_factor(cov, "OU transition covariance"));
      prev = t;
    }
  }

  const std::vector<double>& times() const noexcept { return times_; }
  Eigen::Index dim() const noexcept { return stationary_factor_.rows(); }

  /// One path; a stationary start draws U(0) from the stationary law.
  std::vector<Vector> sample(CounterRng& rng, OuStart start, const Vector& u0 = Vector()) const {
    const Eigen::Index d = dim();
    Vector z(d);
    Vector u;
    if (start == OuStart::Stationary) {
      rng.fill_normal({z.data(), static_cast<std::size_t>(d)});
      u = stationary_factor_ * z;
    } else {
      require(u0.size() == d, ErrorCode::DimensionMismatch, "OU start vector dimension");
      u = u0;
    }
    std::vector<Vector> out;
    out.reserve(times_.size());
    for (std::size_t k = 0; k < times_.size(); ++k) {
      rng.fill_normal({z.data(), static_cast<std::size_t>(d)});
      u = (transitions_[k] * u + factors_[k] * z).eval();
      out.push_back(u);
    }
    return out;
  }

 private:
  std::vector<double> times_;
  Matrix stationary_factor_;
  std::vector<Matrix> transitions_;
  std::vector<Matrix> factors_;
};

inline std::vector<Vector> ou_sample_path(const LimitSpec& lim, const std::vector<double>& times, CounterRng& rng,
                                          OuStart start, const Vector& u0 = Vector()) {
  return OuPathSampler(lim, times).sample(rng, start, u0);
}

}  // namespace ttsa

#pragma once

// Two-time-scale problems: the operator pair (F, G), the inner solution H,
// the root pair, the local linearization (B1, B2, B3, grad H) and the noise
// source. Built-in constructions cover a generic linear problem, SGD with
// Polyak-Ruppert averaging, normalized stochastic heavy ball, and GTD2/TDC
// off-policy evaluation on a finite MDP.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/schedule.hpp"

namespace ttsa {

/// out = F(x, y) (or G(x, y)); `out` is pre-sized by the caller.
using Operator = std::function<void(const Vector& x, const Vector& y, Vector& out)>;
/// out = H(y).
using InnerMap = std::function<void(const Vector& y, Vector& out)>;

struct Linearization {
  Matrix b1;
  Matrix b2;
  Matrix b3;
  Matrix h_star;  // grad H(y_star), dim_x x dim_y
};

// ---------------------------------------------------------------------------
// Finite MDP for gradient TD.

struct MdpSpec {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  Matrix features;                                    // n_states x d, rows phi(s)
  std::vector<std::vector<double>> rewards;           // [s][a] in [0, 1]
  std::vector<std::vector<std::vector<double>>> transitions;  // [s][a][s']
  std::vector<std::vector<double>> target_policy;     // pi(a|s), [s][a]
  std::vector<std::vector<double>> behavior_policy;   // pi_b(a|s), [s][a]
  std::vector<double> state_dist;                     // mu(s)
  double gamma = 0.9;

  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
};

inline constexpr double kProbabilityTolerance = 1e-12;

namespace detail {

inline void require_distribution(const std::vector<double>& p, std::size_t size,
                                 const std::string& what) {
  require(p.size() == size, ErrorCode::DimensionMismatch,
          what + " has " + std::to_string(p.size()) + " entries, expected " + std::to_string(size));
  double total = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::InvalidArgument, what + " has a negative entry");
    total += v;
  }
  require(std::abs(total - 1.0) <= kProbabilityTolerance, ErrorCode::InvalidArgument,
          what + " sums to " + std::to_string(total));
}

}  // namespace detail

inline void validate_mdp(const MdpSpec& m) {
  require(m.n_states > 0 && m.n_actions > 0, ErrorCode::InvalidArgument, "empty MDP");
  require(static_cast<std::size_t>(m.features.rows()) == m.n_states && m.features.cols() > 0,
          ErrorCode::DimensionMismatch, "features must be n_states x d");
  require_finite(m.features, "features");
  require(m.gamma >= 0.0 && m.gamma < 1.0, ErrorCode::InvalidArgument, "gamma must lie in [0, 1)");
  require(m.rewards.size() == m.n_states && m.transitions.size() == m.n_states &&
              m.target_policy.size() == m.n_states && m.behavior_policy.size() == m.n_states,
          ErrorCode::DimensionMismatch, "per-state tables must have n_states rows");
  detail::require_distribution(m.state_dist, m.n_states, "state distribution");
  for (std::size_t s = 0; s < m.n_states; ++s) {
    const auto tag = "state " + std::to_string(s);
    detail::require_distribution(m.target_policy[s], m.n_actions, "target policy at " + tag);
    detail::require_distribution(m.behavior_policy[s], m.n_actions, "behavior policy at " + tag);
    require(m.rewards[s].size() == m.n_actions && m.transitions[s].size() == m.n_actions,
            ErrorCode::DimensionMismatch, "reward/transition tables at " + tag);
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      const double r = m.rewards[s][a];
      require(std::isfinite(r) && r >= 0.0 && r <= 1.0, ErrorCode::InvalidArgument,
              "rewards must lie in [0, 1]");
      require(m.behavior_policy[s][a] > 0.0 || m.target_policy[s][a] == 0.0,
              ErrorCode::InvalidArgument,
              "behavior policy must cover the target policy (" + tag + ", action " +
                  std::to_string(a) + ")");
      detail::require_distribution(m.transitions[s][a], m.n_states,
                                   "transition row at " + tag + ", action " + std::to_string(a));
    }
  }
}

struct GtdMatrices {
  Matrix a;
  Vector b;
  Matrix c;
  Matrix d;
  double identity_residual = 0.0;  // max |C - D^T - A^T|
};

inline constexpr double kGtdIdentityTolerance = 1e-10;

/// Exact expectations of A_n, b_n, C_n, D_n by enumerating every
/// (s, a, s') with weight mu(s) pi_b(a|s) P(s'|s,a).
inline GtdMatrices gtd_matrices(const MdpSpec& m) {
  validate_mdp(m);
  const auto d = m.features.cols();
  GtdMatrices out{Matrix::Zero(d, d), Vector::Zero(d), Matrix::Zero(d, d), Matrix::Zero(d, d), 0.0};
  for (std::size_t s = 0; s < m.n_states; ++s) {
    const Vector phi = m.features.row(static_cast<Eigen::Index>(s)).transpose();
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      const double pb = m.behavior_policy[s][a];
      if (pb == 0.0) continue;
      const double rho = m.target_policy[s][a] / pb;
      for (std::size_t sp = 0; sp < m.n_states; ++sp) {
        const double w = m.state_dist[s] * pb * m.transitions[s][a][sp];
        if (w == 0.0) continue;
        const Vector phi_next = m.features.row(static_cast<Eigen::Index>(sp)).transpose();
        out.a += w * rho * phi * (phi - m.gamma * phi_next).transpose();
        out.b += w * rho * m.rewards[s][a] * phi;
        out.c += w * phi * phi.transpose();
        out.d += w * m.gamma * rho * phi * phi_next.transpose();
      }
    }
  }
  out.identity_residual = (out.c - out.d.transpose() - out.a.transpose()).cwiseAbs().maxCoeff();
  require(out.identity_residual <= kGtdIdentityTolerance, ErrorCode::IdentityViolation,
          "C - D^T != A^T (max deviation " + std::to_string(out.identity_residual) + ")");
  require(min_symmetric_eigenvalue(out.c) > 0.0, ErrorCode::InvalidArgument,
          "feature covariance C is not positive definite");
  const Eigen::FullPivLU<Matrix> lu(out.a);
  require(lu.isInvertible(), ErrorCode::InvalidArgument, "A is singular");
  return out;
}

enum class GtdVariant { Gtd2, Tdc };

inline const char* to_string(GtdVariant v) { return v == GtdVariant::Gtd2 ? "gtd2" : "tdc"; }

/// Sampling tables derived from an MdpSpec for fast i.i.d. (s, a, s') draws.
struct MdpSampler {
  MdpSpec spec;
  GtdMatrices mats;
  Vector y_star;
  std::vector<double> state_cdf;
  std::vector<std::vector<double>> action_cdf;               // [s]
  std::vector<std::vector<std::vector<double>>> next_cdf;    // [s][a]

  explicit MdpSampler(MdpSpec m) : spec(std::move(m)), mats(gtd_matrices(spec)) {
    y_star = mats.a.fullPivLu().solve(mats.b);
    state_cdf = cumulative(spec.state_dist);
    action_cdf.resize(spec.n_states);
    next_cdf.resize(spec.n_states);
    for (std::size_t s = 0; s < spec.n_states; ++s) {
      action_cdf[s] = cumulative(spec.behavior_policy[s]);
      for (std::size_t a = 0; a < spec.n_actions; ++a)
        next_cdf[s].push_back(cumulative(spec.transitions[s][a]));
    }
  }

  struct Sample {
    std::size_t s, a, s_next;
    double rho, reward;
  };

  Sample draw(CounterRng& rng) const {
    Sample out{};
    out.s = rng.categorical(state_cdf);
    out.a = rng.categorical(action_cdf[out.s]);
    out.s_next = rng.categorical(next_cdf[out.s][out.a]);
    out.rho = spec.target_policy[out.s][out.a] / spec.behavior_policy[out.s][out.a];
    out.reward = spec.rewards[out.s][out.a];
    return out;
  }

 private:
  static std::vector<double> cumulative(const std::vector<double>& p) {
    std::vector<double> c(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c[i] = (acc += p[i]);
    c.back() = 1.0;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Noise.

enum class NoiseKind { GaussianJoint, GtdSampling };

struct NoiseModel {
  NoiseKind kind = NoiseKind::GaussianJoint;
  Matrix sigma_xi;
  Matrix sigma_psi;
  Matrix sigma_xipsi;
  Matrix joint_factor;  // L with L L^T = [[S_xi, S_xipsi], [S_xipsi^T, S_psi]]
  std::shared_ptr<const MdpSampler> mdp;
  GtdVariant variant = GtdVariant::Gtd2;

  static NoiseModel gaussian(Matrix sigma_xi, Matrix sigma_psi, Matrix sigma_xipsi) {
    require_square(sigma_xi, "Sigma_xi");
    require_square(sigma_psi, "Sigma_psi");
    require(sigma_xipsi.rows() == sigma_xi.rows() && sigma_xipsi.cols() == sigma_psi.rows(),
            ErrorCode::DimensionMismatch, "Sigma_xipsi must be dim_x x dim_y");
    const auto dx = sigma_xi.rows();
    const auto dy = sigma_psi.rows();
    Matrix joint(dx + dy, dx + dy);
    joint << sigma_xi, sigma_xipsi, sigma_xipsi.transpose(), sigma_psi;
    NoiseModel n;
    n.kind = NoiseKind::GaussianJoint;
    n.joint_factor = psd_factor(joint, "joint noise covariance");
    n.sigma_xi = std::move(sigma_xi);
    n.sigma_psi = std::move(sigma_psi);
    n.sigma_xipsi = std::move(sigma_xipsi);
    return n;
  }

  static NoiseModel gtd(std::shared_ptr<const MdpSampler> sampler, GtdVariant variant) {
    NoiseModel n;
    n.kind = NoiseKind::GtdSampling;
    n.mdp = std::move(sampler);
    n.variant = variant;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Problem.

struct ProblemSpec {
  std::string kind;
  std::size_t dim_x = 0;
  std::size_t dim_y = 0;
  Operator f;
  Operator g;
  InnerMap h;
  Vector x_star;
  Vector y_star;
  std::optional<Linearization> declared;
  NoiseModel noise;
  HolderOrders orders;
};

struct OperatorValues {
  Vector f;
  Vector g;
  Vector h;
};

inline void require_dims(const ProblemSpec& p, const Vector& x, const Vector& y) {
  require(static_cast<std::size_t>(x.size()) == p.dim_x && static_cast<std::size_t>(y.size()) == p.dim_y,
          ErrorCode::DimensionMismatch,
          "expected x in R^" + std::to_string(p.dim_x) + ", y in R^" + std::to_string(p.dim_y) +
              "; got " + std::to_string(x.size()) + ", " + std::to_string(y.size()));
}

inline OperatorValues eval_operators(const ProblemSpec& p, const Vector& x, const Vector& y) {
  require_dims(p, x, y);
  const auto dx = static_cast<Eigen::Index>(p.dim_x);
  const auto dy = static_cast<Eigen::Index>(p.dim_y);
  OperatorValues v{Vector(dx), Vector(dy), Vector(dx)};
  p.f(x, y, v.f);
  p.g(x, y, v.g);
  p.h(y, v.h);
  return v;
}

inline Vector eval_h(const ProblemSpec& p, const Vector& y) {
  Vector out(static_cast<Eigen::Index>(p.dim_x));
  p.h(y, out);
  return out;
}

/// Central-difference linearization at the root with step 1e-5 (1 + |root|),
/// composing B3 = grad_y G - grad_x G [grad_x F]^{-1} grad_y F.
inline Linearization linearize_numeric(const ProblemSpec& p) {
  const auto dx = static_cast<Eigen::Index>(p.dim_x);
  const auto dy = static_cast<Eigen::Index>(p.dim_y);
  const double root_norm = std::sqrt(p.x_star.squaredNorm() + p.y_star.squaredNorm());
  const double h = 1e-5 * (1.0 + root_norm);

  Matrix fx(dx, dx), fy(dx, dy), gx(dy, dx), gy(dy, dy), hy(dx, dy);
  Vector fp(dx), fm(dx), gp(dy), gm(dy), hp(dx), hm(dx);
  for (Eigen::Index j = 0; j < dx; ++j) {
    Vector xp = p.x_star, xm = p.x_star;
    xp[j] += h;
    xm[j] -= h;
    p.f(xp, p.y_star, fp);
    p.f(xm, p.y_star, fm);
    p.g(xp, p.y_star, gp);
    p.g(xm, p.y_star, gm);
    fx.col(j) = (fp - fm) / (2.0 * h);
    gx.col(j) = (gp - gm) / (2.0 * h);
  }
  for (Eigen::Index j = 0; j < dy; ++j) {
    Vector yp = p.y_star, ym = p.y_star;
    yp[j] += h;
    ym[j] -= h;
    p.f(p.x_star, yp, fp);
    p.f(p.x_star, ym, fm);
    p.g(p.x_star, yp, gp);
    p.g(p.x_star, ym, gm);
    p.h(yp, hp);
    p.h(ym, hm);
    fy.col(j) = (fp - fm) / (2.0 * h);
    gy.col(j) = (gp - gm) / (2.0 * h);
    hy.col(j) = (hp - hm) / (2.0 * h);
  }
  Eigen::JacobiSVD<Matrix> svd(fx);
  const auto& sv = svd.singularValues();
  const double cond = sv.size() == 0 ? 1.0 : sv[0] / sv[sv.size() - 1];
  require(std::isfinite(cond) && cond <= 1e12, ErrorCode::SingularInnerJacobian,
          "grad_x F has condition number " + std::to_string(cond));
  Linearization lin;
  lin.b1 = fx;
  lin.b2 = gx;
  lin.b3 = gy - gx * fx.fullPivLu().solve(fy);
  lin.h_star = hy;
  return lin;
}

/// Declared matrices when the problem carries them, otherwise numeric.
inline Linearization linearize(const ProblemSpec& p) {
  if (p.declared) return *p.declared;
  return linearize_numeric(p);
}

struct NoiseCov {
  Matrix xi;
  Matrix psi;
  Matrix xipsi;
};

struct NoiseDraw {
  Vector xi;
  Vector psi;
};

namespace detail {

inline void gtd_noise(const NoiseModel& noise, CounterRng& rng, const ProblemSpec& p,
                      const Vector& x, const Vector& y, Vector& xi, Vector& psi) {
  const auto& sampler = *noise.mdp;
  const auto smp = sampler.draw(rng);
  const auto& phi_all = sampler.spec.features;
  const auto phi = phi_all.row(static_cast<Eigen::Index>(smp.s)).transpose();
  const auto phi_next = phi_all.row(static_cast<Eigen::Index>(smp.s_next)).transpose();
  const double gamma = sampler.spec.gamma;
  const double phi_x = phi.dot(x);
  const double td = smp.reward + (gamma * phi_next - phi).dot(y);  // delta_n
  // xi = C_n x + A_n y - b_n - F(x, y) = (phi^T x - rho delta) phi - F(x, y)
  p.f(x, y, xi);
  xi = (phi_x - smp.rho * td) * phi - xi;
  p.g(x, y, psi);
  if (noise.variant == GtdVariant::Gtd2) {
    // psi = -A_n^T x - G = rho (gamma phi' - phi) phi^T x - G
    psi = smp.rho * phi_x * (gamma * phi_next - phi) - psi;
  } else {
    // psi = D_n^T x + A_n y - b_n - G = rho (gamma phi' phi^T x - delta phi) - G
    psi = smp.rho * (gamma * phi_x * phi_next - td * phi) - psi;
  }
}

}  // namespace detail

/// In-place noise draw; xi and psi must already have the problem dimensions.
inline void sample_noise_into(const ProblemSpec& p, CounterRng& rng, const Vector& x, const Vector& y,
                              Vector& xi, Vector& psi, Vector& scratch) {
  const auto& noise = p.noise;
  if (noise.kind == NoiseKind::GaussianJoint) {
    const auto dx = static_cast<Eigen::Index>(p.dim_x);
    const auto dy = static_cast<Eigen::Index>(p.dim_y);
    rng.fill_normal({scratch.data(), static_cast<std::size_t>(scratch.size())});
    xi.noalias() = noise.joint_factor.topRows(dx) * scratch;
    psi.noalias() = noise.joint_factor.bottomRows(dy) * scratch;
    return;
  }
  detail::gtd_noise(noise, rng, p, x, y, xi, psi);
}

inline NoiseDraw sample_noise(const ProblemSpec& p, CounterRng& rng, const Vector& x, const Vector& y) {
  require_dims(p, x, y);
  NoiseDraw d{Vector(static_cast<Eigen::Index>(p.dim_x)), Vector(static_cast<Eigen::Index>(p.dim_y))};
  Vector scratch(static_cast<Eigen::Index>(p.dim_x + p.dim_y));
  sample_noise_into(p, rng, x, y, d.xi, d.psi, scratch);
  return d;
}

/// Limits of the conditional second moments of (xi, psi). For GTD sampling
/// they are exact second moments at the root, by enumeration.
inline NoiseCov asymptotic_noise_cov(const ProblemSpec& p) {
  if (p.noise.kind == NoiseKind::GaussianJoint)
    return {p.noise.sigma_xi, p.noise.sigma_psi, p.noise.sigma_xipsi};

  const auto& sampler = *p.noise.mdp;
  const auto& m = sampler.spec;
  const auto dx = static_cast<Eigen::Index>(p.dim_x);
  const auto dy = static_cast<Eigen::Index>(p.dim_y);
  NoiseCov cov{Matrix::Zero(dx, dx), Matrix::Zero(dy, dy), Matrix::Zero(dx, dy)};
  Vector f0(dx), g0(dy);
  p.f(p.x_star, p.y_star, f0);
  p.g(p.x_star, p.y_star, g0);
  const Vector& x = p.x_star;
  const Vector& y = p.y_star;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    const Vector phi = m.features.row(static_cast<Eigen::Index>(s)).transpose();
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      const double pb = m.behavior_policy[s][a];
      if (pb == 0.0) continue;
      const double rho = m.target_policy[s][a] / pb;
      for (std::size_t sp = 0; sp < m.n_states; ++sp) {
        const double w = m.state_dist[s] * pb * m.transitions[s][a][sp];
        if (w == 0.0) continue;
        const Vector phi_next = m.features.row(static_cast<Eigen::Index>(sp)).transpose();
        const double td = m.rewards[s][a] + (m.gamma * phi_next - phi).dot(y);
        const Vector xi = (phi.dot(x) - rho * td) * phi - f0;
        const Vector psi = p.noise.variant == GtdVariant::Gtd2
                               ? Vector(rho * phi.dot(x) * (m.gamma * phi_next - phi) - g0)
                               : Vector(rho * (m.gamma * phi.dot(x) * phi_next - td * phi) - g0);
        cov.xi += w * xi * xi.transpose();
        cov.psi += w * psi * psi.transpose();
        cov.xipsi += w * xi * psi.transpose();
      }
    }
  }
  return cov;
}

// ---------------------------------------------------------------------------
// Built-in problems.

namespace detail {

/// Affine operator out = Mx x + My y + c.
inline Operator affine(Matrix mx, Matrix my, Vector c) {
  return [mx = std::move(mx), my = std::move(my), c = std::move(c)](const Vector& x, const Vector& y,
                                                                   Vector& out) {
    out.noalias() = mx * x;
    out.noalias() += my * y;
    out += c;
  };
}

inline InnerMap affine_inner(Matrix my, Vector c) {
  return [my = std::move(my), c = std::move(c)](const Vector& y, Vector& out) {
    out.noalias() = my * y;
    out += c;
  };
}

inline void require_spd(const Matrix& q, const std::string& name) {
  require_square(q, name);
  require((q - q.transpose()).cwiseAbs().maxCoeff() <= 1e-12, ErrorCode::InvalidArgument,
          name + " must be symmetric");
  require(min_symmetric_eigenvalue(q) > 0.0, ErrorCode::InvalidArgument, name + " must be positive definite");
}

}  // namespace detail

struct LinearParams {
  Matrix b1, b2, b3;
  Matrix h;  // inner map slope: H(y) = x_star + h (y - y_star)
  Vector y_star;
  Vector x_star;  // defaults to zeros when empty
  Matrix sigma_xi, sigma_psi, sigma_xipsi;
};

/// F(x, y) = B1 (x - H(y)), G(x, y) = B2 (x - H(y)) + B3 (y - y_star),
/// H(y) = x_star + h (y - y_star).
inline ProblemSpec make_linear(LinearParams lp) {
  require_square(lp.b1, "B1");
  require_square(lp.b3, "B3");
  const auto dx = lp.b1.rows();
  const auto dy = lp.b3.rows();
  require(lp.b2.rows() == dy && lp.b2.cols() == dx, ErrorCode::DimensionMismatch, "B2 must be dim_y x dim_x");
  if (lp.h.size() == 0) lp.h = Matrix::Zero(dx, dy);
  if (lp.x_star.size() == 0) lp.x_star = Vector::Zero(dx);
  if (lp.y_star.size() == 0) lp.y_star = Vector::Zero(dy);
  require(lp.h.rows() == dx && lp.h.cols() == dy && lp.x_star.size() == dx && lp.y_star.size() == dy,
          ErrorCode::DimensionMismatch, "H slope / root dimensions");
  if (lp.sigma_xipsi.size() == 0) lp.sigma_xipsi = Matrix::Zero(dx, dy);

  const Vector h0 = lp.x_star - lp.h * lp.y_star;  // H(y) = h y + h0
  ProblemSpec p;
  p.kind = "linear";
  p.dim_x = static_cast<std::size_t>(dx);
  p.dim_y = static_cast<std::size_t>(dy);
  p.f = detail::affine(lp.b1, -lp.b1 * lp.h, -lp.b1 * h0);
  p.g = detail::affine(lp.b2, lp.b3 - lp.b2 * lp.h, -lp.b2 * h0 - lp.b3 * lp.y_star);
  p.h = detail::affine_inner(lp.h, h0);
  p.x_star = lp.x_star;
  p.y_star = lp.y_star;
  p.declared = Linearization{lp.b1, lp.b2, lp.b3, lp.h};
  p.noise = NoiseModel::gaussian(lp.sigma_xi, lp.sigma_psi, lp.sigma_xipsi);
  return p;
}

/// SGD on f(x) = (x - x_opt)^T Q (x - x_opt) / 2 with Polyak-Ruppert averaging:
/// F(x, y) = Q (x - x_opt), G(x, y) = y - x, H(y) = x_opt. The slow update
/// is noise-free.
inline ProblemSpec make_pr_averaging(const Matrix& q, Vector x_opt, const Matrix& sigma_xi) {
  detail::require_spd(q, "Q");
  const auto d = q.rows();
  if (x_opt.size() == 0) x_opt = Vector::Zero(d);
  require(x_opt.size() == d, ErrorCode::DimensionMismatch, "minimizer dimension");
  const Matrix id = Matrix::Identity(d, d);
  ProblemSpec p;
  p.kind = "pr_averaging";
  p.dim_x = p.dim_y = static_cast<std::size_t>(d);
  p.f = detail::affine(q, Matrix::Zero(d, d), -q * x_opt);
  p.g = detail::affine(-id, id, Vector::Zero(d));
  p.h = detail::affine_inner(Matrix::Zero(d, d), x_opt);
  p.x_star = x_opt;
  p.y_star = x_opt;
  p.declared = Linearization{q, -id, id, Matrix::Zero(d, d)};
  p.noise = NoiseModel::gaussian(sigma_xi, Matrix::Zero(d, d), Matrix::Zero(d, d));
  return p;
}

/// Normalized stochastic heavy ball: F(x, y) = x - Q (y - x_opt), G(x, y) = x,
/// H(y) = Q (y - x_opt), root (0, x_opt).
inline ProblemSpec make_shb(const Matrix& q, Vector x_opt, const Matrix& sigma_xi) {
  detail::require_spd(q, "Q");
  const auto d = q.rows();
  if (x_opt.size() == 0) x_opt = Vector::Zero(d);
  require(x_opt.size() == d, ErrorCode::DimensionMismatch, "minimizer dimension");
  const Matrix id = Matrix::Identity(d, d);
  ProblemSpec p;
  p.kind = "shb";
  p.dim_x = p.dim_y = static_cast<std::size_t>(d);
  p.f = detail::affine(id, -q, q * x_opt);
  p.g = detail::affine(id, Matrix::Zero(d, d), Vector::Zero(d));
  p.h = detail::affine_inner(q, -q * x_opt);
  p.x_star = Vector::Zero(d);
  p.y_star = x_opt;
  p.declared = Linearization{id, id, q, q};
  p.noise = NoiseModel::gaussian(sigma_xi, Matrix::Zero(d, d), Matrix::Zero(d, d));
  return p;
}

/// GTD2 / TDC with linear features: F(x, y) = C x + A y - b,
/// G_GTD2 = -A^T x, G_TDC = D^T x + A y - b, H(y) = -C^{-1}(A y - b).
inline ProblemSpec make_gtd(std::shared_ptr<const MdpSampler> sampler, GtdVariant variant) {
  require(sampler != nullptr, ErrorCode::InvalidArgument, "missing MDP");
  const auto& m = sampler->mats;
  const auto d = m.a.rows();
  const Matrix c_inv = m.c.inverse();
  ProblemSpec p;
  p.kind = to_string(variant);
  p.dim_x = p.dim_y = static_cast<std::size_t>(d);
  p.f = detail::affine(m.c, m.a, -m.b);
  if (variant == GtdVariant::Gtd2) {
    p.g = detail::affine(-m.a.transpose(), Matrix::Zero(d, d), Vector::Zero(d));
  } else {
    p.g = detail::affine(m.d.transpose(), m.a, -m.b);
  }
  p.h = detail::affine_inner(-c_inv * m.a, c_inv * m.b);
  p.x_star = Vector::Zero(d);
  p.y_star = sampler->y_star;
  const Matrix b2 = variant == GtdVariant::Gtd2 ? Matrix(-m.a.transpose()) : Matrix(m.d.transpose());
  p.declared = Linearization{m.c, b2, m.a.transpose() * c_inv * m.a, -c_inv * m.a};
  p.noise = NoiseModel::gtd(std::move(sampler), variant);
  return p;
}

// ---------------------------------------------------------------------------
// Structural checks.

struct ProblemCheck {
  double root_residual_f = 0.0;
  double root_residual_g = 0.0;
  double inner_residual = 0.0;  // max |F(H(y), y)| over probes
  SpectralReport fast_drift;
  SpectralReport slow_drift;
  bool pass = false;
};

inline constexpr double kRootTolerance = 1e-10;
inline constexpr double kInnerTolerance = 1e-8;

inline ProblemCheck check_problem(const ProblemSpec& p, const StepSchedule& sched) {
  ProblemCheck c;
  const auto v = eval_operators(p, p.x_star, p.y_star);
  c.root_residual_f = v.f.norm();
  c.root_residual_g = v.g.norm();
  CounterRng rng(0x5eedULL, 0);
  Vector y(static_cast<Eigen::Index>(p.dim_y));
  Vector hy(static_cast<Eigen::Index>(p.dim_x));
  Vector fv(static_cast<Eigen::Index>(p.dim_x));
  for (int probe = 0; probe < 100; ++probe) {
    for (Eigen::Index j = 0; j < y.size(); ++j) y[j] = p.y_star[j] + 0.1 * rng.normal();
    p.h(y, hy);
    p.f(hy, y, fv);
    c.inner_residual = std::max(c.inner_residual, fv.norm());
  }
  const auto lin = linearize(p);
  c.fast_drift = spectral_report(lin.b1);
  const auto d = lin.b3.rows();
  c.slow_drift = spectral_report(lin.b3 - 0.5 * sched.beta_tilde() * Matrix::Identity(d, d));
  c.pass = c.root_residual_f < kRootTolerance && c.root_residual_g < kRootTolerance &&
           c.inner_residual < kInnerTolerance && c.fast_drift.hurwitz_for_negation &&
           c.slow_drift.hurwitz_for_negation;
  return c;
}

}  // namespace ttsa

#pragma once

// Small dense real-matrix kernel. Dimensions in this library are tiny
// (d <= 16), so everything is dense and allocation-light.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "ttsa/error.hpp"

namespace ttsa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kLyapunovTolerance = 1e-10;
inline constexpr Eigen::Index kMaxLyapunovDim = 16;

inline std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const Matrix& m, const std::string& name) {
  require(m.allFinite(), ErrorCode::NonFinite, name + " has non-finite entries");
}

inline void require_square(const Matrix& m, const std::string& name) {
  require(m.rows() == m.cols(), ErrorCode::DimensionMismatch,
          name + " must be square, got " + shape_of(m));
}

/// Builds a matrix from nested rows; rejects ragged or non-finite input.
inline Matrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.front().size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    require(static_cast<Eigen::Index>(row.size()) == c, ErrorCode::DimensionMismatch,
            "ragged matrix rows");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  require_finite(m, "matrix");
  return m;
}

inline std::vector<std::vector<double>> matrix_to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto& row = rows[static_cast<std::size_t>(i)];
    row.reserve(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
  }
  return rows;
}

struct SpectralReport {
  std::vector<double> real_parts;
  double min_real_part = 0.0;
  // -M is Hurwitz iff every eigenvalue of M has positive real part.
  bool hurwitz_for_negation = false;
};

inline SpectralReport spectral_report(const Matrix& m) {
  require_square(m, "spectral_report input");
  require_finite(m, "spectral_report input");
  SpectralReport report;
  if (m.rows() == 0) {
    report.min_real_part = std::numeric_limits<double>::infinity();
    report.hurwitz_for_negation = true;
    return report;
  }
  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
  require(solver.info() == Eigen::Success, ErrorCode::NonConvergence,
          "eigenvalue iteration failed for " + shape_of(m) + " matrix");
  const auto& values = solver.eigenvalues();
  report.real_parts.reserve(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) report.real_parts.push_back(values[i].real());
  std::sort(report.real_parts.begin(), report.real_parts.end());
  report.min_real_part = report.real_parts.front();
  report.hurwitz_for_negation = report.min_real_part > 0.0;
  return report;
}

inline void require_negation_hurwitz(const Matrix& b, const std::string& name) {
  const auto report = spectral_report(b);
  require(report.hurwitz_for_negation, ErrorCode::NotHurwitz,
          "-(" + name + ") is not Hurwitz: min real part of eigenvalues of " + name + " is " +
              std::to_string(report.min_real_part));
}

/// Solves B S + S B^T = C by Kronecker vectorization,
/// (I (x) B + B (x) I) vec(S) = vec(C), and returns the symmetrized solution.
inline Matrix solve_lyapunov(const Matrix& b, const Matrix& c) {
  require_square(b, "Lyapunov drift");
  require_square(c, "Lyapunov right-hand side");
  require(b.rows() == c.rows(), ErrorCode::DimensionMismatch,
          "drift " + shape_of(b) + " vs right-hand side " + shape_of(c));
  require(b.rows() <= kMaxLyapunovDim, ErrorCode::Unsupported,
          "dense Lyapunov solve limited to dimension 16");
  require_finite(c, "Lyapunov right-hand side");
  require_negation_hurwitz(b, "B");

  const Eigen::Index d = b.rows();
  if (d == 0) return Matrix(0, 0);
  const Matrix id = Matrix::Identity(d, d);
  Matrix kron(d * d, d * d);
  // Column-major vec: vec(B S) = (I (x) B) vec(S), vec(S B^T) = (B (x) I) vec(S).
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      kron.block(i * d, j * d, d, d) = id(i, j) * b + b(i, j) * id;
    }
  }
  const Vector rhs = c.reshaped();
  const Vector sol = kron.fullPivLu().solve(rhs);
  Matrix sigma = sol.reshaped(d, d);
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  require_finite(sigma, "Lyapunov solution");
  return sigma;
}

inline Matrix matrix_exp(const Matrix& m, double t) {
  require_square(m, "matrix_exp input");
  require(std::isfinite(t), ErrorCode::NonFinite, "matrix_exp scale must be finite");
  if (m.rows() == 0) return m;
  const Matrix scaled = t * m;
  return scaled.exp();
}

inline double frobenius_relative(const Matrix& estimate, const Matrix& reference) {
  require(estimate.rows() == reference.rows() && estimate.cols() == reference.cols(),
          ErrorCode::DimensionMismatch,
          "estimate " + shape_of(estimate) + " vs reference " + shape_of(reference));
  return (estimate - reference).norm() / std::max(reference.norm(), 1e-12);
}

inline double lyapunov_residual(const Matrix& b, const Matrix& sigma, const Matrix& c) {
  return (b * sigma + sigma * b.transpose() - c).norm();
}

/// Returns L with L L^T = S for a symmetric PSD S. Tries Cholesky, then a
/// 1e-12 diagonal jitter, then a clamped eigendecomposition (which keeps
/// exactly-singular blocks such as zero covariances exactly zero).
inline Matrix psd_factor(const Matrix& s, const std::string& name) {
  require_square(s, name);
  require_finite(s, name);
  const Eigen::Index d = s.rows();
  if (d == 0) return s;
  const Matrix sym = 0.5 * (s + s.transpose());
  const double scale = std::max(1.0, sym.cwiseAbs().maxCoeff());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  require(eig.info() == Eigen::Success, ErrorCode::CholeskyFailure,
          name + ": eigendecomposition failed");
  const double min_eig = eig.eigenvalues().minCoeff();
  require(min_eig >= -1e-10 * scale, ErrorCode::CholeskyFailure,
          name + " is not positive semidefinite (min eigenvalue " + std::to_string(min_eig) + ")");

  if (min_eig > 0.0) {
    Eigen::LLT<Matrix> llt(sym);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::LLT<Matrix> jittered(sym + 1e-12 * Matrix::Identity(d, d));
    if (jittered.info() == Eigen::Success) return jittered.matrixL();
  }
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal();
}

inline double min_symmetric_eigenvalue(const Matrix& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

}  // namespace ttsa

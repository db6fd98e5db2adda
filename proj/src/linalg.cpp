#include "rslq/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace rslq {

double frobenius_norm(const Matrix& m) {
  return std::sqrt((m * m.transpose()).trace());
}

bool spectral_trace_bound_check(const Matrix& a, const Matrix& b) {
  constexpr double slack = 1e-10;
  const double lhs = (a * b).trace();
  const double rhs = max_eigenvalue(a) * b.trace();
  const bool trace_ok = lhs <= rhs + slack;
  const bool norm_ok = frobenius_norm(a * b) <= frobenius_norm(a) * frobenius_norm(b) + slack;
  return trace_ok && norm_ok;
}

double min_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 1) return symmetric(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eigenvalue(const Matrix& symmetric) {
  if (symmetric.size() == 1) return symmetric(0, 0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double asymmetry(const Matrix& m) {
  if (m.rows() != m.cols()) return INFINITY;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

double clip_to_psd(Matrix& symmetric) {
  if (symmetric.size() == 1) {
    if (symmetric(0, 0) >= 0.0) return 0.0;
    const double change = -symmetric(0, 0);
    symmetric(0, 0) = 0.0;
    return change;
  }
  if (Eigen::LLT<Matrix> llt(symmetric); llt.info() == Eigen::Success &&
                                          (Matrix(llt.matrixL()).diagonal().array() > 0.0).all()) {
    return 0.0;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric);
  if (es.eigenvalues().minCoeff() >= 0.0) return 0.0;
  const Vector clipped = es.eigenvalues().cwiseMax(0.0);
  Matrix projected = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  symmetrize(projected);
  const double change = frobenius_norm(projected - symmetric);
  symmetric = std::move(projected);
  return change;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool within_guard(const Matrix& m, double guard) {
  return m.allFinite() && (m.size() == 0 || m.cwiseAbs().maxCoeff() <= guard);
}

std::optional<Eigen::LLT<Matrix>> try_spd_factor(const Matrix& m) {
  if (!m.allFinite()) return std::nullopt;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  // LLT succeeds on tiny negative pivots in some builds; require a positive diagonal.
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) return std::nullopt;
  }
  return llt;
}

}  // namespace rslq

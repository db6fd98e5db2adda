#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <optional>

namespace rslq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Entry magnitude above which a solver reports BlowUp.
inline constexpr double kOverflowGuard = 1e12;

/// (tr(MMᵀ))^{1/2}.
double frobenius_norm(const Matrix& m);

/// Checks tr(AB) ≤ λ_max(A)·tr(B) and |AB| ≤ |A||B| (slack 1e-10) for
/// symmetric A and symmetric positive semidefinite B.
bool spectral_trace_bound_check(const Matrix& a, const Matrix& b);

double min_eigenvalue(const Matrix& symmetric);
double max_eigenvalue(const Matrix& symmetric);

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline void symmetrize(Matrix& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

/// Largest |M - Mᵀ| entry.
double asymmetry(const Matrix& m);

/// Projects a symmetric matrix onto the PSD cone by eigenvalue clipping.
/// Returns the Frobenius size of the change.
double clip_to_psd(Matrix& symmetric);

bool all_finite(const Matrix& m);
bool within_guard(const Matrix& m, double guard = kOverflowGuard);

/// Cholesky factorization that reports failure instead of returning garbage.
/// An empty optional means the matrix is not numerically SPD.
std::optional<Eigen::LLT<Matrix>> try_spd_factor(const Matrix& m);

}  // namespace rslq

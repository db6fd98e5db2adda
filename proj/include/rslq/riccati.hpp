#pragma once

#include "rslq/grid.hpp"
#include "rslq/linalg.hpp"
#include "rslq/problem.hpp"

#include <span>
#include <vector>

namespace rslq {

struct RiccatiDiagnostics {
  /// Minimum eigenvalue of R + DᵀPD, nodes x regimes.
  Matrix inner_min_eigenvalue;
  /// Outer fixed-point iterations (1 for the direct solver). For windowed
  /// Picard runs this is the sum over windows.
  std::size_t iterations = 1;
  /// Number of windows the horizon was split into (1 unless the fallback ran).
  std::size_t windows = 1;
  /// Sup-Frobenius distance between successive iterates, per iteration.
  std::vector<double> residuals;
};

/// Grid-sampled solution of the coupled Riccati system.
///
/// P and Γ are indexed by (node, regime). Λ is identically zero here because
/// the deterministic-coefficient equation has no martingale part. `drift`
/// holds -dP/dt at each node and feeds the Hermite interpolant used by the
/// adjoint integrator.
struct RiccatiSolution {
  TimeGrid grid;
  std::size_t regimes = 0;
  std::vector<Matrix> P;
  std::vector<Matrix> Lambda;
  std::vector<Matrix> Gamma;
  std::vector<Matrix> drift;
  RiccatiDiagnostics diagnostics;

  RiccatiSolution(TimeGrid g, std::size_t ell) : grid(g), regimes(ell) {}

  std::size_t index(std::size_t node, std::size_t regime) const { return node * regimes + regime; }
  const Matrix& P_at(std::size_t node, std::size_t regime) const { return P[index(node, regime)]; }
  const Matrix& Gamma_at(std::size_t node, std::size_t regime) const {
    return Gamma[index(node, regime)];
  }
  const Matrix& Lambda_at(std::size_t node, std::size_t regime) const {
    return Lambda[index(node, regime)];
  }

  /// Cubic Hermite interpolation of P(·, regime) at t, fourth-order accurate.
  Matrix P_interpolated(double t, std::size_t regime) const;
};

/// PA + AᵀP + CᵀPC + Q + Σ_j q_ij P(j) − (PB + CᵀPD)(R + DᵀPD)⁻¹(BᵀP + DᵀPC),
/// symmetrized. This is −dP(·,i)/dt for deterministic coefficients.
/// Throws SingularInnerMatrix when R + DᵀPD is not SPD.
Matrix riccati_drift(double t, std::span<const Matrix> P_all, const ProblemSpec& spec,
                     std::size_t regime);

/// Same drift with the coupling sum supplied by the caller and coefficients
/// already evaluated.
Matrix riccati_drift(const RegimeCoefficients& c, const Matrix& P, const Matrix& coupling,
                     double t, std::size_t regime);

/// Gain Γ = (R + DᵀPD)⁻¹(BᵀP + DᵀPC + DᵀΛ).
Matrix feedback_gain(const RegimeCoefficients& c, const Matrix& P, const Matrix& Lambda);

/// Backward classical RK4 of the coupled system from P(T, i) = G(i).
RiccatiSolution solve_riccati_ode(const ProblemSpec& spec, const TimeGrid& grid);

/// Fixed-point iteration: each sweep solves every regime's equation with the
/// off-regime coupling frozen at the previous iterate, starting from
/// p⁰(t, i) = G(i). Stops when the sup-Frobenius distance between iterates is
/// at most `tol`. If the whole-horizon iteration does not converge in
/// `max_iter` sweeps, the horizon is split into 2, 4, ... windows solved from
/// the terminal end. Throws NoConvergence if even one-step windows fail.
RiccatiSolution solve_riccati_picard(const ProblemSpec& spec, const TimeGrid& grid, double tol,
                                     std::size_t max_iter);

/// sup over nodes and regimes of |D R⁻¹ Dᵀ|. Reported, not enforced.
/// Throws SingularR if R is not SPD at some node.
double check_condition_lsigma(const ProblemSpec& spec, const TimeGrid& grid);

/// Largest sup-Frobenius distance between two solutions on the same grid.
double sup_distance(const RiccatiSolution& a, const RiccatiSolution& b);

}  // namespace rslq

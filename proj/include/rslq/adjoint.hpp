#pragma once

#include "rslq/grid.hpp"
#include "rslq/linalg.hpp"
#include "rslq/problem.hpp"
#include "rslq/riccati.hpp"

#include <vector>

namespace rslq {

/// Grid-sampled (K, L) per regime. L ≡ 0 for deterministic coefficients.
struct AdjointSolution {
  TimeGrid grid;
  std::size_t regimes = 0;
  std::vector<Vector> K;
  std::vector<Vector> L;
  std::size_t iterations = 1;

  AdjointSolution(TimeGrid g, std::size_t ell) : grid(g), regimes(ell) {}

  std::size_t index(std::size_t node, std::size_t regime) const { return node * regimes + regime; }
  const Vector& K_at(std::size_t node, std::size_t regime) const { return K[index(node, regime)]; }
  const Vector& L_at(std::size_t node, std::size_t regime) const { return L[index(node, regime)]; }
};

/// Per-regime coefficients of the adjoint equation written as
/// dK = -[αᵀK + βᵀL + γᵀL + η + Σ_j q_ij K(j)]dt + L dW.
struct AdjointPieces {
  Matrix alpha;  // A - BΓ
  Matrix beta;   // C - D(R+DᵀPD)⁻¹(BᵀP + DᵀPC)
  Matrix gamma;  // -D(R+DᵀPD)⁻¹DᵀΛ
  Vector eta;    // Γᵀ(DᵀPσ - Rr) + Qq - Pb - CᵀPσ - Λσ
};

AdjointPieces adjoint_pieces(const RegimeCoefficients& c, const Matrix& P, const Matrix& Lambda);

/// The adjoint equation for all regimes stacked into one nℓ-dimensional
/// system. Keeps references to `spec` and `riccati`; both must outlive it.
class StackedLinearSystem {
 public:
  StackedLinearSystem(const ProblemSpec& spec, const RiccatiSolution& riccati);

  std::size_t dimension() const { return static_cast<std::size_t>(spec_->n) * riccati_->regimes; }

  /// Block-diagonal α(t, i) plus the transposed generator block matrix (Q ⊗ I_n)ᵀ.
  Matrix alpha_bar(double t) const;
  Matrix beta_bar(double t) const;
  Matrix gamma_bar(double t) const;
  Vector eta_bar(double t) const;
  /// Stacked G(i)g(i).
  Vector xi_bar() const;

  /// α̲ᵀ and η̲ together, for the integrator.
  void drift_terms(double t, Matrix& alpha_bar_transposed, Vector& eta) const;

 private:
  AdjointPieces pieces(double t, std::size_t regime) const;

  const ProblemSpec* spec_;
  const RiccatiSolution* riccati_;
};

StackedLinearSystem assemble_stacked_system(const ProblemSpec& spec, const RiccatiSolution& riccati);

/// Backward RK4 of dK̲/dt = -(α̲ᵀK̲ + η̲) from K̲(T) = ξ̲, unstacked per regime; L ≡ 0.
/// P between nodes comes from the Riccati solution's Hermite interpolant.
AdjointSolution solve_adjoint_ode(const ProblemSpec& spec, const RiccatiSolution& riccati,
                                  const TimeGrid& grid);

}  // namespace rslq

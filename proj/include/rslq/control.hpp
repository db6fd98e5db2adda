#pragma once

#include "rslq/adjoint.hpp"
#include "rslq/chain.hpp"
#include "rslq/grid.hpp"
#include "rslq/lsmc.hpp"
#include "rslq/problem.hpp"
#include "rslq/riccati.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rslq {

/// u*(t, X, i) = -Γ(t̂, i)X + φ(t̂, i), t̂ the last grid node at or before t.
struct FeedbackPolicy {
  TimeGrid grid;
  std::size_t regimes = 0;
  std::vector<Matrix> Gamma;
  std::vector<Vector> phi;

  FeedbackPolicy(TimeGrid g, std::size_t ell) : grid(g), regimes(ell) {}

  std::size_t index(std::size_t node, std::size_t regime) const { return node * regimes + regime; }
  const Matrix& Gamma_at(std::size_t node, std::size_t regime) const { return Gamma[index(node, regime)]; }
  const Vector& phi_at(std::size_t node, std::size_t regime) const { return phi[index(node, regime)]; }

  Vector evaluate(double t, const Vector& x, std::size_t regime) const;
  void evaluate_at_node(std::size_t node, const Vector& x, std::size_t regime, Vector& u) const;
};

/// φ = (R+DᵀPD)⁻¹(BᵀK + DᵀL - DᵀPσ + Rr).
Vector feedback_offset(const RegimeCoefficients& c, const Matrix& P, const Vector& K, const Vector& L);

FeedbackPolicy build_policy(const RiccatiSolution& riccati, const AdjointSolution& adjoint,
                            const ProblemSpec& spec);

struct ValueReport {
  double V = 0.0;
  std::vector<std::pair<std::string, double>> terms;
  /// Monte Carlo standard error of V; absent for the quadrature evaluation.
  std::optional<double> standard_error;

  double term(const std::string& name) const;
};

/// Optimal value with regime expectations from the occupation table and
/// time integrals by the trapezoid rule on the shared grid.
ValueReport optimal_value(const ProblemSpec& spec, const RiccatiSolution& riccati,
                          const AdjointSolution& adjoint, const OccupationTable& occupation);

/// The same expression averaged over joint (W, α) paths with fields read from
/// the regression tables. Each Brownian path is paired with `chain_paths`
/// regime paths.
ValueReport optimal_value_mc(const ProblemSpec& spec, const StochasticFieldSolution& sre,
                             const StochasticFieldSolution& adj, const BrownianGrid& bg,
                             std::size_t chain_paths, std::uint64_t seed);

/// Feedback law for random coefficients, evaluated from the regression tables
/// at the current (t̂, W_t, i). Keeps references to its arguments.
class StochasticFeedbackPolicy {
 public:
  StochasticFeedbackPolicy(const ProblemSpec& spec, const StochasticFieldSolution& sre,
                           const StochasticFieldSolution& adj);

  const TimeGrid& grid() const { return sre_->grid; }
  void evaluate_at_node(std::size_t node, double w, const Vector& x, std::size_t regime,
                        Vector& u) const;
  /// Γ and φ at (node, regime, w).
  std::pair<Matrix, Vector> gain_and_offset(std::size_t node, std::size_t regime, double w) const;

 private:
  const ProblemSpec* spec_;
  const StochasticFieldSolution* sre_;
  const StochasticFieldSolution* adj_;
};

}  // namespace rslq

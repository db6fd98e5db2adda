#pragma once

#include "rslq/expression.hpp"
#include "rslq/grid.hpp"
#include "rslq/linalg.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rslq {

enum class RandomnessMode { Deterministic, BrownianMarkovian };

std::string to_string(RandomnessMode mode);
RandomnessMode randomness_mode_from_string(const std::string& s);

struct Tolerances {
  double psd = 1e-8;
  double sym = 1e-10;
  double gen = 1e-12;
};

/// Generator of the regime chain: nonnegative off-diagonal rates, zero row sums.
struct Generator {
  Matrix rates;

  std::size_t regimes() const { return static_cast<std::size_t>(rates.rows()); }
  double rate(std::size_t i, std::size_t j) const { return rates(i, j); }
};

/// Coefficient processes of one regime. Vectors are stored as n x 1 / m x 1.
struct CoefficientSet {
  CoefficientFunction A, B, C, D;
  CoefficientFunction b, sigma;
  CoefficientFunction Q, R;
  CoefficientFunction q_target, r_target;
  std::optional<CoefficientFunction> S;

  bool depends_on_w() const;
};

struct TerminalData {
  CoefficientFunction G;
  CoefficientFunction g;
};

/// Coefficients of one regime evaluated at a single (t, w).
struct RegimeCoefficients {
  Matrix A, B, C, D, Q, R;
  Vector b, sigma, q, r;
  std::optional<Matrix> S;
};

/// One instance of the regime-switching LQ problem.
///
/// Regimes are 0-based here; configs and reports use 1-based numbering.
struct ProblemSpec {
  int n = 1;
  int m = 1;
  double horizon = 1.0;
  Generator generator;
  std::vector<CoefficientSet> coefficients;
  std::vector<TerminalData> terminal;
  Vector x;
  std::size_t initial_regime = 0;
  double lambda_min = 1.0;
  RandomnessMode mode = RandomnessMode::Deterministic;
  Tolerances tol;
  /// Set by reduce_cross_term: the original control is u = ũ - shift(t, w) X.
  std::optional<std::vector<CoefficientFunction>> control_shift;

  std::size_t regimes() const { return coefficients.size(); }
  bool deterministic() const { return mode == RandomnessMode::Deterministic; }

  RegimeCoefficients evaluate(std::size_t regime, double t, double w = 0.0) const;
  void evaluate_into(std::size_t regime, double t, double w, RegimeCoefficients& out) const;
  Matrix terminal_G(std::size_t regime, double w = 0.0) const;
  Vector terminal_g(std::size_t regime, double w = 0.0) const;
};

/// Builds a spec of the given dimensions with every coefficient zero except R = I,
/// generator zero, x = 0. Callers fill in what they need.
ProblemSpec make_zero_spec(int n, int m, std::size_t regimes, double horizon);

/// Running cost ⟨Q(X-q),X-q⟩ + 2⟨S(X-q),u-r⟩ + ⟨R(u-r),u-r⟩ at evaluated coefficients.
double running_cost(const RegimeCoefficients& c, const Vector& x, const Vector& u);

struct ValidationIssue {
  bool fatal = true;
  std::optional<std::size_t> regime;  // 1-based
  std::optional<std::size_t> node;
  double value = 0.0;
  std::string message;
  /// The solvers detect this condition themselves and fail with a located
  /// error (R + DᵀPD not factorizable), so a pipeline may defer to them.
  bool checked_by_solver = false;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool valid() const;
  std::size_t fatal_count() const;
  /// Fatal issues other than those the solvers check themselves.
  std::size_t blocking_count() const;
  std::string to_string() const;
};

/// Checks structure, generator rates, and the sign conditions on Q, R, G at
/// every grid node. Never throws; each violated condition is reported once
/// per regime with the first offending node and the number of nodes affected.
ValidationReport validate_spec(const ProblemSpec& spec, const TimeGrid& grid);

/// Eliminates the cross weight S: Ã = A - BR⁻¹S, C̃ = C - DR⁻¹S,
/// Q̃ = Q - SᵀR⁻¹S, r̃ = r + R⁻¹Sq. The control map ũ = u + R⁻¹S X is kept in
/// `control_shift`. Specs without S are returned unchanged. R and Q̃ are
/// checked on `grid` (SingularR, IndefiniteReducedQ).
ProblemSpec reduce_cross_term(const ProblemSpec& spec, const TimeGrid& grid);
ProblemSpec reduce_cross_term(const ProblemSpec& spec);

}  // namespace rslq

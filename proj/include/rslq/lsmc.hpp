#pragma once

#include "rslq/grid.hpp"
#include "rslq/linalg.hpp"
#include "rslq/problem.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rslq {

/// M sampled Brownian paths on a grid. Rows are paths.
struct BrownianGrid {
  TimeGrid grid;
  std::size_t paths = 0;
  Matrix increments;  // M x N, each entry ~ N(0, Δt)
  Matrix values;      // M x (N+1), W_{t_k}; column 0 is zero

  BrownianGrid(TimeGrid g, std::size_t m) : grid(g), paths(m) {}
};

BrownianGrid simulate_brownian_grid(const TimeGrid& grid, std::size_t paths, std::uint64_t seed);

/// Monomials 1, w, ..., w^d.
struct RegressionBasis {
  int degree = 3;

  std::size_t size() const { return static_cast<std::size_t>(degree) + 1; }
  void features(double w, double* out) const;
  Matrix design(const Vector& w) const;
};

/// Ridge least squares of each column of `targets` on the basis evaluated at
/// `w`. The intercept is not penalized, so constant targets are reproduced
/// exactly. Throws DegenerateDesign.
struct RegressionFit {
  Matrix coefficients;  // basis size x targets.cols()
  Matrix fitted;        // rows(targets) x targets.cols()
};

RegressionFit regress_conditional_expectation(const Matrix& targets, const Vector& w,
                                              const RegressionBasis& basis, double ridge);

/// Regression tables for a field Y(t_k, w, i) and its martingale part Z.
///
/// Regression at node k uses the standardized variable w / sqrt(t_k) (or w
/// itself at t = 0), so the tables are only meaningful together with
/// `scale`. Matrix fields are flattened column-major into rows x cols.
struct StochasticFieldSolution {
  TimeGrid grid;
  std::size_t paths = 0;
  std::size_t regimes = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  RegressionBasis basis;
  /// Symmetrize and clip to the PSD cone on evaluation (P fields).
  bool psd = false;
  std::vector<double> scale;
  std::vector<Matrix> value_coefficients;       // per node*regimes + regime
  std::vector<Matrix> martingale_coefficients;  // per node*regimes + regime

  std::size_t iterations = 0;
  std::vector<double> residuals;
  /// Fraction of (node, regime) pairs where clipping moved some path by more than 1e-6.
  double clip_fraction = 0.0;

  StochasticFieldSolution(TimeGrid g, std::size_t m, std::size_t ell, Eigen::Index r,
                          Eigen::Index c, RegressionBasis b, bool project);

  std::size_t index(std::size_t node, std::size_t regime) const { return node * regimes + regime; }

  Matrix value(std::size_t node, std::size_t regime, double w) const;
  Matrix martingale(std::size_t node, std::size_t regime, double w) const;

  /// Intercept of the node-0 table: the estimate at W_0 = 0.
  Matrix value_at_origin(std::size_t regime) const { return value(0, regime, 0.0); }

  /// max_k sqrt(Σ_{k' ≥ k} mean_paths |Z(t_k', W, i)|² Δt), max over regimes.
  double bmo_surrogate(const BrownianGrid& bg) const;
};

/// Backward regression with outer Picard iterations for the stochastic
/// Riccati equation. Requires brownian_markovian mode.
StochasticFieldSolution solve_sre_lsmc(const ProblemSpec& spec, const BrownianGrid& bg,
                                       const RegressionBasis& basis, double tol,
                                       std::size_t max_iter, double ridge = 1e-8);

/// One backward regression sweep for the stacked adjoint equation.
StochasticFieldSolution solve_adjoint_lsmc(const ProblemSpec& spec,
                                           const StochasticFieldSolution& sre,
                                           const BrownianGrid& bg, const RegressionBasis& basis,
                                           double ridge = 1e-8);

/// sup over nodes, paths and regimes of |D R⁻¹ Dᵀ|.
double check_condition_lsigma_paths(const ProblemSpec& spec, const BrownianGrid& bg);

/// RLQ1 table dump: "RLQ1", u32 version, u64 nodes/regimes/rows/cols/degree/psd,
/// f64 horizon, f64 scale[nodes], then value and martingale tables, all little-endian.
void save_field_tables(const StochasticFieldSolution& field, const std::filesystem::path& path);
StochasticFieldSolution load_field_tables(const std::filesystem::path& path);

}  // namespace rslq

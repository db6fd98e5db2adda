#pragma once

#include "rslq/adjoint.hpp"
#include "rslq/chain.hpp"
#include "rslq/control.hpp"
#include "rslq/grid.hpp"
#include "rslq/problem.hpp"
#include "rslq/riccati.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace rslq {

/// State of one path at the start of an Euler step.
struct ControlContext {
  std::size_t node;
  double t;
  std::size_t regime;
  double w;  // W_t on this path
};

/// Writes the control for the given context and state into `u` (size m).
using ControlSource = std::function<void(const ControlContext&, const Vector& x, Vector& u)>;

ControlSource policy_control(const FeedbackPolicy& policy);
ControlSource stochastic_policy_control(const StochasticFeedbackPolicy& policy);
/// u*(t, X, i) + δ.
ControlSource shifted_control(ControlSource base, Vector delta);
/// Runs a control for a reduced spec (see reduce_cross_term) on the original
/// problem: u = ũ - R⁻¹S X.
ControlSource map_back_control(const ProblemSpec& reduced, ControlSource reduced_control);

struct SimulationOptions {
  std::uint64_t seed = 0;
  /// Brownian increments are drawn on a grid this many times finer and
  /// summed, so runs with N·substeps fixed share their Brownian paths.
  std::size_t brownian_substeps = 1;
  bool keep_paths = false;
};

struct PathRecord {
  RegimePath regimes;
  std::vector<double> increments;
  std::vector<Vector> states;
  double cost = 0.0;
  bool blown = false;
};

struct SimulationBatch {
  std::size_t paths = 0;
  std::vector<double> costs;    // per path; NaN where the path blew up
  std::vector<double> extra;    // per-path observer integral, if any
  std::size_t blowups = 0;
  double mean = 0.0;
  double std_error = 0.0;
  double ci99_half_width = 0.0;
  double extra_mean = 0.0;
  double extra_std_error = 0.0;
  std::vector<PathRecord> records;  // only with keep_paths
};

/// Called at every Euler step; the result is integrated in time (left rule)
/// and reported per path in SimulationBatch::extra.
using StepObserver = std::function<double(const ControlContext&, const Vector& x, const Vector& u)>;

/// Euler–Maruyama simulation of the controlled state with left-endpoint
/// cost quadrature. Coefficients are frozen at the regime in force at t_k.
/// Throws BlowUp when more than 0.1% of the paths leave the overflow guard.
SimulationBatch estimate_cost(const ProblemSpec& spec, const ControlSource& control,
                              const TimeGrid& grid, std::size_t paths,
                              const SimulationOptions& options,
                              const StepObserver& observer = nullptr);

/// Requires the simulation grid to equal or refine the policy grid.
SimulationBatch simulate_closed_loop(const ProblemSpec& spec, const FeedbackPolicy& policy,
                                     const TimeGrid& grid, std::size_t paths,
                                     const SimulationOptions& options);

struct DecompositionReport {
  double J = 0.0;
  double J_std_error = 0.0;
  double V = 0.0;
  double penalty = 0.0;
  double penalty_std_error = 0.0;
  double discrepancy = 0.0;  // J - V - penalty
  double pooled_std_error = 0.0;
  std::size_t blowups = 0;
  ValueReport value;

  bool within(double k) const { return std::abs(discrepancy) <= k * pooled_std_error; }
};

/// Estimates J(u) and V + E∫⟨(R+DᵀPD)(u - v), u - v⟩dt along the same paths,
/// v being the optimal feedback evaluated on the simulated state.
DecompositionReport cost_decomposition(const ProblemSpec& spec, const RiccatiSolution& riccati,
                                       const AdjointSolution& adjoint, const FeedbackPolicy& policy,
                                       const ControlSource& test_control, const TimeGrid& grid,
                                       std::size_t paths, const SimulationOptions& options);

}  // namespace rslq

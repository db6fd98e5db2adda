#pragma once

#include "rslq/grid.hpp"
#include "rslq/linalg.hpp"
#include "rslq/problem.hpp"
#include "rslq/rng.hpp"

#include <cstdint>
#include <vector>

namespace rslq {

/// Piecewise-constant, right-continuous regime trajectory on [0, T].
struct RegimePath {
  std::vector<double> jump_times;   // strictly increasing, in (0, T]
  std::vector<std::size_t> states;  // states.size() == jump_times.size() + 1

  std::size_t state_at(double t) const;
  std::size_t terminal_state() const { return states.back(); }
};

/// Embedded-chain sampler: exponential holding time with rate -q_ii, then a
/// jump to j != i with probability q_ij / (-q_ii). States with q_ii = 0 absorb.
RegimePath sample_regime_path(const Generator& generator, std::size_t initial, double horizon,
                              Engine& engine);

/// Marginal law p_i(t) = P(α_t = i | α_0 = initial) on a grid.
struct OccupationTable {
  TimeGrid grid;
  Matrix probs;  // nodes x regimes

  Vector at(std::size_t node) const { return probs.row(static_cast<Eigen::Index>(node)).transpose(); }
};

/// Forward Kolmogorov equation p' = pQ, classical RK4 on the grid, rows renormalized.
OccupationTable occupation_probabilities(const Generator& generator, std::size_t initial,
                                         const TimeGrid& grid);

}  // namespace rslq

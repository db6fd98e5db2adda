#pragma once

#include "rslq/errors.hpp"

#include <cstddef>
#include <string>

namespace rslq {

/// Uniform grid t_k = kT/N, k = 0..N.
class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (steps == 0) throw DimensionError("TimeGrid needs at least one step");
    if (!(horizon > 0.0)) throw DimensionError("TimeGrid horizon must be positive");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t nodes() const noexcept { return steps_ + 1; }
  double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t k) const noexcept {
    return k == steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
  }

  /// Index of the last node at or before t (clamped to [0, N]).
  std::size_t node_at_or_before(double t) const noexcept;

  bool operator==(const TimeGrid& other) const noexcept {
    return horizon_ == other.horizon_ && steps_ == other.steps_;
  }

  /// Whether every node of `coarse` is a node of this grid.
  bool refines(const TimeGrid& coarse) const noexcept {
    return horizon_ == coarse.horizon_ && steps_ % coarse.steps_ == 0;
  }

 private:
  double horizon_;
  std::size_t steps_;
};

inline std::size_t TimeGrid::node_at_or_before(double t) const noexcept {
  if (t <= 0.0) return 0;
  if (t >= horizon_) return steps_;
  auto k = static_cast<std::size_t>(t / horizon_ * static_cast<double>(steps_));
  // Guard against rounding just past a node.
  while (k > 0 && time(k) > t) --k;
  while (k < steps_ && time(k + 1) <= t) ++k;
  return k;
}

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const std::string& what) {
  if (!(a == b)) {
    throw GridMismatch(what + ": grids differ (N=" + std::to_string(a.steps()) + " vs N=" +
                       std::to_string(b.steps()) + ")");
  }
}

}  // namespace rslq

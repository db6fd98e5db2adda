#include "rslq/chain.hpp"

#include <algorithm>

namespace rslq {

std::size_t RegimePath::state_at(double t) const {
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  return states[static_cast<std::size_t>(it - jump_times.begin())];
}

RegimePath sample_regime_path(const Generator& generator, std::size_t initial, double horizon,
                              Engine& engine) {
  RegimePath path;
  path.states.push_back(initial);
  const std::size_t ell = generator.regimes();
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double t = 0.0;
  std::size_t state = initial;
  for (;;) {
    const double exit_rate = -generator.rate(state, state);
    if (!(exit_rate > 0.0)) break;
    std::exponential_distribution<double> holding(exit_rate);
    t += holding(engine);
    if (t > horizon) break;
    // Choose the destination proportionally to the off-diagonal rates.
    const double target = uniform(engine) * exit_rate;
    double acc = 0.0;
    std::size_t next = state;
    for (std::size_t j = 0; j < ell; ++j) {
      if (j == state) continue;
      acc += generator.rate(state, j);
      next = j;
      if (target < acc) break;
    }
    if (next == state) break;
    path.jump_times.push_back(t);
    path.states.push_back(next);
    state = next;
  }
  return path;
}

OccupationTable occupation_probabilities(const Generator& generator, std::size_t initial,
                                         const TimeGrid& grid) {
  const auto ell = static_cast<Eigen::Index>(generator.regimes());
  OccupationTable table{grid, Matrix::Zero(static_cast<Eigen::Index>(grid.nodes()), ell)};
  Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(ell);
  p(static_cast<Eigen::Index>(initial)) = 1.0;
  table.probs.row(0) = p;
  const Matrix& q = generator.rates;
  const double h = grid.dt();
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const Eigen::RowVectorXd k1 = p * q;
    const Eigen::RowVectorXd k2 = (p + 0.5 * h * k1) * q;
    const Eigen::RowVectorXd k3 = (p + 0.5 * h * k2) * q;
    const Eigen::RowVectorXd k4 = (p + h * k3) * q;
    p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    p = p.cwiseMax(0.0);
    p /= p.sum();
    table.probs.row(static_cast<Eigen::Index>(k + 1)) = p;
  }
  return table;
}

}  // namespace rslq

#include "support.hpp"

#include <gtest/gtest.h>

using namespace rslq;
using namespace rslq::testing;

namespace {

struct Solved {
  ProblemSpec spec;
  RiccatiSolution ric;
  AdjointSolution adj;
  FeedbackPolicy policy;

  Solved(ProblemSpec s, const TimeGrid& grid)
      : spec(std::move(s)),
        ric(solve_riccati_ode(spec, grid)),
        adj(solve_adjoint_ode(spec, ric, grid)),
        policy(build_policy(ric, adj, spec)) {}
};

double variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST(Simulate, NoiselessTanhCostApproachesValue) {
  const TimeGrid grid(1.0, 2000);
  const Solved s(tanh_spec(), grid);
  const SimulationBatch batch = simulate_closed_loop(s.spec, s.policy, grid, 4, {});
  EXPECT_EQ(batch.blowups, 0u);
  EXPECT_NEAR(batch.mean, std::tanh(1.0), 2e-3);
  EXPECT_EQ(batch.costs[0], batch.costs[3]);
  EXPECT_EQ(batch.std_error, 0.0);
}

TEST(Simulate, SameSeedSameCosts) {
  const TimeGrid grid(1.0, 50);
  const Solved s(load_spec(config_path("two_regime.toml")), grid);
  SimulationOptions options;
  options.seed = 17;
  const SimulationBatch a = simulate_closed_loop(s.spec, s.policy, grid, 300, options);
  const SimulationBatch b = simulate_closed_loop(s.spec, s.policy, grid, 300, options);
  EXPECT_EQ(a.costs, b.costs);
  options.seed = 18;
  const SimulationBatch c = simulate_closed_loop(s.spec, s.policy, grid, 300, options);
  EXPECT_NE(a.costs, c.costs);
  EXPECT_NEAR(a.ci99_half_width, 2.5758293035489004 * a.std_error, 1e-12);
}

TEST(Simulate, SubstepsShareBrownianPaths) {
  const TimeGrid coarse(1.0, 50);
  const TimeGrid fine(1.0, 100);
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].sigma = constant(scalar(0.5));
  const Solved s(spec, coarse);
  SimulationOptions common;
  common.seed = 3;
  common.brownian_substeps = 2;
  const SimulationBatch a = simulate_closed_loop(s.spec, s.policy, coarse, 2000, common);
  common.brownian_substeps = 1;
  const SimulationBatch b = simulate_closed_loop(s.spec, s.policy, fine, 2000, common);
  std::vector<double> diff(a.costs.size());
  for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = a.costs[p] - b.costs[p];
  EXPECT_LT(variance(diff), 0.05 * variance(b.costs));
}

TEST(Simulate, KeepPathsRecordsStates) {
  const TimeGrid grid(1.0, 20);
  const Solved s(load_spec(config_path("two_regime.toml")), grid);
  SimulationOptions options;
  options.keep_paths = true;
  const SimulationBatch batch = simulate_closed_loop(s.spec, s.policy, grid, 5, options);
  ASSERT_EQ(batch.records.size(), 5u);
  EXPECT_EQ(batch.records[0].states.size(), grid.nodes());
  EXPECT_EQ(batch.records[0].increments.size(), grid.steps());
  EXPECT_LT((batch.records[0].states[0] - s.spec.x).norm(), 1e-15);
  EXPECT_EQ(batch.records[2].cost, batch.costs[2]);
}

TEST(Simulate, PolicyGridMustBeRefined) {
  const Solved s(tanh_spec(), TimeGrid(1.0, 30));
  EXPECT_THROW(simulate_closed_loop(s.spec, s.policy, TimeGrid(1.0, 40), 10, {}), GridMismatch);
}

TEST(Simulate, ExplodingPathsRaiseBlowUp) {
  ProblemSpec spec = make_zero_spec(1, 1, 1, 1.0);
  spec.coefficients[0].A = constant(scalar(60.0));
  spec.coefficients[0].sigma = constant(scalar(1.0));
  spec.x = Vector::Ones(1);
  const ControlSource zero = [](const ControlContext&, const Vector&, Vector& u) { u.setZero(); };
  EXPECT_THROW(estimate_cost(spec, zero, TimeGrid(1.0, 50), 100, {}), BlowUp);
}

TEST(Simulate, ObserverIntegratesInTime) {
  const TimeGrid grid(2.0, 40);
  ProblemSpec spec = tanh_spec();
  spec.horizon = 2.0;
  const ControlSource zero = [](const ControlContext&, const Vector&, Vector& u) { u.setZero(); };
  const StepObserver one = [](const ControlContext&, const Vector&, const Vector&) { return 1.0; };
  const SimulationBatch batch = estimate_cost(spec, zero, grid, 3, {}, one);
  EXPECT_NEAR(batch.extra_mean, 2.0, 1e-12);
  // Uncontrolled, undriven state stays at 1: cost is T.
  EXPECT_NEAR(batch.mean, 2.0, 1e-12);
}

TEST(Decomposition, OptimalControlHasZeroPenalty) {
  const TimeGrid grid(1.0, 100);
  const Solved s(load_spec(config_path("two_regime.toml")), grid);
  SimulationOptions options;
  options.seed = 5;
  const DecompositionReport r =
      cost_decomposition(s.spec, s.ric, s.adj, s.policy, policy_control(s.policy), grid, 4000, options);
  EXPECT_EQ(r.penalty, 0.0);
  EXPECT_TRUE(r.within(3.0)) << r.discrepancy << " vs " << r.pooled_std_error;
}

TEST(Decomposition, ShiftedControlPaysPenalty) {
  const TimeGrid grid(1.0, 100);
  const Solved s(load_spec(config_path("two_regime.toml")), grid);
  SimulationOptions options;
  options.seed = 6;
  const ControlSource shifted = shifted_control(policy_control(s.policy), Vector::Constant(1, 0.5));
  const DecompositionReport r = cost_decomposition(s.spec, s.ric, s.adj, s.policy, shifted, grid, 4000, options);
  EXPECT_GT(r.penalty, 0.1);
  EXPECT_TRUE(r.within(3.0)) << r.discrepancy << " vs " << r.pooled_std_error;
  EXPECT_NEAR(r.pooled_std_error, std::hypot(r.J_std_error, r.penalty_std_error), 1e-15);
}

TEST(Decomposition, MappedBackControlReproducesCosts) {
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].sigma = constant(scalar(0.3));
  spec.coefficients[0].S = constant(scalar(0.4));
  const TimeGrid grid(1.0, 50);
  const ProblemSpec reduced = reduce_cross_term(spec, grid);
  const Solved s(reduced, grid);
  SimulationOptions options;
  options.seed = 8;
  const SimulationBatch on_reduced = estimate_cost(reduced, policy_control(s.policy), grid, 500, options);
  const SimulationBatch on_original =
      estimate_cost(spec, map_back_control(reduced, policy_control(s.policy)), grid, 500, options);
  for (std::size_t p = 0; p < 500; ++p) {
    EXPECT_NEAR(on_reduced.costs[p], on_original.costs[p], 1e-10 * (1.0 + std::abs(on_reduced.costs[p])));
  }
}

#include "rslq/simulate.hpp"

#include "rslq/errors.hpp"
#include "rslq/rng.hpp"

#include <cmath>
#include <limits>

namespace rslq {

namespace {

struct Moments {
  double mean = 0.0;
  double std_error = 0.0;
};

Moments moments(const std::vector<double>& values, const std::vector<char>& skip) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    if (skip[p]) continue;
    sum += values[p];
    ++count;
  }
  Moments out;
  if (count == 0) return out;
  out.mean = sum / static_cast<double>(count);
  if (count < 2) return out;
  double sq = 0.0;
  for (std::size_t p = 0; p < values.size(); ++p) {
    if (skip[p]) continue;
    sq += (values[p] - out.mean) * (values[p] - out.mean);
  }
  out.std_error = std::sqrt(sq / static_cast<double>(count - 1) / static_cast<double>(count));
  return out;
}

constexpr double kZ99 = 2.5758293035489004;

}  // namespace

ControlSource policy_control(const FeedbackPolicy& policy) {
  return [&policy](const ControlContext& ctx, const Vector& x, Vector& u) {
    policy.evaluate_at_node(policy.grid.node_at_or_before(ctx.t), x, ctx.regime, u);
  };
}

ControlSource stochastic_policy_control(const StochasticFeedbackPolicy& policy) {
  return [&policy](const ControlContext& ctx, const Vector& x, Vector& u) {
    policy.evaluate_at_node(policy.grid().node_at_or_before(ctx.t), ctx.w, x, ctx.regime, u);
  };
}

ControlSource shifted_control(ControlSource base, Vector delta) {
  return [base = std::move(base), delta = std::move(delta)](const ControlContext& ctx,
                                                           const Vector& x, Vector& u) {
    base(ctx, x, u);
    u += delta;
  };
}

ControlSource map_back_control(const ProblemSpec& reduced, ControlSource reduced_control) {
  if (!reduced.control_shift) return reduced_control;
  return [&reduced, inner = std::move(reduced_control)](const ControlContext& ctx, const Vector& x,
                                                        Vector& u) {
    inner(ctx, x, u);
    u -= (*reduced.control_shift)[ctx.regime](ctx.t, ctx.w) * x;
  };
}

SimulationBatch estimate_cost(const ProblemSpec& spec, const ControlSource& control,
                              const TimeGrid& grid, std::size_t paths,
                              const SimulationOptions& options, const StepObserver& observer) {
  if (paths == 0) throw DimensionError("estimate_cost needs at least one path");
  if (options.brownian_substeps == 0) throw DimensionError("brownian_substeps must be positive");
  if (spec.x.size() != spec.n) throw DimensionError("initial state has the wrong dimension");
  const std::size_t ell = spec.regimes();
  const std::size_t steps = grid.steps();
  const double dt = grid.dt();
  const std::size_t sub = options.brownian_substeps;
  const double sub_sd = std::sqrt(dt / static_cast<double>(sub));

  // Coefficients that do not depend on w are tabulated once per (node, regime).
  std::vector<char> varies(ell);
  std::vector<RegimeCoefficients> table(steps * ell);
  for (std::size_t i = 0; i < ell; ++i) {
    varies[i] = spec.coefficients[i].depends_on_w() ? 1 : 0;
    if (varies[i]) continue;
    for (std::size_t k = 0; k < steps; ++k) spec.evaluate_into(i, grid.time(k), 0.0, table[k * ell + i]);
  }
  std::vector<char> terminal_varies(ell);
  std::vector<Matrix> G(ell);
  std::vector<Vector> g(ell);
  for (std::size_t i = 0; i < ell; ++i) {
    terminal_varies[i] = spec.terminal[i].G.depends_on_w() || spec.terminal[i].g.depends_on_w();
    G[i] = spec.terminal_G(i);
    g[i] = spec.terminal_g(i);
  }

  SimulationBatch batch;
  batch.paths = paths;
  batch.costs.assign(paths, 0.0);
  batch.extra.assign(paths, 0.0);
  std::vector<char> blown(paths, 0);
  if (options.keep_paths) batch.records.resize(paths);

  parallel_for(paths, [&](std::size_t begin, std::size_t end) {
    RegimeCoefficients scratch;
    Vector x(spec.n), x_next(spec.n), u(spec.m), drift(spec.n), diffusion(spec.n);
    for (std::size_t p = begin; p < end; ++p) {
      Engine regime_engine = make_engine(options.seed, StreamKind::Regime, p);
      Engine brownian_engine = make_engine(options.seed, StreamKind::Brownian, p);
      std::normal_distribution<double> normal(0.0, 1.0);
      RegimePath regimes = sample_regime_path(spec.generator, spec.initial_regime, grid.horizon(), regime_engine);
      PathRecord* record = options.keep_paths ? &batch.records[p] : nullptr;
      if (record) {
        record->increments.reserve(steps);
        record->states.reserve(steps + 1);
      }

      x = spec.x;
      if (record) record->states.push_back(x);
      double w = 0.0;
      double cost = 0.0;
      double extra = 0.0;
      bool failed = false;
      std::size_t jump = 0;
      for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time(k);
        while (jump < regimes.jump_times.size() && regimes.jump_times[jump] <= t) ++jump;
        const std::size_t i = regimes.states[jump];
        const RegimeCoefficients* c = &table[k * ell + i];
        if (varies[i]) {
          spec.evaluate_into(i, t, w, scratch);
          c = &scratch;
        }
        double dw = 0.0;
        for (std::size_t s = 0; s < sub; ++s) dw += sub_sd * normal(brownian_engine);

        const ControlContext ctx{k, t, i, w};
        control(ctx, x, u);
        cost += running_cost(*c, x, u) * dt;
        if (observer) extra += observer(ctx, x, u) * dt;

        drift.noalias() = c->A * x;
        drift.noalias() += c->B * u;
        drift += c->b;
        diffusion.noalias() = c->C * x;
        diffusion.noalias() += c->D * u;
        diffusion += c->sigma;
        x_next = x + drift * dt + diffusion * dw;
        x.swap(x_next);
        w += dw;
        if (record) {
          record->increments.push_back(dw);
          record->states.push_back(x);
        }
        if (!within_guard(x)) {
          failed = true;
          break;
        }
      }
      if (!failed) {
        const std::size_t i_end = regimes.terminal_state();
        Vector gap;
        double terminal = 0.0;
        if (terminal_varies[i_end]) {
          gap = x - spec.terminal_g(i_end, w);
          terminal = gap.dot(spec.terminal_G(i_end, w) * gap);
        } else {
          gap = x - g[i_end];
          terminal = gap.dot(G[i_end] * gap);
        }
        cost += terminal;
        failed = !std::isfinite(cost);
      }
      blown[p] = failed ? 1 : 0;
      batch.costs[p] = failed ? std::numeric_limits<double>::quiet_NaN() : cost;
      batch.extra[p] = failed ? std::numeric_limits<double>::quiet_NaN() : extra;
      if (record) {
        record->regimes = std::move(regimes);
        record->cost = batch.costs[p];
        record->blown = failed;
      }
    }
  });

  for (char b : blown) batch.blowups += b ? 1 : 0;
  if (static_cast<double>(batch.blowups) > 0.001 * static_cast<double>(paths)) {
    throw BlowUp(steps, std::to_string(batch.blowups) + " of " + std::to_string(paths) +
                            " paths left the overflow guard");
  }
  const Moments cm = moments(batch.costs, blown);
  batch.mean = cm.mean;
  batch.std_error = cm.std_error;
  batch.ci99_half_width = kZ99 * cm.std_error;
  if (observer) {
    const Moments em = moments(batch.extra, blown);
    batch.extra_mean = em.mean;
    batch.extra_std_error = em.std_error;
  }
  return batch;
}

SimulationBatch simulate_closed_loop(const ProblemSpec& spec, const FeedbackPolicy& policy,
                                     const TimeGrid& grid, std::size_t paths,
                                     const SimulationOptions& options) {
  if (!grid.refines(policy.grid)) {
    throw GridMismatch("simulation grid (N=" + std::to_string(grid.steps()) +
                       ") does not refine the policy grid (N=" + std::to_string(policy.grid.steps()) + ")");
  }
  return estimate_cost(spec, policy_control(policy), grid, paths, options);
}

DecompositionReport cost_decomposition(const ProblemSpec& spec, const RiccatiSolution& riccati,
                                       const AdjointSolution& adjoint, const FeedbackPolicy& policy,
                                       const ControlSource& test_control, const TimeGrid& grid,
                                       std::size_t paths, const SimulationOptions& options) {
  if (!spec.deterministic()) throw ModeError("cost_decomposition needs deterministic coefficients");
  require_same_grid(riccati.grid, policy.grid, "cost_decomposition");
  if (!grid.refines(policy.grid)) {
    throw GridMismatch("simulation grid does not refine the policy grid");
  }
  const std::size_t ell = spec.regimes();
  const TimeGrid& pgrid = policy.grid;

  std::vector<Matrix> inner(pgrid.nodes() * ell);
  for (std::size_t k = 0; k < pgrid.nodes(); ++k) {
    for (std::size_t i = 0; i < ell; ++i) {
      const RegimeCoefficients c = spec.evaluate(i, pgrid.time(k));
      const Matrix& P = riccati.P_at(k, i);
      inner[k * ell + i] = c.R + c.D.transpose() * P * c.D;
    }
  }

  const StepObserver penalty = [&](const ControlContext& ctx, const Vector& x, const Vector& u) {
    const std::size_t node = pgrid.node_at_or_before(ctx.t);
    thread_local Vector v;
    policy.evaluate_at_node(node, x, ctx.regime, v);
    const Vector gap = u - v;
    return gap.dot(inner[node * ell + ctx.regime] * gap);
  };

  const SimulationBatch batch = estimate_cost(spec, test_control, grid, paths, options, penalty);
  const OccupationTable occupation = occupation_probabilities(spec.generator, spec.initial_regime, riccati.grid);

  DecompositionReport report;
  report.value = optimal_value(spec, riccati, adjoint, occupation);
  report.V = report.value.V;
  report.J = batch.mean;
  report.J_std_error = batch.std_error;
  report.penalty = batch.extra_mean;
  report.penalty_std_error = batch.extra_std_error;
  report.discrepancy = report.J - report.V - report.penalty;
  report.pooled_std_error = std::hypot(report.J_std_error, report.penalty_std_error);
  report.blowups = batch.blowups;
  return report;
}

}  // namespace rslq

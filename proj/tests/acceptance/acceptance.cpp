#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

using namespace rslq;
using namespace rslq::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

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

  ValueReport value(const TimeGrid& grid) const {
    return optimal_value(spec, ric, adj, occupation_probabilities(spec.generator, spec.initial_regime, grid));
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ProblemSpec noisy_tanh_spec() {
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].sigma = constant(scalar(0.5));
  return spec;
}

ControlSource scaled_gain_control(const FeedbackPolicy& policy, double factor) {
  return [&policy, factor](const ControlContext& ctx, const Vector& x, Vector& u) {
    u = -factor * policy.Gamma_at(ctx.node, ctx.regime) * x + policy.phi_at(ctx.node, ctx.regime);
  };
}

Outcome scalar_riccati() {
  const auto start = Clock::now();
  const RiccatiSolution sol = solve_riccati_ode(tanh_spec(), TimeGrid(1.0, 200));
  const double elapsed = seconds_since(start);
  const double err = std::abs(sol.P_at(0, 0)(0, 0) - std::tanh(1.0));
  return {err <= 1e-6 && elapsed < 1.0, "|P(0) - tanh 1| = " + fmt(err) + ", " + fmt(elapsed) + " s"};
}

Outcome adjoint_oracle() {
  const ProblemSpec spec = sech_spec();
  const TimeGrid grid(1.0, 200);
  const RiccatiSolution ric = solve_riccati_ode(spec, grid);
  const AdjointSolution adj = solve_adjoint_ode(spec, ric, grid);
  const double oracle = 1.0 / std::cosh(1.0) - 1.0;
  const double err = std::abs(adj.K_at(0, 0)(0) - oracle);
  std::ostringstream os;
  os.precision(10);
  os << "K(0) = " << adj.K_at(0, 0)(0) << ", sech(1) - 1 = " << oracle << ", error " << fmt(err);
  return {err <= 1e-7, os.str()};
}

Outcome picard_equivalence() {
  const ProblemSpec spec = reduce_cross_term(load_spec(config_path("two_regime.toml")));
  const TimeGrid grid(spec.horizon, 200);
  const RiccatiSolution direct = solve_riccati_ode(spec, grid);
  const RiccatiSolution picard = solve_riccati_picard(spec, grid, 1e-10, 50);
  const double gap = sup_distance(direct, picard);
  const std::size_t iters = picard.diagnostics.iterations;
  return {gap <= 1e-8 && iters <= 50 && picard.diagnostics.windows == 1,
          "sup gap " + fmt(gap) + " after " + std::to_string(iters) + " iterations"};
}

Outcome positivity() {
  std::mt19937_64 rng(20240501);
  std::uniform_int_distribution<int> dim(1, 3);
  std::uniform_int_distribution<std::size_t> regimes(1, 3);
  double worst_p = INFINITY;
  double worst_inner_margin = INFINITY;
  for (int trial = 0; trial < 50; ++trial) {
    const ProblemSpec spec = random_spec(rng, dim(rng), dim(rng), regimes(rng), trial % 2 == 1);
    const TimeGrid grid(spec.horizon, 100);
    const RiccatiSolution sol = solve_riccati_ode(spec, grid);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      for (std::size_t i = 0; i < spec.regimes(); ++i) {
        worst_p = std::min(worst_p, min_eigenvalue(sol.P_at(k, i)));
        const RegimeCoefficients c = spec.evaluate(i, grid.time(k));
        const double inner = min_eigenvalue(symmetrized(c.R + c.D.transpose() * sol.P_at(k, i) * c.D));
        worst_inner_margin = std::min(worst_inner_margin, inner - spec.lambda_min);
      }
    }
  }
  return {worst_p >= -1e-8 && worst_inner_margin >= -1e-8,
          "50 specs: min eig P = " + fmt(worst_p) + ", min eig(R+D'PD) - lambda_min = " + fmt(worst_inner_margin)};
}

Outcome homogeneous_collapse() {
  std::mt19937_64 rng(5);
  double k_max = 0.0;
  double phi_max = 0.0;
  double v_gap = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const ProblemSpec spec = random_spec(rng, 2 + trial % 2, 1 + trial % 3, 1 + trial % 3, false);
    const TimeGrid grid(spec.horizon, 200);
    const Solved s(spec, grid);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      for (std::size_t i = 0; i < spec.regimes(); ++i) {
        k_max = std::max(k_max, s.adj.K_at(k, i).cwiseAbs().maxCoeff());
        phi_max = std::max(phi_max, s.policy.phi_at(k, i).cwiseAbs().maxCoeff());
      }
    }
    const double quadratic = spec.x.dot(s.ric.P_at(0, spec.initial_regime) * spec.x);
    v_gap = std::max(v_gap, std::abs(s.value(grid).V - quadratic));
  }
  return {k_max <= 1e-12 && phi_max <= 1e-12 && v_gap <= 1e-10,
          "max|K| = " + fmt(k_max) + ", max|phi| = " + fmt(phi_max) + ", |V - <P x, x>| = " + fmt(v_gap)};
}

Outcome completion_of_squares() {
  const auto start = Clock::now();
  std::mt19937_64 rng(77);
  double worst_ratio = 0.0;
  std::size_t failures = 0;
  for (int instance = 0; instance < 5; ++instance) {
    const ProblemSpec spec = random_spec(rng, 2, 1 + instance % 2, 2, true);
    const TimeGrid grid(spec.horizon, 200);
    const Solved s(spec, grid);
    const Vector ones = Vector::Ones(spec.m);
    const ControlSource optimal = policy_control(s.policy);
    const std::vector<ControlSource> controls = {
        shifted_control(optimal, 0.3 * ones),
        shifted_control(optimal, -0.3 * ones),
        scaled_gain_control(s.policy, 1.3),
        [&s, optimal, ones](const ControlContext& ctx, const Vector& x, Vector& u) {
          optimal(ctx, x, u);
          u += 0.4 * std::sin(2.0 * std::numbers::pi * ctx.t) * ones;
        },
        [optimal, ones](const ControlContext& ctx, const Vector& x, Vector& u) {
          optimal(ctx, x, u);
          u += (ctx.regime == 0 ? 0.3 : -0.3) * ones;
        },
    };
    for (std::size_t c = 0; c < controls.size(); ++c) {
      SimulationOptions options;
      options.seed = 1000 + static_cast<std::uint64_t>(10 * instance) + c;
      const DecompositionReport r =
          cost_decomposition(s.spec, s.ric, s.adj, s.policy, controls[c], grid, 10000, options);
      const double ratio = std::abs(r.discrepancy) / r.pooled_std_error;
      worst_ratio = std::max(worst_ratio, ratio);
      if (!r.within(3.0)) ++failures;
    }
  }
  const double elapsed = seconds_since(start);
  return {failures == 0 && elapsed < 120.0,
          "25 controls, worst |J - V - penalty| / pooled SE = " + fmt(worst_ratio) + ", " + fmt(elapsed) + " s"};
}

Outcome optimality() {
  const TimeGrid grid(1.0, 200);
  const Solved s(noisy_tanh_spec(), grid);
  const double v = s.value(grid).V;
  const double v_closed = std::tanh(1.0) + 0.25 * std::log(std::cosh(1.0));
  SimulationOptions options;
  options.seed = 42;
  const std::size_t paths = 20000;
  const ControlSource optimal = policy_control(s.policy);
  const SimulationBatch best = estimate_cost(s.spec, optimal, grid, paths, options);
  const bool value_ok = std::abs(best.mean - v) <= 3.0 * best.std_error && std::abs(v - v_closed) <= 1e-6;
  const Vector delta = Vector::Constant(1, 0.25);
  const std::vector<ControlSource> perturbed = {
      shifted_control(optimal, delta),
      shifted_control(optimal, -delta),
      scaled_gain_control(s.policy, 0.8),
      scaled_gain_control(s.policy, 1.25),
  };
  double worst_margin = INFINITY;
  for (const ControlSource& control : perturbed) {
    const SimulationBatch b = estimate_cost(s.spec, control, grid, paths, options);
    const double pooled = std::hypot(b.std_error, best.std_error);
    worst_margin = std::min(worst_margin, (b.mean - (best.mean - 3.0 * pooled)) / pooled);
  }
  return {value_ok && worst_margin >= 0.0,
          "J(u*) = " + fmt(best.mean) + " +- " + fmt(best.std_error) + ", V = " + fmt(v) +
              ", smallest perturbed margin " + fmt(worst_margin) + " pooled SE"};
}

Outcome cross_term() {
  std::mt19937_64 rng(31);
  ProblemSpec spec = random_spec(rng, 2, 2, 2, true);
  for (std::size_t i = 0; i < 2; ++i) {
    const RegimeCoefficients c = spec.evaluate(i, 0.0);
    const Matrix S = random_matrix(rng, 2, 2, 0.3);
    spec.coefficients[i].S = constant(S);
    spec.coefficients[i].Q = constant(c.Q + S.transpose() * c.R.inverse() * S + 0.1 * Matrix::Identity(2, 2));
  }
  const TimeGrid grid(spec.horizon, 100);
  const ProblemSpec reduced = reduce_cross_term(spec, grid);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int sample = 0; sample < 1000; ++sample) {
    const std::size_t i = static_cast<std::size_t>(sample % 2);
    const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Vector x(2), u(2);
    for (auto& e : x) e = 2.0 * normal(rng);
    for (auto& e : u) e = 2.0 * normal(rng);
    const RegimeCoefficients c = spec.evaluate(i, t);
    const Vector dx = x - c.q;
    const Vector du = u - c.r;
    const double original = dx.dot(c.Q * dx) + 2.0 * du.dot(*c.S * dx) + du.dot(c.R * du);
    const double mapped = running_cost(reduced.evaluate(i, t), x, u + c.R.inverse() * *c.S * x);
    worst = std::max(worst, std::abs(original - mapped) / std::max(1.0, std::abs(original)));
  }
  const Solved s(reduced, grid);
  SimulationOptions options;
  options.seed = 8;
  const SimulationBatch on_reduced = estimate_cost(reduced, policy_control(s.policy), grid, 10000, options);
  const SimulationBatch on_original =
      estimate_cost(spec, map_back_control(reduced, policy_control(s.policy)), grid, 10000, options);
  const double diff = std::abs(on_reduced.mean - on_original.mean);
  const double pooled = std::hypot(on_reduced.std_error, on_original.std_error);
  return {worst <= 1e-12 && diff <= 3.0 * pooled,
          "pointwise relative gap " + fmt(worst) + ", mapped-back cost gap " + fmt(diff) + " (pooled SE " +
              fmt(pooled) + ")"};
}

Outcome lsmc_collapse() {
  ProblemSpec spec = load_spec(config_path("two_regime.toml"));
  const TimeGrid grid(spec.horizon, 100);
  const Solved exact(spec, grid);
  spec.mode = RandomnessMode::BrownianMarkovian;
  const BrownianGrid bg = simulate_brownian_grid(grid, 10000, 2024);
  const RegressionBasis basis{3};
  const StochasticFieldSolution sre = solve_sre_lsmc(spec, bg, basis, 1e-8, 50);
  const StochasticFieldSolution adj = solve_adjoint_lsmc(spec, sre, bg, basis);
  double p_sq = 0.0, lambda_sq = 0.0, k_sq = 0.0, l_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    for (std::size_t i = 0; i < spec.regimes(); ++i) {
      for (Eigen::Index p = 0; p < bg.values.rows(); p += 10) {
        const double w = bg.values(p, static_cast<Eigen::Index>(k));
        p_sq += (sre.value(k, i, w) - exact.ric.P_at(k, i)).squaredNorm();
        k_sq += (adj.value(k, i, w).col(0) - exact.adj.K_at(k, i)).squaredNorm();
        if (k < grid.steps()) {
          lambda_sq += sre.martingale(k, i, w).squaredNorm();
          l_sq += adj.martingale(k, i, w).squaredNorm();
        }
        ++count;
      }
    }
  }
  const double n = static_cast<double>(count);
  const double p_rms = std::sqrt(p_sq / n), lambda_rms = std::sqrt(lambda_sq / n);
  const double k_rms = std::sqrt(k_sq / n), l_rms = std::sqrt(l_sq / n);
  return {p_rms <= 1e-2 && lambda_rms <= 1e-2 && k_rms <= 1e-2 && l_rms <= 1e-2,
          "RMS P gap " + fmt(p_rms) + ", Lambda " + fmt(lambda_rms) + ", K gap " + fmt(k_rms) + ", L " +
              fmt(l_rms) + " (" + std::to_string(sre.iterations) + " Picard sweeps)"};
}

Outcome occupation() {
  Matrix rates(2, 2);
  rates << -1.0, 1.0, 1.0, -1.0;
  const Generator gen{rates};
  const TimeGrid grid(1.0, 200);
  const OccupationTable table = occupation_probabilities(gen, 0, grid);
  const Matrix scaled = rates * 1.0;
  const Matrix transition = scaled.exp();
  const double p1 = table.probs(static_cast<Eigen::Index>(grid.steps()), 0);
  const double err = std::max(std::abs(p1 - transition(0, 0)), std::abs(p1 - 0.5 * (1.0 + std::exp(-2.0))));
  const std::size_t paths = 100000;
  const std::vector<double> times = {0.25, 0.5, 1.0};
  std::vector<std::size_t> hits(times.size(), 0);
  for (std::size_t p = 0; p < paths; ++p) {
    Engine engine = make_engine(99, StreamKind::ChainSample, p);
    const RegimePath path = sample_regime_path(gen, 0, 1.0, engine);
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (path.state_at(times[j]) == 0) ++hits[j];
    }
  }
  double worst_z = 0.0;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double prob = table.probs(static_cast<Eigen::Index>(grid.node_at_or_before(times[j])), 0);
    const double freq = static_cast<double>(hits[j]) / static_cast<double>(paths);
    worst_z = std::max(worst_z, std::abs(freq - prob) / std::sqrt(prob * (1.0 - prob) / static_cast<double>(paths)));
  }
  std::ostringstream os;
  os.precision(10);
  os << "p_1(1) = " << p1 << ", error vs expm " << fmt(err) << ", worst empirical z " << fmt(worst_z);
  return {err <= 1e-8 && worst_z <= 4.0, os.str()};
}

Outcome convergence_orders() {
  std::vector<double> errors;
  for (std::size_t n : {10u, 20u, 40u}) {
    errors.push_back(std::abs(solve_riccati_ode(tanh_spec(), TimeGrid(1.0, n)).P_at(0, 0)(0, 0) - std::tanh(1.0)));
  }
  const double rk_ratio = errors[0] / errors[1];
  const double rk_ratio2 = errors[1] / errors[2];

  // Weak Euler error through the costs of the grid-N optimal policies on
  // shared Brownian paths.
  std::vector<double> means;
  const std::size_t finest = 80;
  for (std::size_t n : {20u, 40u, 80u}) {
    const TimeGrid grid(1.0, n);
    const Solved s(noisy_tanh_spec(), grid);
    SimulationOptions options;
    options.seed = 7;
    options.brownian_substeps = finest / n;
    means.push_back(estimate_cost(s.spec, policy_control(s.policy), grid, 100000, options).mean);
  }
  const double weak_ratio = (means[0] - means[1]) / (means[1] - means[2]);
  const bool rk_ok = rk_ratio >= 12.0 && rk_ratio <= 20.0 && rk_ratio2 >= 12.0 && rk_ratio2 <= 20.0;
  return {rk_ok && weak_ratio >= 1.5 && weak_ratio <= 3.0,
          "RK4 ratios " + fmt(rk_ratio) + ", " + fmt(rk_ratio2) + "; Euler weak ratio " + fmt(weak_ratio)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"scalar Riccati oracle", scalar_riccati},
      {"adjoint oracle", adjoint_oracle},
      {"Picard/direct equivalence", picard_equivalence},
      {"positivity and invertibility", positivity},
      {"homogeneous collapse", homogeneous_collapse},
      {"completion-of-squares identity", completion_of_squares},
      {"optimality", optimality},
      {"cross-term reduction", cross_term},
      {"LSMC collapse", lsmc_collapse},
      {"occupation probabilities", occupation},
      {"convergence orders", convergence_orders},
  };
  int failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    Outcome outcome;
    try {
      outcome = criteria[c].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw ") + e.what()};
    }
    if (!outcome.passed) ++failed;
    std::cout << (outcome.passed ? "PASS" : "FAIL") << "  " << (c + 1) << ". " << criteria[c].first << ": "
              << outcome.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

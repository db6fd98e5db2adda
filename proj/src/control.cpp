#include "rslq/control.hpp"

#include "rslq/errors.hpp"
#include "rslq/rng.hpp"

#include <cmath>

namespace rslq {

namespace {

Eigen::LLT<Matrix> factor(const Matrix& inner, double t, std::size_t regime) {
  auto llt = try_spd_factor(inner);
  if (!llt) {
    throw SingularInnerMatrix(min_eigenvalue(symmetrized(inner)),
                              "t=" + format_double(t) + ", regime " + std::to_string(regime + 1));
  }
  return *llt;
}

/// Running-integral contributions at one (t, i), in ValueReport term order.
struct RunningTerms {
  static constexpr std::size_t kCount = 6;
  double v[kCount] = {};
};

const char* const kRunningNames[RunningTerms::kCount] = {
    "running_Qq_q", "running_Rr_r", "running_Psigma_sigma",
    "running_K_b",  "running_L_sigma", "running_correction"};

RunningTerms running_terms(const RegimeCoefficients& c, const Matrix& P, const Vector& K,
                           const Vector& L, double t, std::size_t regime) {
  const Matrix inner = c.R + c.D.transpose() * P * c.D;
  const auto llt = factor(inner, t, regime);
  const Vector h = c.D.transpose() * P * c.sigma - c.R * c.r - c.B.transpose() * K - c.D.transpose() * L;
  RunningTerms out;
  out.v[0] = c.q.dot(c.Q * c.q);
  out.v[1] = c.r.dot(c.R * c.r);
  out.v[2] = c.sigma.dot(P * c.sigma);
  out.v[3] = -2.0 * K.dot(c.b);
  out.v[4] = -2.0 * L.dot(c.sigma);
  out.v[5] = -h.dot(llt.solve(h));
  return out;
}

double trapezoid_weight(const TimeGrid& grid, std::size_t k) {
  const double dt = grid.dt();
  return (k == 0 || k == grid.steps()) ? 0.5 * dt : dt;
}

}  // namespace

void FeedbackPolicy::evaluate_at_node(std::size_t node, const Vector& x, std::size_t regime,
                                      Vector& u) const {
  const std::size_t idx = index(node, regime);
  u.noalias() = -Gamma[idx] * x;
  u += phi[idx];
}

Vector FeedbackPolicy::evaluate(double t, const Vector& x, std::size_t regime) const {
  Vector u;
  evaluate_at_node(grid.node_at_or_before(t), x, regime, u);
  return u;
}

Vector feedback_offset(const RegimeCoefficients& c, const Matrix& P, const Vector& K, const Vector& L) {
  const Matrix inner = c.R + c.D.transpose() * P * c.D;
  const auto llt = factor(inner, NAN, 0);
  return llt.solve(c.B.transpose() * K + c.D.transpose() * L - c.D.transpose() * P * c.sigma + c.R * c.r);
}

FeedbackPolicy build_policy(const RiccatiSolution& riccati, const AdjointSolution& adjoint,
                            const ProblemSpec& spec) {
  require_same_grid(riccati.grid, adjoint.grid, "build_policy");
  if (riccati.regimes != spec.regimes() || adjoint.regimes != spec.regimes()) {
    throw GridMismatch("solutions and spec disagree on the number of regimes");
  }
  const TimeGrid& grid = riccati.grid;
  const std::size_t ell = spec.regimes();
  FeedbackPolicy policy(grid, ell);
  policy.Gamma = riccati.Gamma;
  policy.phi.resize(grid.nodes() * ell);
  RegimeCoefficients c;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    for (std::size_t i = 0; i < ell; ++i) {
      spec.evaluate_into(i, t, 0.0, c);
      const Matrix& P = riccati.P_at(k, i);
      const Matrix inner = c.R + c.D.transpose() * P * c.D;
      const auto llt = factor(inner, t, i);
      policy.phi[policy.index(k, i)] =
          llt.solve(c.B.transpose() * adjoint.K_at(k, i) + c.D.transpose() * adjoint.L_at(k, i) -
                    c.D.transpose() * P * c.sigma + c.R * c.r);
    }
  }
  return policy;
}

double ValueReport::term(const std::string& name) const {
  for (const auto& [key, value] : terms) {
    if (key == name) return value;
  }
  throw SchemaError("value report has no term '" + name + "'");
}

ValueReport optimal_value(const ProblemSpec& spec, const RiccatiSolution& riccati,
                          const AdjointSolution& adjoint, const OccupationTable& occupation) {
  if (!spec.deterministic()) {
    throw ModeError("optimal_value needs deterministic coefficients; use optimal_value_mc");
  }
  require_same_grid(riccati.grid, adjoint.grid, "optimal_value");
  require_same_grid(riccati.grid, occupation.grid, "optimal_value");
  const TimeGrid& grid = riccati.grid;
  const std::size_t ell = spec.regimes();
  const std::size_t i0 = spec.initial_regime;
  const Vector& x = spec.x;

  ValueReport report;
  report.terms.emplace_back("quadratic", x.dot(riccati.P_at(0, i0) * x));
  report.terms.emplace_back("linear", -2.0 * adjoint.K_at(0, i0).dot(x));

  double terminal = 0.0;
  const Vector p_end = occupation.at(grid.steps());
  for (std::size_t i = 0; i < ell; ++i) {
    const Vector g = spec.terminal_g(i);
    terminal += p_end(static_cast<Eigen::Index>(i)) * g.dot(spec.terminal_G(i) * g);
  }
  report.terms.emplace_back("terminal", terminal);

  double running[RunningTerms::kCount] = {};
  RegimeCoefficients c;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    const double weight = trapezoid_weight(grid, k);
    for (std::size_t i = 0; i < ell; ++i) {
      const double p = occupation.probs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
      if (p == 0.0) continue;
      spec.evaluate_into(i, t, 0.0, c);
      const RunningTerms r = running_terms(c, riccati.P_at(k, i), adjoint.K_at(k, i), adjoint.L_at(k, i), t, i);
      for (std::size_t j = 0; j < RunningTerms::kCount; ++j) running[j] += weight * p * r.v[j];
    }
  }
  for (std::size_t j = 0; j < RunningTerms::kCount; ++j) report.terms.emplace_back(kRunningNames[j], running[j]);

  for (const auto& term : report.terms) report.V += term.second;
  return report;
}

ValueReport optimal_value_mc(const ProblemSpec& spec, const StochasticFieldSolution& sre,
                             const StochasticFieldSolution& adj, const BrownianGrid& bg,
                             std::size_t chain_paths, std::uint64_t seed) {
  if (spec.deterministic()) {
    throw ModeError("optimal_value_mc needs randomness_mode = brownian_markovian");
  }
  require_same_grid(sre.grid, bg.grid, "optimal_value_mc");
  require_same_grid(adj.grid, bg.grid, "optimal_value_mc");
  if (chain_paths == 0) throw DimensionError("optimal_value_mc needs at least one chain path");
  const TimeGrid& grid = bg.grid;
  const std::size_t ell = spec.regimes();
  const std::size_t nodes = grid.nodes();
  const std::size_t i0 = spec.initial_regime;
  const Vector& x = spec.x;
  constexpr std::size_t kTerms = RunningTerms::kCount + 1;  // running terms, then terminal

  // Per Brownian path: the chain-averaged random terms.
  Matrix per_path(static_cast<Eigen::Index>(bg.paths), static_cast<Eigen::Index>(kTerms));
  parallel_for(bg.paths, [&](std::size_t begin, std::size_t end) {
    RegimeCoefficients c;
    std::vector<RunningTerms> table(nodes * ell);
    std::vector<double> terminal(ell);
    for (std::size_t p = begin; p < end; ++p) {
      const auto pr = static_cast<Eigen::Index>(p);
      for (std::size_t k = 0; k < nodes; ++k) {
        const double t = grid.time(k);
        const double w = bg.values(pr, static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < ell; ++i) {
          spec.evaluate_into(i, t, w, c);
          const Matrix Lm = adj.martingale(k, i, w);
          table[k * ell + i] = running_terms(c, sre.value(k, i, w), adj.value(k, i, w), Lm.col(0), t, i);
        }
      }
      const double w_end = bg.values(pr, static_cast<Eigen::Index>(grid.steps()));
      for (std::size_t i = 0; i < ell; ++i) {
        const Vector g = spec.terminal_g(i, w_end);
        terminal[i] = g.dot(spec.terminal_G(i, w_end) * g);
      }
      double sums[kTerms] = {};
      for (std::size_t s = 0; s < chain_paths; ++s) {
        Engine engine = make_engine(seed, StreamKind::ValueChain, p * chain_paths + s);
        const RegimePath path = sample_regime_path(spec.generator, i0, grid.horizon(), engine);
        for (std::size_t k = 0; k < nodes; ++k) {
          const std::size_t i = path.state_at(grid.time(k));
          const double weight = trapezoid_weight(grid, k);
          for (std::size_t j = 0; j < RunningTerms::kCount; ++j) sums[j] += weight * table[k * ell + i].v[j];
        }
        sums[RunningTerms::kCount] += terminal[path.terminal_state()];
      }
      for (std::size_t j = 0; j < kTerms; ++j) {
        per_path(pr, static_cast<Eigen::Index>(j)) = sums[j] / static_cast<double>(chain_paths);
      }
    }
  });

  ValueReport report;
  report.terms.emplace_back("quadratic", x.dot(sre.value(0, i0, 0.0) * x));
  report.terms.emplace_back("linear", -2.0 * adj.value(0, i0, 0.0).col(0).dot(x));
  const Vector means = per_path.colwise().mean().transpose();
  report.terms.emplace_back("terminal", means(static_cast<Eigen::Index>(RunningTerms::kCount)));
  for (std::size_t j = 0; j < RunningTerms::kCount; ++j) {
    report.terms.emplace_back(kRunningNames[j], means(static_cast<Eigen::Index>(j)));
  }
  for (const auto& term : report.terms) report.V += term.second;

  const Vector totals = per_path.rowwise().sum();
  const double mean = totals.mean();
  const double var = (totals.array() - mean).square().sum() / static_cast<double>(bg.paths - 1);
  report.standard_error = std::sqrt(var / static_cast<double>(bg.paths));
  return report;
}

StochasticFeedbackPolicy::StochasticFeedbackPolicy(const ProblemSpec& spec,
                                                   const StochasticFieldSolution& sre,
                                                   const StochasticFieldSolution& adj)
    : spec_(&spec), sre_(&sre), adj_(&adj) {
  require_same_grid(sre.grid, adj.grid, "StochasticFeedbackPolicy");
}

std::pair<Matrix, Vector> StochasticFeedbackPolicy::gain_and_offset(std::size_t node,
                                                                    std::size_t regime,
                                                                    double w) const {
  const double t = sre_->grid.time(node);
  const RegimeCoefficients c = spec_->evaluate(regime, t, w);
  const Matrix P = sre_->value(node, regime, w);
  const Matrix lambda = sre_->martingale(node, regime, w);
  const Vector K = adj_->value(node, regime, w).col(0);
  const Vector L = adj_->martingale(node, regime, w).col(0);
  return {feedback_gain(c, P, lambda), feedback_offset(c, P, K, L)};
}

void StochasticFeedbackPolicy::evaluate_at_node(std::size_t node, double w, const Vector& x,
                                                std::size_t regime, Vector& u) const {
  const auto [gamma, phi] = gain_and_offset(node, regime, w);
  u.noalias() = -gamma * x;
  u += phi;
}

}  // namespace rslq

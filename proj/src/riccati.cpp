#include "rslq/riccati.hpp"

#include "rslq/errors.hpp"

#include <array>
#include <cmath>
#include <cstdio>

namespace rslq {

namespace {

std::string location(double t, std::size_t regime) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "t=%.6g, regime %zu", t, regime + 1);
  return buf;
}

Eigen::LLT<Matrix> factor_inner(const Matrix& inner, double t, std::size_t regime) {
  auto llt = try_spd_factor(inner);
  if (!llt) {
    const double ev = inner.allFinite() ? min_eigenvalue(symmetrized(inner)) : NAN;
    throw SingularInnerMatrix(ev, "R + D'PD not positive definite at " + location(t, regime));
  }
  return *std::move(llt);
}

// Σ_j q_ij Y_j with Y_i = own and Y_j = other(j) otherwise. A single routine so the
// direct and fixed-point solvers perform identical arithmetic when nothing is frozen.
template <typename Other>
Matrix coupling_sum(const Matrix& rates, std::size_t i, const Matrix& own, Other&& other) {
  Matrix sum = Matrix::Zero(own.rows(), own.cols());
  for (Eigen::Index j = 0; j < rates.cols(); ++j) {
    const auto ju = static_cast<std::size_t>(j);
    sum += rates(static_cast<Eigen::Index>(i), j) * (ju == i ? own : other(ju));
  }
  return sum;
}

void guard(const Matrix& p, std::size_t node, std::size_t regime) {
  if (!within_guard(p)) {
    throw BlowUp(node, "Riccati solution left the overflow guard in regime " +
                           std::to_string(regime + 1));
  }
}

// Γ, node drifts and inner-matrix eigenvalues once P is known at every node.
void finalize(const ProblemSpec& spec, RiccatiSolution& sol) {
  const std::size_t ell = sol.regimes;
  const auto& grid = sol.grid;
  const Eigen::Index n = spec.n;
  sol.Gamma.assign(grid.nodes() * ell, Matrix());
  sol.drift.assign(grid.nodes() * ell, Matrix());
  sol.Lambda.assign(grid.nodes() * ell, Matrix::Zero(n, n));
  sol.diagnostics.inner_min_eigenvalue.resize(static_cast<Eigen::Index>(grid.nodes()),
                                              static_cast<Eigen::Index>(ell));
  const Matrix zero = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    for (std::size_t i = 0; i < ell; ++i) {
      const RegimeCoefficients c = spec.evaluate(i, t);
      const Matrix& P = sol.P_at(k, i);
      sol.Gamma[sol.index(k, i)] = feedback_gain(c, P, zero);
      const Matrix coupling = coupling_sum(spec.generator.rates, i, P,
                                           [&](std::size_t j) -> const Matrix& { return sol.P_at(k, j); });
      sol.drift[sol.index(k, i)] = riccati_drift(c, P, coupling, t, i);
      const Matrix inner = c.R + c.D.transpose() * P * c.D;
      sol.diagnostics.inner_min_eigenvalue(static_cast<Eigen::Index>(k),
                                           static_cast<Eigen::Index>(i)) =
          min_eigenvalue(symmetrized(inner));
    }
  }
}

void require_deterministic(const ProblemSpec& spec, const char* who) {
  if (!spec.deterministic()) {
    throw ModeError(std::string(who) +
                    " needs deterministic coefficients; use the LSMC solver for brownian_markovian specs");
  }
}

}  // namespace

Matrix RiccatiSolution::P_interpolated(double t, std::size_t regime) const {
  const std::size_t k = grid.node_at_or_before(t);
  if (k >= grid.steps()) return P_at(grid.steps(), regime);
  const double h = grid.dt();
  const double s = (t - grid.time(k)) / h;
  if (s == 0.0) return P_at(k, regime);
  const double s2 = s * s;
  const double s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  // dP/dt = -drift
  Matrix out = h00 * P_at(k, regime) - h10 * h * drift[index(k, regime)] +
               h01 * P_at(k + 1, regime) - h11 * h * drift[index(k + 1, regime)];
  symmetrize(out);
  return out;
}

Matrix riccati_drift(const RegimeCoefficients& c, const Matrix& P, const Matrix& coupling,
                     double t, std::size_t regime) {
  const Matrix PB_CPD = P * c.B + c.C.transpose() * P * c.D;
  const Matrix inner = c.R + c.D.transpose() * P * c.D;
  const auto llt = factor_inner(inner, t, regime);
  Matrix out = P * c.A + c.A.transpose() * P + c.C.transpose() * P * c.C + c.Q + coupling -
               PB_CPD * llt.solve(PB_CPD.transpose());
  symmetrize(out);
  return out;
}

Matrix riccati_drift(double t, std::span<const Matrix> P_all, const ProblemSpec& spec,
                     std::size_t regime) {
  const RegimeCoefficients c = spec.evaluate(regime, t);
  const Matrix coupling = coupling_sum(spec.generator.rates, regime, P_all[regime],
                                       [&](std::size_t j) -> const Matrix& { return P_all[j]; });
  return riccati_drift(c, P_all[regime], coupling, t, regime);
}

Matrix feedback_gain(const RegimeCoefficients& c, const Matrix& P, const Matrix& Lambda) {
  const Matrix inner = c.R + c.D.transpose() * P * c.D;
  const auto llt = factor_inner(inner, NAN, 0);
  return llt.solve(c.B.transpose() * P + c.D.transpose() * P * c.C + c.D.transpose() * Lambda);
}

RiccatiSolution solve_riccati_ode(const ProblemSpec& spec, const TimeGrid& grid) {
  require_deterministic(spec, "solve_riccati_ode");
  const std::size_t ell = spec.regimes();
  RiccatiSolution sol(grid, ell);
  sol.P.assign(grid.nodes() * ell, Matrix());
  for (std::size_t i = 0; i < ell; ++i) sol.P[sol.index(grid.steps(), i)] = spec.terminal_G(i);

  const double h = grid.dt();
  const Matrix& rates = spec.generator.rates;
  std::vector<RegimeCoefficients> c_hi(ell), c_mid(ell), c_lo(ell);
  for (std::size_t i = 0; i < ell; ++i) spec.evaluate_into(i, grid.time(grid.steps()), 0.0, c_hi[i]);

  std::vector<Matrix> Y(ell), K1(ell), K2(ell), K3(ell), K4(ell);
  auto stage = [&](const std::vector<RegimeCoefficients>& c, const std::vector<Matrix>& y,
                   std::vector<Matrix>& k_out, double t) {
    for (std::size_t i = 0; i < ell; ++i) {
      const Matrix coupling =
          coupling_sum(rates, i, y[i], [&](std::size_t j) -> const Matrix& { return y[j]; });
      k_out[i] = riccati_drift(c[i], y[i], coupling, t, i);
    }
  };

  for (std::size_t k = grid.steps(); k > 0; --k) {
    const double t_hi = grid.time(k);
    const double t_lo = grid.time(k - 1);
    const double t_mid = 0.5 * (t_hi + t_lo);
    for (std::size_t i = 0; i < ell; ++i) {
      spec.evaluate_into(i, t_mid, 0.0, c_mid[i]);
      spec.evaluate_into(i, t_lo, 0.0, c_lo[i]);
    }
    std::vector<Matrix> Y1(ell);
    for (std::size_t i = 0; i < ell; ++i) Y1[i] = sol.P_at(k, i);
    stage(c_hi, Y1, K1, t_hi);
    for (std::size_t i = 0; i < ell; ++i) Y[i] = symmetrized(Y1[i] + 0.5 * h * K1[i]);
    stage(c_mid, Y, K2, t_mid);
    for (std::size_t i = 0; i < ell; ++i) Y[i] = symmetrized(Y1[i] + 0.5 * h * K2[i]);
    stage(c_mid, Y, K3, t_mid);
    for (std::size_t i = 0; i < ell; ++i) Y[i] = symmetrized(Y1[i] + h * K3[i]);
    stage(c_lo, Y, K4, t_lo);
    for (std::size_t i = 0; i < ell; ++i) {
      Matrix next = Y1[i] + h / 6.0 * (K1[i] + 2.0 * K2[i] + 2.0 * K3[i] + K4[i]);
      symmetrize(next);
      guard(next, k - 1, i);
      sol.P[sol.index(k - 1, i)] = std::move(next);
    }
    std::swap(c_hi, c_lo);
  }
  finalize(spec, sol);
  return sol;
}

namespace {

// One fixed-point solve on nodes [k_lo, k_hi]; P at k_hi must already be set in
// `sol`. Returns false if not converged within max_iter.
bool picard_window(const ProblemSpec& spec, std::size_t k_lo, std::size_t k_hi, double tol,
                   std::size_t max_iter, RiccatiSolution& sol) {
  const std::size_t ell = sol.regimes;
  const auto& grid = sol.grid;
  const double h = grid.dt();
  const Matrix& rates = spec.generator.rates;
  const std::size_t steps = k_hi - k_lo;

  // Coefficients at nodes and midpoints of the window, reused by every sweep.
  std::vector<RegimeCoefficients> c_node((steps + 1) * ell), c_mid(steps * ell);
  for (std::size_t s = 0; s <= steps; ++s) {
    for (std::size_t i = 0; i < ell; ++i) {
      spec.evaluate_into(i, grid.time(k_lo + s), 0.0, c_node[s * ell + i]);
      if (s < steps) {
        const double tm = 0.5 * (grid.time(k_lo + s) + grid.time(k_lo + s + 1));
        spec.evaluate_into(i, tm, 0.0, c_mid[s * ell + i]);
      }
    }
  }

  // stages[(i * steps + step) * 4 + s]; step counts from k_lo.
  using Stages = std::vector<Matrix>;
  Stages prev(ell * steps * 4), next(ell * steps * 4);
  std::vector<Matrix> prev_nodes(ell * (steps + 1)), next_nodes(ell * (steps + 1));
  for (std::size_t i = 0; i < ell; ++i) {
    const Matrix& terminal = sol.P_at(k_hi, i);
    for (std::size_t st = 0; st < steps; ++st) {
      for (std::size_t s = 0; s < 4; ++s) prev[(i * steps + st) * 4 + s] = terminal;
    }
    for (std::size_t st = 0; st <= steps; ++st) prev_nodes[i * (steps + 1) + st] = terminal;
  }

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    for (std::size_t i = 0; i < ell; ++i) {
      Matrix p = sol.P_at(k_hi, i);
      next_nodes[i * (steps + 1) + steps] = p;
      for (std::size_t st = steps; st > 0; --st) {
        const std::size_t step = st - 1;
        const std::size_t k = k_lo + st;
        const double t_hi = grid.time(k);
        const double t_lo = grid.time(k - 1);
        const double t_mid = 0.5 * (t_hi + t_lo);
        const RegimeCoefficients& ch = c_node[st * ell + i];
        const RegimeCoefficients& cm = c_mid[step * ell + i];
        const RegimeCoefficients& cl = c_node[step * ell + i];
        auto frozen = [&](std::size_t s) {
          return [&, s](std::size_t j) -> const Matrix& { return prev[(j * steps + step) * 4 + s]; };
        };
        auto base = (i * steps + step) * 4;

        const Matrix& y1 = p;
        next[base + 0] = y1;
        const Matrix k1 = riccati_drift(ch, y1, coupling_sum(rates, i, y1, frozen(0)), t_hi, i);
        Matrix y = symmetrized(y1 + 0.5 * h * k1);
        next[base + 1] = y;
        const Matrix k2 = riccati_drift(cm, y, coupling_sum(rates, i, y, frozen(1)), t_mid, i);
        y = symmetrized(y1 + 0.5 * h * k2);
        next[base + 2] = y;
        const Matrix k3 = riccati_drift(cm, y, coupling_sum(rates, i, y, frozen(2)), t_mid, i);
        y = symmetrized(y1 + h * k3);
        next[base + 3] = y;
        const Matrix k4 = riccati_drift(cl, y, coupling_sum(rates, i, y, frozen(3)), t_lo, i);
        Matrix stepped = y1 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        symmetrize(stepped);
        guard(stepped, k - 1, i);
        p = std::move(stepped);
        next_nodes[i * (steps + 1) + step] = p;
      }
    }

    double residual = 0.0;
    for (std::size_t idx = 0; idx < next_nodes.size(); ++idx) {
      residual = std::max(residual, frobenius_norm(next_nodes[idx] - prev_nodes[idx]));
    }
    sol.diagnostics.residuals.push_back(residual);
    ++sol.diagnostics.iterations;
    std::swap(prev, next);
    std::swap(prev_nodes, next_nodes);
    if (residual <= tol) {
      for (std::size_t i = 0; i < ell; ++i) {
        for (std::size_t st = 0; st < steps; ++st) {
          sol.P[sol.index(k_lo + st, i)] = prev_nodes[i * (steps + 1) + st];
        }
      }
      return true;
    }
  }
  return false;
}

}  // namespace

RiccatiSolution solve_riccati_picard(const ProblemSpec& spec, const TimeGrid& grid, double tol,
                                     std::size_t max_iter) {
  require_deterministic(spec, "solve_riccati_picard");
  const std::size_t ell = spec.regimes();
  double last_residual = NAN;
  for (std::size_t windows = 1;; windows *= 2) {
    windows = std::min(windows, grid.steps());
    RiccatiSolution sol(grid, ell);
    sol.diagnostics.iterations = 0;
    sol.diagnostics.windows = windows;
    sol.P.assign(grid.nodes() * ell, Matrix());
    for (std::size_t i = 0; i < ell; ++i) sol.P[sol.index(grid.steps(), i)] = spec.terminal_G(i);

    bool converged = true;
    std::size_t k_hi = grid.steps();
    for (std::size_t w = 0; w < windows && converged; ++w) {
      const std::size_t k_lo = (w + 1 == windows) ? 0 : grid.steps() - (w + 1) * grid.steps() / windows;
      converged = picard_window(spec, k_lo, k_hi, tol, max_iter, sol);
      k_hi = k_lo;
    }
    if (!sol.diagnostics.residuals.empty()) last_residual = sol.diagnostics.residuals.back();
    if (converged) {
      finalize(spec, sol);
      return sol;
    }
    if (windows == grid.steps()) break;
  }
  throw NoConvergence("Riccati fixed-point iteration did not reach tol " + std::to_string(tol) +
                      " in " + std::to_string(max_iter) + " sweeps (last residual " +
                      std::to_string(last_residual) + ")");
}

double check_condition_lsigma(const ProblemSpec& spec, const TimeGrid& grid) {
  double sup = 0.0;
  for (std::size_t i = 0; i < spec.regimes(); ++i) {
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      const Matrix R = spec.coefficients[i].R(t, 0.0);
      const Matrix D = spec.coefficients[i].D(t, 0.0);
      const auto llt = try_spd_factor(R);
      if (!llt) {
        throw SingularR("R not positive definite at " + location(t, i));
      }
      sup = std::max(sup, frobenius_norm(D * llt->solve(D.transpose())));
    }
  }
  return sup;
}

double sup_distance(const RiccatiSolution& a, const RiccatiSolution& b) {
  require_same_grid(a.grid, b.grid, "sup_distance");
  double sup = 0.0;
  for (std::size_t idx = 0; idx < a.P.size(); ++idx) {
    sup = std::max(sup, frobenius_norm(a.P[idx] - b.P[idx]));
  }
  return sup;
}

}  // namespace rslq

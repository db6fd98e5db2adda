#include "rslq/adjoint.hpp"

#include "rslq/errors.hpp"

namespace rslq {

AdjointPieces adjoint_pieces(const RegimeCoefficients& c, const Matrix& P, const Matrix& Lambda) {
  const Matrix inner = c.R + c.D.transpose() * P * c.D;
  const auto llt = try_spd_factor(inner);
  if (!llt) {
    throw SingularInnerMatrix(min_eigenvalue(symmetrized(inner)), "R + D'PD in adjoint assembly");
  }
  const Matrix base_gain = llt->solve(c.B.transpose() * P + c.D.transpose() * P * c.C);
  const Matrix lambda_gain = llt->solve(c.D.transpose() * Lambda);
  const Matrix gamma_gain = base_gain + lambda_gain;  // Γ

  AdjointPieces out;
  out.alpha = c.A - c.B * gamma_gain;
  out.beta = c.C - c.D * base_gain;
  out.gamma = -c.D * lambda_gain;
  out.eta = gamma_gain.transpose() * (c.D.transpose() * P * c.sigma - c.R * c.r) + c.Q * c.q -
            P * c.b - c.C.transpose() * P * c.sigma - Lambda * c.sigma;
  return out;
}

StackedLinearSystem::StackedLinearSystem(const ProblemSpec& spec, const RiccatiSolution& riccati)
    : spec_(&spec), riccati_(&riccati) {
  if (riccati.regimes != spec.regimes()) {
    throw GridMismatch("Riccati solution has " + std::to_string(riccati.regimes) +
                       " regimes, spec has " + std::to_string(spec.regimes()));
  }
}

AdjointPieces StackedLinearSystem::pieces(double t, std::size_t regime) const {
  const RegimeCoefficients c = spec_->evaluate(regime, t);
  const Matrix P = riccati_->P_interpolated(t, regime);
  return adjoint_pieces(c, P, Matrix::Zero(spec_->n, spec_->n));
}

Matrix StackedLinearSystem::alpha_bar(double t) const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  Matrix out = Matrix::Zero(n * ell, n * ell);
  const Matrix& q = spec_->generator.rates;
  for (Eigen::Index i = 0; i < ell; ++i) {
    out.block(i * n, i * n, n, n) = pieces(t, static_cast<std::size_t>(i)).alpha;
    // (Q ⊗ I_n)ᵀ: block (i, j) is q_ji I_n.
    for (Eigen::Index j = 0; j < ell; ++j) {
      out.block(i * n, j * n, n, n) += q(j, i) * Matrix::Identity(n, n);
    }
  }
  return out;
}

Matrix StackedLinearSystem::beta_bar(double t) const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  Matrix out = Matrix::Zero(n * ell, n * ell);
  for (Eigen::Index i = 0; i < ell; ++i) {
    out.block(i * n, i * n, n, n) = pieces(t, static_cast<std::size_t>(i)).beta;
  }
  return out;
}

Matrix StackedLinearSystem::gamma_bar(double t) const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  Matrix out = Matrix::Zero(n * ell, n * ell);
  for (Eigen::Index i = 0; i < ell; ++i) {
    out.block(i * n, i * n, n, n) = pieces(t, static_cast<std::size_t>(i)).gamma;
  }
  return out;
}

Vector StackedLinearSystem::eta_bar(double t) const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  Vector out(n * ell);
  for (Eigen::Index i = 0; i < ell; ++i) {
    out.segment(i * n, n) = pieces(t, static_cast<std::size_t>(i)).eta;
  }
  return out;
}

Vector StackedLinearSystem::xi_bar() const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  Vector out(n * ell);
  for (Eigen::Index i = 0; i < ell; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    out.segment(i * n, n) = spec_->terminal_G(iu) * spec_->terminal_g(iu);
  }
  return out;
}

void StackedLinearSystem::drift_terms(double t, Matrix& alpha_bar_transposed, Vector& eta) const {
  const Eigen::Index n = spec_->n;
  const auto ell = static_cast<Eigen::Index>(riccati_->regimes);
  const Matrix& q = spec_->generator.rates;
  alpha_bar_transposed = Matrix::Zero(n * ell, n * ell);
  eta.resize(n * ell);
  for (Eigen::Index i = 0; i < ell; ++i) {
    const AdjointPieces p = pieces(t, static_cast<std::size_t>(i));
    alpha_bar_transposed.block(i * n, i * n, n, n) = p.alpha.transpose();
    for (Eigen::Index j = 0; j < ell; ++j) {
      alpha_bar_transposed.block(i * n, j * n, n, n) += q(i, j) * Matrix::Identity(n, n);
    }
    eta.segment(i * n, n) = p.eta;
  }
}

StackedLinearSystem assemble_stacked_system(const ProblemSpec& spec, const RiccatiSolution& riccati) {
  return StackedLinearSystem(spec, riccati);
}

AdjointSolution solve_adjoint_ode(const ProblemSpec& spec, const RiccatiSolution& riccati,
                                  const TimeGrid& grid) {
  if (!spec.deterministic()) {
    throw ModeError("solve_adjoint_ode needs deterministic coefficients; use solve_adjoint_lsmc");
  }
  require_same_grid(riccati.grid, grid, "solve_adjoint_ode");
  const StackedLinearSystem sys(spec, riccati);
  const std::size_t ell = spec.regimes();
  const Eigen::Index n = spec.n;
  const double h = grid.dt();

  std::vector<Vector> stacked(grid.nodes());
  stacked[grid.steps()] = sys.xi_bar();

  Matrix a_hi, a_mid, a_lo;
  Vector e_hi, e_mid, e_lo;
  sys.drift_terms(grid.time(grid.steps()), a_hi, e_hi);
  for (std::size_t k = grid.steps(); k > 0; --k) {
    const double t_hi = grid.time(k);
    const double t_lo = grid.time(k - 1);
    sys.drift_terms(0.5 * (t_hi + t_lo), a_mid, e_mid);
    sys.drift_terms(t_lo, a_lo, e_lo);
    const Vector& y = stacked[k];
    // dK/dt = -(α̲ᵀK + η̲); stepping backwards adds h·(α̲ᵀK + η̲).
    const Vector k1 = a_hi * y + e_hi;
    const Vector k2 = a_mid * (y + 0.5 * h * k1) + e_mid;
    const Vector k3 = a_mid * (y + 0.5 * h * k2) + e_mid;
    const Vector k4 = a_lo * (y + h * k3) + e_lo;
    Vector next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!within_guard(next)) throw BlowUp(k - 1, "adjoint solution left the overflow guard");
    stacked[k - 1] = std::move(next);
    std::swap(a_hi, a_lo);
    std::swap(e_hi, e_lo);
  }

  AdjointSolution sol(grid, ell);
  sol.K.resize(grid.nodes() * ell);
  sol.L.assign(grid.nodes() * ell, Vector::Zero(n));
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    for (std::size_t i = 0; i < ell; ++i) {
      sol.K[sol.index(k, i)] = stacked[k].segment(static_cast<Eigen::Index>(i) * n, n);
    }
  }
  return sol;
}

}  // namespace rslq

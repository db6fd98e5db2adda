#include "rslq/lsmc.hpp"

#include "rslq/adjoint.hpp"
#include "rslq/errors.hpp"
#include "rslq/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace rslq {

namespace {

double node_scale(const TimeGrid& grid, std::size_t k) {
  const double t = grid.time(k);
  return t > 0.0 ? std::sqrt(t) : 1.0;
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

/// Factorized regression on one node's standardized Brownian values.
class NodeRegression {
 public:
  NodeRegression(const Vector& w, double scale, bool at_origin, const RegressionBasis& basis,
                 double ridge)
      : full_size_(static_cast<Eigen::Index>(basis.size())) {
    const RegressionBasis used{at_origin ? 0 : basis.degree};
    if (w.size() < static_cast<Eigen::Index>(basis.size()) + 1) {
      throw DegenerateDesign(std::to_string(w.size()) + " paths cannot support a degree-" +
                             std::to_string(basis.degree) + " basis");
    }
    design_ = used.design(w / scale);
    const auto m = static_cast<double>(w.size());
    Matrix normal = design_.transpose() * design_ / m;
    for (Eigen::Index j = 1; j < normal.rows(); ++j) normal(j, j) += ridge;
    llt_.compute(normal);
    if (llt_.info() != Eigen::Success) {
      throw DegenerateDesign("regularized normal matrix is singular");
    }
    const Vector diag = Matrix(llt_.matrixL()).diagonal();
    if (diag.minCoeff() <= 1e-7 * diag.maxCoeff()) {
      throw DegenerateDesign("regularized normal matrix is numerically singular");
    }
  }

  Matrix fit(const Matrix& targets) const {
    const Matrix small = llt_.solve(design_.transpose() * targets / static_cast<double>(targets.rows()));
    if (small.rows() == full_size_) return small;
    Matrix out = Matrix::Zero(full_size_, targets.cols());
    out.topRows(small.rows()) = small;
    return out;
  }

  Matrix fitted(const Matrix& coefficients) const {
    return design_ * coefficients.topRows(design_.cols());
  }

 private:
  Eigen::Index full_size_;
  Matrix design_;
  Eigen::LLT<Matrix> llt_;
};

NodeRegression node_regression(const BrownianGrid& bg, std::size_t k, const RegressionBasis& basis,
                               double ridge) {
  return NodeRegression(bg.values.col(static_cast<Eigen::Index>(k)), node_scale(bg.grid, k), k == 0,
                        basis, ridge);
}

/// Evaluates a regime's coefficients along paths, once per node when they do not depend on w.
class CoefficientCache {
 public:
  CoefficientCache(const ProblemSpec& spec, std::size_t regime, double t)
      : spec_(spec), regime_(regime), t_(t), varies_(spec.coefficients[regime].depends_on_w()) {
    if (!varies_) spec.evaluate_into(regime, t, 0.0, fixed_);
  }

  bool varies() const { return varies_; }

  const RegimeCoefficients& at(double w, RegimeCoefficients& scratch) const {
    if (!varies_) return fixed_;
    spec_.evaluate_into(regime_, t_, w, scratch);
    return scratch;
  }

 private:
  const ProblemSpec& spec_;
  std::size_t regime_;
  double t_;
  bool varies_;
  RegimeCoefficients fixed_;
};

void require_brownian(const ProblemSpec& spec, const char* who) {
  if (spec.deterministic()) {
    throw ModeError(std::string(who) + " needs randomness_mode = brownian_markovian");
  }
}

StochasticFieldSolution initial_sre_iterate(const ProblemSpec& spec, const BrownianGrid& bg,
                                            const RegressionBasis& basis, double ridge) {
  const std::size_t ell = spec.regimes();
  StochasticFieldSolution field(bg.grid, bg.paths, ell, spec.n, spec.n, basis, true);
  const auto m = static_cast<Eigen::Index>(bg.paths);
  const Eigen::Index nn = static_cast<Eigen::Index>(spec.n) * spec.n;
  const Eigen::Index last = static_cast<Eigen::Index>(bg.grid.steps());
  for (std::size_t i = 0; i < ell; ++i) {
    Matrix targets(m, nn);
    for (Eigen::Index p = 0; p < m; ++p) {
      targets.row(p) = flatten(symmetrized(spec.terminal_G(i, bg.values(p, last)))).transpose();
    }
    for (std::size_t k = 0; k < bg.grid.nodes(); ++k) {
      const NodeRegression reg = node_regression(bg, k, basis, ridge);
      field.value_coefficients[field.index(k, i)] = reg.fit(targets);
      field.martingale_coefficients[field.index(k, i)] = Matrix::Zero(basis.size(), nn);
    }
  }
  return field;
}

/// Fits the martingale part as E[(Y - E_k Y) ΔW | W_k] / Δt and returns its coefficients.
Matrix martingale_fit(const NodeRegression& reg, const Matrix& y, const Matrix& mean,
                      const Eigen::Ref<const Vector>& dw, double dt) {
  const Matrix target = (y - mean).array().colwise() * (dw.array() / dt);
  return reg.fit(target);
}

}  // namespace

BrownianGrid simulate_brownian_grid(const TimeGrid& grid, std::size_t paths, std::uint64_t seed) {
  if (paths < 2) throw DimensionError("simulate_brownian_grid needs at least 2 paths");
  BrownianGrid bg(grid, paths);
  const auto m = static_cast<Eigen::Index>(paths);
  const auto n = static_cast<Eigen::Index>(grid.steps());
  bg.increments.resize(m, n);
  bg.values.resize(m, n + 1);
  const double sd = std::sqrt(grid.dt());
  for (Eigen::Index p = 0; p < m; ++p) {
    Engine engine = make_engine(seed, StreamKind::Brownian, static_cast<std::uint64_t>(p));
    std::normal_distribution<double> normal(0.0, 1.0);
    double w = 0.0;
    bg.values(p, 0) = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double dw = sd * normal(engine);
      bg.increments(p, k) = dw;
      w += dw;
      bg.values(p, k + 1) = w;
    }
  }
  return bg;
}

void RegressionBasis::features(double w, double* out) const {
  double power = 1.0;
  for (int j = 0; j <= degree; ++j) {
    out[j] = power;
    power *= w;
  }
}

Matrix RegressionBasis::design(const Vector& w) const {
  Matrix x(w.size(), static_cast<Eigen::Index>(size()));
  for (Eigen::Index p = 0; p < w.size(); ++p) {
    double power = 1.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      x(p, j) = power;
      power *= w(p);
    }
  }
  return x;
}

RegressionFit regress_conditional_expectation(const Matrix& targets, const Vector& w,
                                              const RegressionBasis& basis, double ridge) {
  if (targets.rows() != w.size()) {
    throw DimensionError("regression targets and w have different path counts");
  }
  const NodeRegression reg(w, 1.0, false, basis, ridge);
  RegressionFit out;
  out.coefficients = reg.fit(targets);
  out.fitted = reg.fitted(out.coefficients);
  return out;
}

StochasticFieldSolution::StochasticFieldSolution(TimeGrid g, std::size_t m, std::size_t ell,
                                                 Eigen::Index r, Eigen::Index c,
                                                 RegressionBasis b, bool project)
    : grid(g), paths(m), regimes(ell), rows(r), cols(c), basis(b), psd(project) {
  scale.resize(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) scale[k] = node_scale(grid, k);
  value_coefficients.assign(grid.nodes() * ell, Matrix::Zero(basis.size(), r * c));
  martingale_coefficients.assign(grid.nodes() * ell, Matrix::Zero(basis.size(), r * c));
}

namespace {

Matrix evaluate_table(const StochasticFieldSolution& f, const Matrix& table, std::size_t node,
                      double w) {
  double feats[32];
  const std::size_t size = f.basis.size();
  if (size > 32) throw DimensionError("regression basis degree above 31");
  f.basis.features(node == 0 ? 0.0 : w / f.scale[node], feats);
  Matrix out = Matrix::Zero(f.rows, f.cols);
  for (std::size_t j = 0; j < size; ++j) {
    for (Eigen::Index e = 0; e < out.size(); ++e) {
      out.data()[e] += feats[j] * table(static_cast<Eigen::Index>(j), e);
    }
  }
  return out;
}

}  // namespace

Matrix StochasticFieldSolution::value(std::size_t node, std::size_t regime, double w) const {
  Matrix out = evaluate_table(*this, value_coefficients[index(node, regime)], node, w);
  if (psd) {
    symmetrize(out);
    clip_to_psd(out);
  }
  return out;
}

Matrix StochasticFieldSolution::martingale(std::size_t node, std::size_t regime, double w) const {
  Matrix out = evaluate_table(*this, martingale_coefficients[index(node, regime)], node, w);
  if (psd) symmetrize(out);
  return out;
}

double StochasticFieldSolution::bmo_surrogate(const BrownianGrid& bg) const {
  require_same_grid(grid, bg.grid, "bmo_surrogate");
  const double dt = grid.dt();
  double worst = 0.0;
  for (std::size_t i = 0; i < regimes; ++i) {
    double tail = 0.0;
    for (std::size_t k = grid.steps(); k-- > 0;) {
      double mean_sq = 0.0;
      for (std::size_t p = 0; p < bg.paths; ++p) {
        const Matrix z = martingale(k, i, bg.values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)));
        mean_sq += z.squaredNorm();
      }
      tail += mean_sq / static_cast<double>(bg.paths) * dt;
      worst = std::max(worst, std::sqrt(tail));
    }
  }
  return worst;
}

namespace {

/// Dynamic-size matrices with a compile-time capacity; MaxN = Eigen::Dynamic
/// gives ordinary heap matrices.
template <int MaxN>
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, MaxN, MaxN>;
template <int MaxN>
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, MaxN, 1>;

constexpr int kSmall = 4;

template <typename M>
void symmetrize_in_place(M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = r + 1; c < m.cols(); ++c) {
      const double avg = 0.5 * (m(r, c) + m(c, r));
      m(r, c) = avg;
      m(c, r) = avg;
    }
  }
}

/// In-place lower Cholesky of a small SPD matrix; the upper triangle is left stale.
template <typename M>
bool cholesky_in_place(M& a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a(j, j) = d;
    for (Eigen::Index r = j + 1; r < n; ++r) {
      double v = a(r, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= a(r, k) * a(j, k);
      a(r, j) = v / d;
    }
  }
  return true;
}

/// Solves (LLᵀ) X = B in place, column by column.
template <typename M, typename Rhs>
void cholesky_solve(const M& l, Rhs& b) {
  const Eigen::Index n = l.rows();
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      double v = b(r, c);
      for (Eigen::Index k = 0; k < r; ++k) v -= l(r, k) * b(k, c);
      b(r, c) = v / l(r, r);
    }
    for (Eigen::Index r = n; r-- > 0;) {
      double v = b(r, c);
      for (Eigen::Index k = r + 1; k < n; ++k) v -= l(k, r) * b(k, c);
      b(r, c) = v / l(r, r);
    }
  }
}

/// Symmetrizes and clips every row (one flattened n x n matrix per path).
/// Returns whether some row moved by more than `report_above`.
bool clip_rows(Matrix& values, Eigen::Index n, double report_above = 1e-6) {
  bool moved = false;
  if (n == 1) {
    for (Eigen::Index p = 0; p < values.rows(); ++p) {
      if (values(p, 0) < 0.0) {
        moved = moved || -values(p, 0) > report_above;
        values(p, 0) = 0.0;
      }
    }
    return moved;
  }
  Matrix scratch(n, n);
  Matrix factor(n, n);
  for (Eigen::Index p = 0; p < values.rows(); ++p) {
    if (n == 2) {
      const double off = 0.5 * (values(p, 1) + values(p, 2));
      values(p, 1) = off;
      values(p, 2) = off;
      if (values(p, 0) > 0.0 && values(p, 0) * values(p, 3) - off * off > 0.0) continue;
    }
    for (Eigen::Index e = 0; e < n * n; ++e) scratch.data()[e] = values(p, e);
    symmetrize_in_place(scratch);
    factor = scratch;
    if (!cholesky_in_place(factor) && clip_to_psd(scratch) > report_above) moved = true;
    for (Eigen::Index e = 0; e < n * n; ++e) values(p, e) = scratch.data()[e];
  }
  return moved;
}

template <typename M>
void load_row(const Matrix& values, Eigen::Index p, M& out) {
  for (Eigen::Index e = 0; e < out.size(); ++e) out.data()[e] = values(p, e);
}

template <int MaxN>
struct SmallCoefficients {
  Mat<MaxN> A, B, C, D, Q, R;
  Vec<MaxN> b, sigma, q, r;

  void assign(const RegimeCoefficients& c) {
    A = c.A;
    B = c.B;
    C = c.C;
    D = c.D;
    Q = c.Q;
    R = c.R;
    b = c.b;
    sigma = c.sigma;
    q = c.q;
    r = c.r;
  }
};

/// Everything one backward Riccati step needs, shared read-only by workers.
struct SreStep {
  const ProblemSpec& spec;
  const BrownianGrid& bg;
  const CoefficientCache& cache;
  std::size_t regime;
  Eigen::Index node;
  double t;
  double dt;
  const Matrix& y;             // P(t_{k+1}) per path
  const Matrix& lambda;        // fresh Λ(t_k) per path
  const Matrix& frozen;        // previous iterate's Λ(t_k) per path
  const std::vector<Matrix>& neighbours;  // previous iterate's P(t_{k+1}, j) per path
  Matrix& targets;
};

template <int MaxN>
void sre_rows(const SreStep& st, std::size_t begin, std::size_t end) {
  const Eigen::Index n = st.spec.n;
  const Eigen::Index mm = st.spec.m;
  const Matrix& rates = st.spec.generator.rates;
  const std::size_t i = st.regime;
  const std::size_t ell = st.spec.regimes();
  Mat<MaxN> P(n, n), lambda(n, n), frozen(n, n), coupling(n, n), CtP(n, n), DtP(mm, n), cross(n, mm),
      inner(mm, mm), solved(mm, n), drift(n, n), neighbour(n, n);
  RegimeCoefficients scratch;
  SmallCoefficients<MaxN> c;
  if (!st.cache.varies()) c.assign(st.cache.at(0.0, scratch));
  for (auto p = static_cast<Eigen::Index>(begin); p < static_cast<Eigen::Index>(end); ++p) {
    if (st.cache.varies()) c.assign(st.cache.at(st.bg.values(p, st.node), scratch));
    load_row(st.y, p, P);
    load_row(st.lambda, p, lambda);
    symmetrize_in_place(lambda);
    load_row(st.frozen, p, frozen);
    symmetrize_in_place(frozen);
    coupling = rates(i, i) * P;
    for (std::size_t j = 0; j < ell; ++j) {
      if (j == i || rates(i, j) == 0.0) continue;
      load_row(st.neighbours[j], p, neighbour);
      coupling += rates(i, j) * neighbour;
    }
    CtP.noalias() = c.C.transpose() * P;
    DtP.noalias() = c.D.transpose() * P;
    cross.noalias() = P * c.B;
    cross.noalias() += CtP * c.D;
    cross.noalias() += frozen * c.D;
    inner = c.R;
    inner.noalias() += DtP * c.D;
    solved = inner;
    if (!cholesky_in_place(solved)) {
      throw SingularInnerMatrix(min_eigenvalue(symmetrized(Matrix(inner))),
                                "t=" + format_double(st.t) + ", regime " + std::to_string(i + 1));
    }
    inner = solved;
    solved = cross.transpose();
    cholesky_solve(inner, solved);
    drift.noalias() = P * c.A;
    drift.noalias() += c.A.transpose() * P;
    drift.noalias() += CtP * c.C;
    drift.noalias() += lambda * c.C;
    drift.noalias() += c.C.transpose() * lambda;
    drift += c.Q;
    drift += coupling;
    drift.noalias() -= cross * solved;
    symmetrize_in_place(drift);
    for (Eigen::Index e = 0; e < n * n; ++e) st.targets(p, e) = st.y(p, e) + st.dt * drift.data()[e];
  }
}

/// Everything one backward adjoint step needs for one regime.
struct AdjointStep {
  const ProblemSpec& spec;
  const BrownianGrid& bg;
  const CoefficientCache& cache;
  std::size_t regime;
  Eigen::Index node;
  double t;
  double dt;
  const std::vector<Matrix>& y;  // K(t_{k+1}, j) per path, every regime
  const Matrix& l;               // fresh L(t_k) per path
  const Matrix& p_vals;          // P(t_k) per path
  const Matrix& lambda_vals;     // Λ(t_k) per path
  Matrix& targets;
};

template <int MaxN>
void adjoint_rows(const AdjointStep& st, std::size_t begin, std::size_t end) {
  const Eigen::Index n = st.spec.n;
  const Eigen::Index mm = st.spec.m;
  const Matrix& rates = st.spec.generator.rates;
  const std::size_t i = st.regime;
  const std::size_t ell = st.spec.regimes();
  Mat<MaxN> P(n, n), lambda(n, n), X(mm, n), DtP(mm, n), inner(mm, mm);
  Vec<MaxN> K(n), L(n), h(mm), drift(n), Psigma(n);
  Mat<MaxN> factor(mm, mm);
  RegimeCoefficients scratch;
  SmallCoefficients<MaxN> c;
  if (!st.cache.varies()) c.assign(st.cache.at(0.0, scratch));
  for (auto p = static_cast<Eigen::Index>(begin); p < static_cast<Eigen::Index>(end); ++p) {
    if (st.cache.varies()) c.assign(st.cache.at(st.bg.values(p, st.node), scratch));
    load_row(st.p_vals, p, P);
    load_row(st.lambda_vals, p, lambda);
    symmetrize_in_place(lambda);
    load_row(st.y[i], p, K);
    load_row(st.l, p, L);
    // X = BᵀP + DᵀPC + DᵀΛ, so Γ = (R + DᵀPD)⁻¹X.
    DtP.noalias() = c.D.transpose() * P;
    inner = c.R;
    inner.noalias() += DtP * c.D;
    X.noalias() = c.B.transpose() * P;
    X.noalias() += DtP * c.C;
    X.noalias() += c.D.transpose() * lambda;
    factor = inner;
    if (!cholesky_in_place(factor)) {
      throw SingularInnerMatrix(min_eigenvalue(symmetrized(Matrix(inner))),
                                "t=" + format_double(st.t) + ", regime " + std::to_string(i + 1));
    }
    // αᵀK + (β+γ)ᵀL + η = AᵀK + CᵀL + Qq - Pb - CᵀPσ - Λσ + Γᵀ(DᵀPσ - Rr - BᵀK - DᵀL).
    Psigma.noalias() = P * c.sigma;
    h.noalias() = c.D.transpose() * Psigma;
    h.noalias() -= c.R * c.r;
    h.noalias() -= c.B.transpose() * K;
    h.noalias() -= c.D.transpose() * L;
    cholesky_solve(factor, h);
    drift.noalias() = c.A.transpose() * K;
    drift.noalias() += c.C.transpose() * L;
    drift.noalias() += c.Q * c.q;
    drift.noalias() -= c.C.transpose() * Psigma;
    drift.noalias() -= lambda * c.sigma;
    drift.noalias() -= P * c.b;
    drift.noalias() += X.transpose() * h;
    for (std::size_t j = 0; j < ell; ++j) {
      if (rates(i, j) == 0.0) continue;
      for (Eigen::Index e = 0; e < n; ++e) drift(e) += rates(i, j) * st.y[j](p, e);
    }
    for (Eigen::Index e = 0; e < n; ++e) st.targets(p, e) = st.y[i](p, e) + st.dt * drift(e);
  }
}

bool fits_small(const ProblemSpec& spec) { return spec.n <= kSmall && spec.m <= kSmall; }

}  // namespace

StochasticFieldSolution solve_sre_lsmc(const ProblemSpec& spec, const BrownianGrid& bg,
                                       const RegressionBasis& basis, double tol,
                                       std::size_t max_iter, double ridge) {
  require_brownian(spec, "solve_sre_lsmc");
  const TimeGrid& grid = bg.grid;
  const std::size_t ell = spec.regimes();
  const Eigen::Index n = spec.n;
  const Eigen::Index nn = n * n;
  const auto m = static_cast<Eigen::Index>(bg.paths);
  const std::size_t steps = grid.steps();
  const double dt = grid.dt();
  const Matrix& rates = spec.generator.rates;
  const bool small = fits_small(spec);

  std::vector<NodeRegression> regressions;
  regressions.reserve(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) regressions.push_back(node_regression(bg, k, basis, ridge));

  std::vector<Matrix> terminal_values(ell);
  for (std::size_t i = 0; i < ell; ++i) {
    terminal_values[i].resize(m, nn);
    for (Eigen::Index p = 0; p < m; ++p) {
      terminal_values[i].row(p) =
          flatten(symmetrized(spec.terminal_G(i, bg.values(p, static_cast<Eigen::Index>(steps))))).transpose();
    }
  }

  StochasticFieldSolution prev = initial_sre_iterate(spec, bg, basis, ridge);
  std::vector<double> residuals;

  for (std::size_t iteration = 1; iteration <= max_iter; ++iteration) {
    StochasticFieldSolution next(grid, bg.paths, ell, n, n, basis, true);
    double residual = 0.0;
    std::size_t clipped_pairs = 0;

    for (std::size_t i = 0; i < ell; ++i) {
      Matrix y = terminal_values[i];
      {
        const NodeRegression& reg = regressions[steps];
        next.value_coefficients[next.index(steps, i)] = reg.fit(y);
        Matrix fitted = reg.fitted(next.value_coefficients[next.index(steps, i)]);
        clip_rows(fitted, n);
        Matrix before = reg.fitted(prev.value_coefficients[prev.index(steps, i)]);
        clip_rows(before, n);
        residual = std::max(residual, std::sqrt((fitted - before).squaredNorm() / static_cast<double>(m)));
      }

      std::vector<Matrix> neighbours(ell);
      Matrix targets(m, nn);
      for (std::size_t k = steps; k-- > 0;) {
        const auto kc = static_cast<Eigen::Index>(k);
        const NodeRegression& reg = regressions[k];
        const double t = grid.time(k);
        const Matrix mean = reg.fitted(reg.fit(y));
        const Matrix lambda_coef = martingale_fit(reg, y, mean, bg.increments.col(kc), dt);
        next.martingale_coefficients[next.index(k, i)] = lambda_coef;
        const Matrix lambda_vals = reg.fitted(lambda_coef);
        const Matrix frozen_vals = reg.fitted(prev.martingale_coefficients[prev.index(k, i)]);
        for (std::size_t j = 0; j < ell; ++j) {
          if (j == i || rates(i, j) == 0.0) continue;
          neighbours[j] = regressions[k + 1].fitted(prev.value_coefficients[prev.index(k + 1, j)]);
          clip_rows(neighbours[j], n);
        }
        const CoefficientCache cache(spec, i, t);
        const SreStep step{spec, bg, cache, i, kc, t, dt, y, lambda_vals, frozen_vals, neighbours, targets};
        parallel_for(bg.paths, [&](std::size_t begin, std::size_t end) {
          if (small) {
            sre_rows<kSmall>(step, begin, end);
          } else {
            sre_rows<Eigen::Dynamic>(step, begin, end);
          }
        });

        const Matrix coef = reg.fit(targets);
        next.value_coefficients[next.index(k, i)] = coef;
        y = reg.fitted(coef);
        if (clip_rows(y, n)) ++clipped_pairs;
        if (!within_guard(y)) throw BlowUp(k, "LSMC Riccati iterate left the overflow guard");
        Matrix before = reg.fitted(prev.value_coefficients[prev.index(k, i)]);
        clip_rows(before, n);
        residual = std::max(residual, std::sqrt((y - before).squaredNorm() / static_cast<double>(m)));
      }
    }

    residuals.push_back(residual);
    next.clip_fraction = static_cast<double>(clipped_pairs) / static_cast<double>(grid.nodes() * ell);
    prev = std::move(next);
    if (residual <= tol) {
      prev.iterations = iteration;
      prev.residuals = std::move(residuals);
      return prev;
    }
  }
  throw NoConvergence("LSMC Picard iteration did not reach tol " + format_double(tol) + " in " +
                      std::to_string(max_iter) + " iterations (last residual " +
                      format_double(residuals.empty() ? NAN : residuals.back()) + ")");
}

StochasticFieldSolution solve_adjoint_lsmc(const ProblemSpec& spec,
                                           const StochasticFieldSolution& sre,
                                           const BrownianGrid& bg, const RegressionBasis& basis,
                                           double ridge) {
  require_brownian(spec, "solve_adjoint_lsmc");
  require_same_grid(sre.grid, bg.grid, "solve_adjoint_lsmc");
  if (sre.paths != bg.paths || sre.regimes != spec.regimes()) {
    throw GridMismatch("Riccati field was solved on a different path set or regime count");
  }
  const TimeGrid& grid = bg.grid;
  const std::size_t ell = spec.regimes();
  const Eigen::Index n = spec.n;
  const auto m = static_cast<Eigen::Index>(bg.paths);
  const std::size_t steps = grid.steps();
  const double dt = grid.dt();
  const bool small = fits_small(spec);

  StochasticFieldSolution field(grid, bg.paths, ell, n, 1, basis, false);
  field.iterations = 1;

  // y[i]: per-path K(t_{k+1}, i) values, paths x n.
  std::vector<Matrix> y(ell, Matrix(m, n));
  const NodeRegression terminal = node_regression(bg, steps, basis, ridge);
  for (std::size_t i = 0; i < ell; ++i) {
    for (Eigen::Index p = 0; p < m; ++p) {
      const double w = bg.values(p, static_cast<Eigen::Index>(steps));
      y[i].row(p) = (spec.terminal_G(i, w) * spec.terminal_g(i, w)).transpose();
    }
    field.value_coefficients[field.index(steps, i)] = terminal.fit(y[i]);
  }

  std::vector<Matrix> targets(ell, Matrix(m, n));
  for (std::size_t k = steps; k-- > 0;) {
    const auto kc = static_cast<Eigen::Index>(k);
    const NodeRegression reg = node_regression(bg, k, basis, ridge);
    const double t = grid.time(k);
    std::vector<Matrix> l_vals(ell);
    for (std::size_t i = 0; i < ell; ++i) {
      const Matrix mean = reg.fitted(reg.fit(y[i]));
      const Matrix coef = martingale_fit(reg, y[i], mean, bg.increments.col(kc), dt);
      field.martingale_coefficients[field.index(k, i)] = coef;
      l_vals[i] = reg.fitted(coef);
    }
    for (std::size_t i = 0; i < ell; ++i) {
      Matrix p_vals = reg.fitted(sre.value_coefficients[sre.index(k, i)]);
      clip_rows(p_vals, n, INFINITY);
      const Matrix lambda_vals = reg.fitted(sre.martingale_coefficients[sre.index(k, i)]);
      const CoefficientCache cache(spec, i, t);
      const AdjointStep step{spec, bg, cache, i, kc, t, dt, y, l_vals[i], p_vals, lambda_vals, targets[i]};
      parallel_for(bg.paths, [&](std::size_t begin, std::size_t end) {
        if (small) {
          adjoint_rows<kSmall>(step, begin, end);
        } else {
          adjoint_rows<Eigen::Dynamic>(step, begin, end);
        }
      });
    }
    for (std::size_t i = 0; i < ell; ++i) {
      const Matrix coef = reg.fit(targets[i]);
      field.value_coefficients[field.index(k, i)] = coef;
      y[i] = reg.fitted(coef);
      if (!within_guard(y[i])) throw BlowUp(k, "LSMC adjoint left the overflow guard");
    }
  }
  return field;
}

double check_condition_lsigma_paths(const ProblemSpec& spec, const BrownianGrid& bg) {
  double sup = 0.0;
  for (std::size_t i = 0; i < spec.regimes(); ++i) {
    const bool varies = spec.coefficients[i].R.depends_on_w() || spec.coefficients[i].D.depends_on_w();
    for (std::size_t k = 0; k < bg.grid.nodes(); ++k) {
      const double t = bg.grid.time(k);
      const std::size_t count = varies ? bg.paths : 1;
      for (std::size_t p = 0; p < count; ++p) {
        const double w = bg.values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k));
        const Matrix R = spec.coefficients[i].R(t, w);
        const Matrix D = spec.coefficients[i].D(t, w);
        const auto llt = try_spd_factor(R);
        if (!llt) {
          throw SingularR("R not positive definite at t=" + format_double(t) + ", regime " +
                          std::to_string(i + 1));
        }
        sup = std::max(sup, frobenius_norm(D * llt->solve(D.transpose())));
      }
    }
  }
  return sup;
}

namespace {

constexpr std::uint32_t kTableVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw SchemaError("truncated RLQ1 table file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_field_tables(const StochasticFieldSolution& field, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw SchemaError("cannot open " + path.string() + " for writing");
  os.write("RLQ1", 4);
  write_le<std::uint32_t>(os, kTableVersion);
  write_le<std::uint64_t>(os, field.grid.steps());
  write_le<std::uint64_t>(os, field.paths);
  write_le<std::uint64_t>(os, field.regimes);
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(field.rows));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(field.cols));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(field.basis.degree));
  write_le<std::uint64_t>(os, field.psd ? 1 : 0);
  write_le<double>(os, field.grid.horizon());
  for (double s : field.scale) write_le<double>(os, s);
  for (const auto* tables : {&field.value_coefficients, &field.martingale_coefficients}) {
    for (const Matrix& t : *tables) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) write_le<double>(os, t(r, c));
      }
    }
  }
  if (!os) throw SchemaError("failed writing " + path.string());
}

StochasticFieldSolution load_field_tables(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SchemaError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RLQ1", 4) != 0) {
    throw SchemaError(path.string() + " is not an RLQ1 table file");
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != kTableVersion) throw SchemaError("unsupported RLQ1 version " + std::to_string(version));
  const auto steps = read_le<std::uint64_t>(is);
  const auto paths = read_le<std::uint64_t>(is);
  const auto regimes = read_le<std::uint64_t>(is);
  const auto rows = static_cast<Eigen::Index>(read_le<std::uint64_t>(is));
  const auto cols = static_cast<Eigen::Index>(read_le<std::uint64_t>(is));
  const auto degree = static_cast<int>(read_le<std::uint64_t>(is));
  const bool psd = read_le<std::uint64_t>(is) != 0;
  const double horizon = read_le<double>(is);
  StochasticFieldSolution field(TimeGrid(horizon, steps), paths, regimes, rows, cols,
                                RegressionBasis{degree}, psd);
  for (double& s : field.scale) s = read_le<double>(is);
  for (auto* tables : {&field.value_coefficients, &field.martingale_coefficients}) {
    for (Matrix& t : *tables) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = read_le<double>(is);
      }
    }
  }
  return field;
}

}  // namespace rslq

#include "rslq/problem.hpp"

#include "rslq/errors.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace rslq {

std::string to_string(RandomnessMode mode) {
  return mode == RandomnessMode::Deterministic ? "deterministic" : "brownian_markovian";
}

RandomnessMode randomness_mode_from_string(const std::string& s) {
  if (s == "deterministic") return RandomnessMode::Deterministic;
  if (s == "brownian_markovian") return RandomnessMode::BrownianMarkovian;
  throw SchemaError("unknown randomness_mode '" + s + "'");
}

bool CoefficientSet::depends_on_w() const {
  for (const auto* f : {&A, &B, &C, &D, &b, &sigma, &Q, &R, &q_target, &r_target}) {
    if (f->depends_on_w()) return true;
  }
  return S && S->depends_on_w();
}

RegimeCoefficients ProblemSpec::evaluate(std::size_t regime, double t, double w) const {
  RegimeCoefficients out;
  evaluate_into(regime, t, w, out);
  return out;
}

void ProblemSpec::evaluate_into(std::size_t regime, double t, double w,
                                RegimeCoefficients& out) const {
  const auto& c = coefficients[regime];
  c.A.evaluate_into(t, w, out.A);
  c.B.evaluate_into(t, w, out.B);
  c.C.evaluate_into(t, w, out.C);
  c.D.evaluate_into(t, w, out.D);
  c.Q.evaluate_into(t, w, out.Q);
  c.R.evaluate_into(t, w, out.R);
  Matrix tmp;
  c.b.evaluate_into(t, w, tmp);
  out.b = tmp.col(0);
  c.sigma.evaluate_into(t, w, tmp);
  out.sigma = tmp.col(0);
  c.q_target.evaluate_into(t, w, tmp);
  out.q = tmp.col(0);
  c.r_target.evaluate_into(t, w, tmp);
  out.r = tmp.col(0);
  if (c.S) {
    out.S = (*c.S)(t, w);
  } else {
    out.S.reset();
  }
}

Matrix ProblemSpec::terminal_G(std::size_t regime, double w) const {
  return terminal[regime].G(horizon, w);
}

Vector ProblemSpec::terminal_g(std::size_t regime, double w) const {
  return terminal[regime].g(horizon, w).col(0);
}

ProblemSpec make_zero_spec(int n, int m, std::size_t regimes, double horizon) {
  ProblemSpec spec;
  spec.n = n;
  spec.m = m;
  spec.horizon = horizon;
  spec.generator.rates = Matrix::Zero(static_cast<Eigen::Index>(regimes),
                                      static_cast<Eigen::Index>(regimes));
  spec.x = Vector::Zero(n);
  spec.lambda_min = 1.0;
  for (std::size_t i = 0; i < regimes; ++i) {
    CoefficientSet c;
    c.A = CoefficientFunction::zeros(n, n);
    c.B = CoefficientFunction::zeros(n, m);
    c.C = CoefficientFunction::zeros(n, n);
    c.D = CoefficientFunction::zeros(n, m);
    c.b = CoefficientFunction::zeros(n, 1);
    c.sigma = CoefficientFunction::zeros(n, 1);
    c.Q = CoefficientFunction::zeros(n, n);
    c.R = CoefficientFunction::constant(Matrix::Identity(m, m));
    c.q_target = CoefficientFunction::zeros(n, 1);
    c.r_target = CoefficientFunction::zeros(m, 1);
    spec.coefficients.push_back(std::move(c));
    spec.terminal.push_back({CoefficientFunction::zeros(n, n), CoefficientFunction::zeros(n, 1)});
  }
  return spec;
}

double running_cost(const RegimeCoefficients& c, const Vector& x, const Vector& u) {
  const Vector dx = x - c.q;
  const Vector du = u - c.r;
  double cost = dx.dot(c.Q * dx) + du.dot(c.R * du);
  if (c.S) cost += 2.0 * du.dot(*c.S * dx);
  return cost;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::valid() const { return fatal_count() == 0; }

std::size_t ValidationReport::fatal_count() const {
  std::size_t count = 0;
  for (const auto& issue : issues) count += issue.fatal ? 1 : 0;
  return count;
}

std::size_t ValidationReport::blocking_count() const {
  std::size_t count = 0;
  for (const auto& issue : issues) count += (issue.fatal && !issue.checked_by_solver) ? 1 : 0;
  return count;
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& issue : issues) {
    os << (issue.fatal ? "fatal: " : "warning: ") << issue.message << '\n';
  }
  return os.str();
}

namespace {

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Collects the first offending node and the count for one (regime, check).
struct Violation {
  bool seen = false;
  std::size_t first_node = 0;
  double first_time = 0.0;
  double value = 0.0;
  std::size_t count = 0;

  void record(std::size_t node, double t, double v) {
    if (!seen) {
      seen = true;
      first_node = node;
      first_time = t;
      value = v;
    }
    ++count;
  }
};

void check_shape(const CoefficientFunction& f, Eigen::Index rows, Eigen::Index cols,
                 const std::string& name, std::size_t regime, ValidationReport& report) {
  if (f.rows() != rows || f.cols() != cols) {
    ValidationIssue issue;
    issue.regime = regime + 1;
    issue.message = name + " has shape " + std::to_string(f.rows()) + "x" +
                    std::to_string(f.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " in regime " + std::to_string(regime + 1);
    report.issues.push_back(std::move(issue));
  }
}

std::vector<double> w_samples(const ProblemSpec& spec, double t) {
  if (spec.deterministic()) return {0.0};
  const double s = std::sqrt(t);
  return {0.0, s, -s, 2 * s, -2 * s, 3 * s, -3 * s};
}

void push_violation(ValidationReport& report, const Violation& v, std::size_t regime,
                    const std::string& what, bool checked_by_solver = false) {
  if (!v.seen) return;
  ValidationIssue issue;
  issue.regime = regime + 1;
  issue.node = v.first_node;
  issue.value = v.value;
  issue.checked_by_solver = checked_by_solver;
  issue.message = what + " at t=" + fmt_num(v.first_time) + ", regime " +
                  std::to_string(regime + 1) + " (value " + fmt_num(v.value) + ", " +
                  std::to_string(v.count) + " node(s))";
  report.issues.push_back(std::move(issue));
}

}  // namespace

ValidationReport validate_spec(const ProblemSpec& spec, const TimeGrid& grid) {
  ValidationReport report;
  auto fatal = [&](std::string msg) {
    ValidationIssue issue;
    issue.message = std::move(msg);
    report.issues.push_back(std::move(issue));
  };

  // Structure first; nothing else is evaluable if it is broken.
  if (spec.n < 1 || spec.m < 1) fatal("dimensions n and m must be positive");
  const std::size_t ell = spec.regimes();
  if (ell < 1) fatal("at least one regime is required");
  if (!(spec.horizon > 0.0)) fatal("horizon T must be positive");
  if (!(spec.lambda_min > 0.0)) fatal("lambda_min must be positive");
  if (spec.generator.rates.rows() != static_cast<Eigen::Index>(ell) ||
      spec.generator.rates.cols() != static_cast<Eigen::Index>(ell)) {
    fatal("generator is " + std::to_string(spec.generator.rates.rows()) + "x" +
          std::to_string(spec.generator.rates.cols()) + ", expected " + std::to_string(ell) +
          "x" + std::to_string(ell));
  }
  if (spec.terminal.size() != ell) fatal("terminal data count does not match ell");
  if (spec.x.size() != spec.n) fatal("initial state x has wrong length");
  if (spec.initial_regime >= ell) {
    fatal("initial regime " + std::to_string(spec.initial_regime + 1) + " outside 1.." +
          std::to_string(ell));
  }
  if (!report.valid()) return report;

  const Eigen::Index n = spec.n;
  const Eigen::Index m = spec.m;
  for (std::size_t i = 0; i < ell; ++i) {
    const auto& c = spec.coefficients[i];
    check_shape(c.A, n, n, "A", i, report);
    check_shape(c.B, n, m, "B", i, report);
    check_shape(c.C, n, n, "C", i, report);
    check_shape(c.D, n, m, "D", i, report);
    check_shape(c.b, n, 1, "b", i, report);
    check_shape(c.sigma, n, 1, "sigma", i, report);
    check_shape(c.Q, n, n, "Q", i, report);
    check_shape(c.R, m, m, "R", i, report);
    check_shape(c.q_target, n, 1, "q", i, report);
    check_shape(c.r_target, m, 1, "r", i, report);
    if (c.S) check_shape(*c.S, m, n, "S", i, report);
    check_shape(spec.terminal[i].G, n, n, "G", i, report);
    check_shape(spec.terminal[i].g, n, 1, "g", i, report);
  }
  if (!report.valid()) return report;

  const Matrix& rates = spec.generator.rates;
  for (std::size_t i = 0; i < ell; ++i) {
    for (std::size_t j = 0; j < ell; ++j) {
      if (i != j && rates(i, j) < 0.0) {
        ValidationIssue issue;
        issue.regime = i + 1;
        issue.value = rates(i, j);
        issue.message = "generator entry (" + std::to_string(i + 1) + "," +
                        std::to_string(j + 1) + ") is negative: " + fmt_num(rates(i, j));
        report.issues.push_back(std::move(issue));
      }
    }
    const double row_sum = rates.row(static_cast<Eigen::Index>(i)).sum();
    if (!std::isfinite(row_sum) || std::abs(row_sum) > spec.tol.gen) {
      ValidationIssue issue;
      issue.regime = i + 1;
      issue.value = row_sum;
      issue.message = "generator row " + std::to_string(i + 1) + " sums to " + fmt_num(row_sum);
      report.issues.push_back(std::move(issue));
    }
  }

  for (std::size_t i = 0; i < ell; ++i) {
    Violation nonfinite, q_asym, q_psd, r_asym, r_low;
    RegimeCoefficients rc;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      for (const double w : w_samples(spec, t)) {
        spec.evaluate_into(i, t, w, rc);
        bool finite = rc.A.allFinite() && rc.B.allFinite() && rc.C.allFinite() &&
                      rc.D.allFinite() && rc.Q.allFinite() && rc.R.allFinite() &&
                      rc.b.allFinite() && rc.sigma.allFinite() && rc.q.allFinite() &&
                      rc.r.allFinite() && (!rc.S || rc.S->allFinite());
        if (!finite) {
          nonfinite.record(k, t, NAN);
          continue;
        }
        const double qa = asymmetry(rc.Q);
        if (qa > spec.tol.sym) q_asym.record(k, t, qa);
        const double qmin = min_eigenvalue(symmetrized(rc.Q));
        if (qmin < -spec.tol.psd) q_psd.record(k, t, qmin);
        const double ra = asymmetry(rc.R);
        if (ra > spec.tol.sym) r_asym.record(k, t, ra);
        const double rmin = min_eigenvalue(symmetrized(rc.R));
        if (rmin < spec.lambda_min - spec.tol.psd) r_low.record(k, t, rmin);
      }
    }
    push_violation(report, nonfinite, i, "non-finite coefficient");
    push_violation(report, q_asym, i, "Q not symmetric");
    push_violation(report, q_psd, i, "Q not positive semidefinite");
    push_violation(report, r_asym, i, "R not symmetric");
    push_violation(report, r_low, i, "R below lambda_min", true);

    Violation g_nonfinite, g_asym, g_psd;
    const double t_end = spec.horizon;
    for (const double w : w_samples(spec, t_end)) {
      const Matrix G = spec.terminal_G(i, w);
      const Matrix g = spec.terminal[i].g(t_end, w);
      if (!G.allFinite() || !g.allFinite()) {
        g_nonfinite.record(grid.steps(), t_end, NAN);
        continue;
      }
      const double ga = asymmetry(G);
      if (ga > spec.tol.sym) g_asym.record(grid.steps(), t_end, ga);
      const double gmin = min_eigenvalue(symmetrized(G));
      if (gmin < -spec.tol.psd) g_psd.record(grid.steps(), t_end, gmin);
    }
    push_violation(report, g_nonfinite, i, "non-finite terminal data");
    push_violation(report, g_asym, i, "G not symmetric");
    push_violation(report, g_psd, i, "G not positive semidefinite");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Cross-term reduction

ProblemSpec reduce_cross_term(const ProblemSpec& spec) {
  return reduce_cross_term(spec, TimeGrid(spec.horizon, 100));
}

ProblemSpec reduce_cross_term(const ProblemSpec& spec, const TimeGrid& grid) {
  bool any_cross = false;
  for (const auto& c : spec.coefficients) any_cross = any_cross || c.S.has_value();
  if (!any_cross) return spec;

  const Eigen::Index n = spec.n;
  const Eigen::Index m = spec.m;

  for (std::size_t i = 0; i < spec.regimes(); ++i) {
    const auto& c = spec.coefficients[i];
    if (!c.S) continue;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      for (const double w : w_samples(spec, t)) {
        const Matrix R = c.R(t, w);
        const auto llt = try_spd_factor(R);
        if (!llt) {
          throw SingularR("R not positive definite at t=" + fmt_num(t) + ", regime " +
                          std::to_string(i + 1) + " (min eigenvalue " +
                          fmt_num(min_eigenvalue(symmetrized(R))) + ")");
        }
        const Matrix S = (*c.S)(t, w);
        const Matrix q_tilde = c.Q(t, w) - S.transpose() * llt->solve(S);
        const double qmin = min_eigenvalue(symmetrized(q_tilde));
        if (qmin < -spec.tol.psd) {
          throw IndefiniteReducedQ("Q - S'R^-1 S has eigenvalue " + fmt_num(qmin) + " at t=" +
                                   fmt_num(t) + ", regime " + std::to_string(i + 1));
        }
      }
    }
  }

  ProblemSpec out = spec;
  std::vector<CoefficientFunction> shifts;
  for (std::size_t i = 0; i < spec.regimes(); ++i) {
    const CoefficientSet& c = spec.coefficients[i];
    CoefficientSet& r = out.coefficients[i];
    if (!c.S) {
      shifts.push_back(CoefficientFunction::zeros(m, n));
      continue;
    }
    const bool dw = c.depends_on_w();
    // R⁻¹S, shared by every reduced coefficient.
    auto gain = [R = c.R, S = *c.S](double t, double w) -> Matrix {
      return R(t, w).llt().solve(S(t, w));
    };
    r.A = CoefficientFunction(
        n, n, [A = c.A, B = c.B, gain](double t, double w) { return Matrix(A(t, w) - B(t, w) * gain(t, w)); },
        dw);
    r.C = CoefficientFunction(
        n, n, [C = c.C, D = c.D, gain](double t, double w) { return Matrix(C(t, w) - D(t, w) * gain(t, w)); },
        dw);
    r.Q = CoefficientFunction(
        n, n,
        [Q = c.Q, S = *c.S, gain](double t, double w) {
          Matrix q = Q(t, w) - S(t, w).transpose() * gain(t, w);
          symmetrize(q);
          return q;
        },
        dw);
    r.r_target = CoefficientFunction(
        m, 1,
        [rt = c.r_target, q = c.q_target, gain](double t, double w) {
          return Matrix(rt(t, w) + gain(t, w) * q(t, w));
        },
        dw);
    r.S.reset();
    shifts.emplace_back(m, n, gain, dw);
  }
  out.control_shift = std::move(shifts);
  return out;
}

}  // namespace rslq

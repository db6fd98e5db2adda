#pragma once

#include "rslq/rslq.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>
#include <string>

namespace rslq::testing {

inline std::string config_path(const std::string& name) { return std::string(RSLQ_CONFIG_DIR) + "/" + name; }

inline CoefficientFunction constant(const Matrix& m) { return CoefficientFunction::constant(m); }

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

/// A = C = D = 0, B = Q = R = 1, G = 0 on [0, 1]: P(t) = tanh(1 - t).
inline ProblemSpec tanh_spec() {
  ProblemSpec spec = make_zero_spec(1, 1, 1, 1.0);
  spec.coefficients[0].B = constant(scalar(1.0));
  spec.coefficients[0].Q = constant(scalar(1.0));
  spec.x = Vector::Ones(1);
  return spec;
}

/// tanh instance with b = 1: K(t) = sech(1 - t) - 1.
inline ProblemSpec sech_spec() {
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].b = constant(scalar(1.0));
  return spec;
}

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(std::mt19937_64& rng, int n, double lo, double hi) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uni(lo, hi);
  Matrix g(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector eig(n);
  for (int i = 0; i < n; ++i) eig(i) = uni(rng);
  return q * eig.asDiagonal() * q.transpose();
}

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

/// Random valid deterministic instance with constant coefficients.
inline ProblemSpec random_spec(std::mt19937_64& rng, int n, int m, std::size_t ell, bool inhomogeneous) {
  ProblemSpec spec = make_zero_spec(n, m, ell, 1.0);
  std::uniform_real_distribution<double> rate(0.2, 2.0);
  for (std::size_t i = 0; i < ell; ++i) {
    for (std::size_t j = 0; j < ell; ++j) {
      if (i != j) spec.generator.rates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rate(rng);
    }
    const auto ii = static_cast<Eigen::Index>(i);
    spec.generator.rates(ii, ii) = -(spec.generator.rates.row(ii).sum());
  }
  spec.lambda_min = 0.5;
  for (std::size_t i = 0; i < ell; ++i) {
    CoefficientSet& c = spec.coefficients[i];
    c.A = constant(random_matrix(rng, n, n, 0.5));
    c.B = constant(random_matrix(rng, n, m, 0.7));
    c.C = constant(random_matrix(rng, n, n, 0.3));
    c.D = constant(random_matrix(rng, n, m, 0.3));
    c.Q = constant(random_spd(rng, n, 0.0, 2.0));
    c.R = constant(random_spd(rng, m, 0.5, 2.0));
    if (inhomogeneous) {
      c.b = constant(random_matrix(rng, n, 1, 0.3));
      c.sigma = constant(random_matrix(rng, n, 1, 0.3));
      c.q_target = constant(random_matrix(rng, n, 1, 0.5));
      c.r_target = constant(random_matrix(rng, m, 1, 0.5));
    }
    spec.terminal[i].G = constant(random_spd(rng, n, 0.0, 1.5));
    if (inhomogeneous) spec.terminal[i].g = constant(random_matrix(rng, n, 1, 0.5));
  }
  spec.x = random_matrix(rng, n, 1, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, ell - 1);
  spec.initial_regime = pick(rng);
  return spec;
}

/// Classical LQR Riccati solution through the Hamiltonian flow:
/// [X; Y](s) = exp(H s)[I; G], P(T - s) = Y X⁻¹, H = [[-A, BR⁻¹Bᵀ], [Q, Aᵀ]].
inline Matrix hamiltonian_riccati(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                                  const Matrix& G, double s) {
  const Eigen::Index n = A.rows();
  Matrix H(2 * n, 2 * n);
  H << -A, B * R.inverse() * B.transpose(), Q, A.transpose();
  const Matrix flow = (H * s).exp();
  Matrix init(2 * n, n);
  init << Matrix::Identity(n, n), G;
  const Matrix xy = flow * init;
  return xy.bottomRows(n) * xy.topRows(n).inverse();
}

}  // namespace rslq::testing

#include "support.hpp"

#include <gtest/gtest.h>

using namespace rslq;
using namespace rslq::testing;

namespace {

const char* kScalar = R"toml(
[problem]
n = 1
m = 1
ell = 1
T = 2.0
x = [0.5]
i0 = 1
lambda_min = 0.5

[generator]
rates = [[0.0]]

[regime.1]
A = [["0.5*t - 1"]]
B = [[1.0]]
Q = [[2.0]]
R = [["1 + 0.5*sin(t)"]]

[terminal.1]
G = [[3.0]]
)toml";

}  // namespace

TEST(Expression, EvaluatesAgainstStdMath) {
  const Expression e = Expression::parse("1 + 0.5*sin(t) - exp(-w)/(2 + cos(t*w))");
  for (double t : {0.0, 0.3, 1.7}) {
    for (double w : {-1.2, 0.0, 2.5}) {
      const double expected = 1.0 + 0.5 * std::sin(t) - std::exp(-w) / (2.0 + std::cos(t * w));
      EXPECT_NEAR(e(t, w), expected, 1e-15);
    }
  }
  EXPECT_TRUE(e.depends_on_t());
  EXPECT_TRUE(e.depends_on_w());
}

TEST(Expression, ConstantsFold) {
  const Expression e = Expression::parse("-(2*3) + exp(0)");
  ASSERT_TRUE(e.constant_value().has_value());
  EXPECT_EQ(*e.constant_value(), -5.0);
  EXPECT_FALSE(Expression::parse("t").constant_value().has_value());
}

TEST(Expression, RejectsMalformedInput) {
  EXPECT_THROW(Expression::parse("1 +"), std::invalid_argument);
  EXPECT_THROW(Expression::parse("tan(t)"), std::invalid_argument);
  EXPECT_THROW(Expression::parse("(t"), std::invalid_argument);
  EXPECT_THROW(Expression::parse("x"), std::invalid_argument);
}

TEST(Config, ParsesScalarInstance) {
  const ProblemSpec spec = parse_spec(kScalar);
  EXPECT_EQ(spec.n, 1);
  EXPECT_EQ(spec.horizon, 2.0);
  EXPECT_EQ(spec.lambda_min, 0.5);
  EXPECT_EQ(spec.initial_regime, 0u);
  EXPECT_TRUE(spec.deterministic());
  const RegimeCoefficients c = spec.evaluate(0, 1.2);
  EXPECT_NEAR(c.A(0, 0), 0.5 * 1.2 - 1.0, 1e-15);
  EXPECT_NEAR(c.R(0, 0), 1.0 + 0.5 * std::sin(1.2), 1e-15);
  EXPECT_EQ(c.C(0, 0), 0.0);
  EXPECT_EQ(spec.terminal_G(0)(0, 0), 3.0);
}

TEST(Config, RoundTripsThroughWriter) {
  const ProblemSpec spec = load_spec(config_path("two_regime.toml"));
  const ProblemSpec again = parse_spec(write_spec(spec));
  for (std::size_t i = 0; i < 2; ++i) {
    for (double t : {0.0, 0.4, 1.0}) {
      const RegimeCoefficients a = spec.evaluate(i, t);
      const RegimeCoefficients b = again.evaluate(i, t);
      EXPECT_EQ(a.A, b.A);
      EXPECT_EQ(a.R, b.R);
      EXPECT_EQ(a.sigma, b.sigma);
      EXPECT_EQ(a.r, b.r);
    }
  }
  EXPECT_EQ(spec.generator.rates, again.generator.rates);
  EXPECT_EQ(spec.x, again.x);
}

TEST(Config, ErrorsAreTyped) {
  EXPECT_THROW(parse_spec("[problem\nn = 1"), ParseError);
  EXPECT_THROW(load_spec("/nonexistent/config.toml"), ParseError);
  std::string no_r = kScalar;
  no_r.replace(no_r.find("R = [[\"1 + 0.5*sin(t)\"]]"), 24, "");
  EXPECT_THROW(parse_spec(no_r), SchemaError);
  std::string bad_shape = kScalar;
  bad_shape.replace(bad_shape.find("Q = [[2.0]]"), 11, "Q = [[2.0, 1.0]]");
  EXPECT_THROW(parse_spec(bad_shape), DimensionError);
  std::string uses_w = kScalar;
  uses_w.replace(uses_w.find("Q = [[2.0]]"), 11, "Q = [[\"w\"]]");
  EXPECT_THROW(parse_spec(uses_w), SchemaError);
  std::string unknown = kScalar;
  unknown += "\n[extra]\nfoo = 1\n";
  EXPECT_THROW(parse_spec(unknown), SchemaError);
}

TEST(Config, ParseErrorCarriesLine) {
  try {
    parse_spec("[problem]\nn = 1\nm = = 2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Validation, ShippedConfigs) {
  const TimeGrid grid(1.0, 50);
  EXPECT_TRUE(validate_spec(load_spec(config_path("tanh.toml")), grid).valid());
  EXPECT_TRUE(validate_spec(load_spec(config_path("two_regime.toml")), grid).valid());
  const ValidationReport bad = validate_spec(load_spec(config_path("bad_generator.toml")), grid);
  EXPECT_FALSE(bad.valid());
  EXPECT_NE(bad.to_string().find("generator row 2"), std::string::npos);
  const ValidationReport singular = validate_spec(load_spec(config_path("singular_r.toml")), grid);
  EXPECT_FALSE(singular.valid());
  EXPECT_EQ(singular.blocking_count(), 0u);
}

TEST(Validation, IndefiniteTerminalWeight) {
  ProblemSpec spec = tanh_spec();
  spec.terminal[0].G = constant(scalar(-0.1));
  const ValidationReport report = validate_spec(spec, TimeGrid(1.0, 10));
  EXPECT_FALSE(report.valid());
  EXPECT_EQ(report.fatal_count(), 1u);
}

TEST(Validation, NegativeOffDiagonalRate) {
  ProblemSpec spec = make_zero_spec(1, 1, 2, 1.0);
  spec.generator.rates << 0.5, -0.5, 1.0, -1.0;
  EXPECT_FALSE(validate_spec(spec, TimeGrid(1.0, 10)).valid());
}

TEST(CrossTerm, PointwiseCostIdentity) {
  std::mt19937_64 rng(99);
  ProblemSpec spec = random_spec(rng, 3, 2, 2, true);
  for (std::size_t i = 0; i < 2; ++i) {
    const Matrix R = spec.evaluate(i, 0.0).R;
    const Matrix Q = spec.evaluate(i, 0.0).Q;
    // Small enough that Q - SᵀR⁻¹S stays PSD after bumping Q.
    const Matrix S = random_matrix(rng, 2, 3, 0.3);
    spec.coefficients[i].S = constant(S);
    spec.coefficients[i].Q = constant(Q + S.transpose() * R.inverse() * S + 0.1 * Matrix::Identity(3, 3));
  }
  const ProblemSpec reduced = reduce_cross_term(spec, TimeGrid(1.0, 10));
  ASSERT_TRUE(reduced.control_shift.has_value());
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int sample = 0; sample < 1000; ++sample) {
    const std::size_t i = static_cast<std::size_t>(sample % 2);
    const double t = (sample % 17) / 16.0;
    Vector x(3), u(2);
    for (auto& v : x) v = normal(rng);
    for (auto& v : u) v = normal(rng);
    const RegimeCoefficients c = spec.evaluate(i, t);
    const Vector dx = x - c.q;
    const Vector du = u - c.r;
    const double original = dx.dot(c.Q * dx) + 2.0 * du.dot(*c.S * dx) + du.dot(c.R * du);
    const Vector shifted = u + c.R.inverse() * *c.S * x;
    const double reduced_cost = running_cost(reduced.evaluate(i, t), x, shifted);
    worst = std::max(worst, std::abs(original - reduced_cost) / (1.0 + std::abs(original)));
    EXPECT_NEAR(running_cost(c, x, u), original, 1e-12 * (1.0 + std::abs(original)));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(CrossTerm, RejectsIndefiniteReduction) {
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].S = constant(scalar(2.0));
  EXPECT_THROW(reduce_cross_term(spec, TimeGrid(1.0, 4)), IndefiniteReducedQ);
  spec.coefficients[0].R = constant(scalar(0.0));
  EXPECT_THROW(reduce_cross_term(spec, TimeGrid(1.0, 4)), SingularR);
}

TEST(Linalg, ClipToPsdAndTraceBound) {
  Matrix m(2, 2);
  m << 1.0, 0.0, 0.0, -0.5;
  EXPECT_NEAR(clip_to_psd(m), 0.5, 1e-15);
  EXPECT_NEAR(min_eigenvalue(m), 0.0, 1e-15);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = symmetrized(random_matrix(rng, 3, 3, 1.0));
    const Matrix b = random_spd(rng, 3, 0.0, 2.0);
    EXPECT_TRUE(spectral_trace_bound_check(a, b));
  }
  EXPECT_FALSE(try_spd_factor(m.cwiseProduct(Matrix::Constant(2, 2, -1.0))).has_value());
}

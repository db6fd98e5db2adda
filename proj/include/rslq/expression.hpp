#pragma once

#include "rslq/linalg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rslq {

/// Scalar expression in t (time) and w (Brownian value).
///
/// Grammar: real literals, `t`, `w`, `+ - * /`, unary minus, parentheses and
/// the functions `sin`, `cos`, `exp`. Parsed once into a postfix program;
/// subexpressions without `t`/`w` are folded at parse time.
class Expression {
  enum class Op : unsigned char { Push, T, W, Add, Sub, Mul, Div, Neg, Sin, Cos, Exp };
  struct Instr {
    Op op;
    double value;
  };

 public:
  Expression() : program_{{Op::Push, 0.0}}, text_("0") {}

  /// Throws std::invalid_argument with a position-bearing message on bad input.
  static Expression parse(std::string_view text);
  static Expression constant(double value);

  double operator()(double t, double w) const;

  bool depends_on_t() const noexcept { return uses_t_; }
  bool depends_on_w() const noexcept { return uses_w_; }
  std::optional<double> constant_value() const;

  /// Source text; for constants a 17-digit literal.
  const std::string& text() const noexcept { return text_; }

 private:
  friend class ExpressionParser;

  std::vector<Instr> program_;
  std::string text_;
  bool uses_t_ = false;
  bool uses_w_ = false;
};

/// Rows x cols grid of expressions.
class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(Eigen::Index rows, Eigen::Index cols, std::vector<Expression> entries);

  static ExprMatrix constant(const Matrix& m);

  Matrix operator()(double t, double w) const;
  void evaluate_into(double t, double w, Matrix& out) const;

  Eigen::Index rows() const noexcept { return rows_; }
  Eigen::Index cols() const noexcept { return cols_; }
  const Expression& at(Eigen::Index r, Eigen::Index c) const { return entries_[r * cols_ + c]; }
  bool depends_on_w() const;
  bool is_constant() const;

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::vector<Expression> entries_;  // row-major
};

/// A coefficient process evaluated at (t, w).
///
/// Either symbolic (an ExprMatrix, serializable) or derived (an arbitrary
/// callable, e.g. produced by the cross-term reduction).
class CoefficientFunction {
 public:
  using Callable = std::function<Matrix(double t, double w)>;

  CoefficientFunction() = default;
  CoefficientFunction(ExprMatrix symbolic);  // NOLINT(google-explicit-constructor)
  CoefficientFunction(Eigen::Index rows, Eigen::Index cols, Callable fn, bool depends_on_w);

  static CoefficientFunction constant(const Matrix& m) { return ExprMatrix::constant(m); }
  static CoefficientFunction zeros(Eigen::Index rows, Eigen::Index cols) {
    return constant(Matrix::Zero(rows, cols));
  }

  Matrix operator()(double t, double w) const;
  void evaluate_into(double t, double w, Matrix& out) const;

  Eigen::Index rows() const noexcept { return rows_; }
  Eigen::Index cols() const noexcept { return cols_; }
  bool depends_on_w() const noexcept { return depends_on_w_; }
  bool is_symbolic() const noexcept { return symbolic_.has_value(); }
  const ExprMatrix& symbolic() const { return *symbolic_; }
  bool is_zero() const;

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::optional<ExprMatrix> symbolic_;
  Callable fn_;
  bool depends_on_w_ = false;
};

std::string format_double(double v);

}  // namespace rslq

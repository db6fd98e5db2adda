#include "rslq/expression.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rslq {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {
constexpr std::size_t kMaxStack = 64;
}

// Recursive descent: expr := term (('+'|'-') term)*; term := unary (('*'|'/') unary)*;
// unary := '-' unary | '+' unary | primary; primary := number | t | w | func '(' expr ')' | '(' expr ')'.
class ExpressionParser {
 public:
  explicit ExpressionParser(std::string_view src) : src_(src) {}

  Expression run() {
    Expression e;
    e.program_.clear();
    program_ = &e.program_;
    parse_expr();
    skip_ws();
    if (pos_ != src_.size()) fail("unexpected '" + std::string(1, src_[pos_]) + "'");
    e.text_ = std::string(src_);
    for (const auto& ins : e.program_) {
      if (ins.op == Expression::Op::T) e.uses_t_ = true;
      if (ins.op == Expression::Op::W) e.uses_w_ = true;
    }
    if (max_depth_ > kMaxStack) fail("expression too deeply nested");
    if (!e.uses_t_ && !e.uses_w_) {
      const double v = e(0.0, 0.0);
      e.program_ = {{Expression::Op::Push, v}};
    }
    return e;
  }

 private:
  using Op = Expression::Op;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument("expression \"" + std::string(src_) + "\" at column " +
                                std::to_string(pos_ + 1) + ": " + msg);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void emit(Op op, double v = 0.0) {
    program_->push_back({op, v});
    switch (op) {
      case Op::Push:
      case Op::T:
      case Op::W:
        ++depth_;
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
        --depth_;
        break;
      default:
        break;
    }
    max_depth_ = std::max(max_depth_, depth_);
  }

  void parse_expr() {
    parse_term();
    for (;;) {
      if (accept('+')) {
        parse_term();
        emit(Op::Add);
      } else if (accept('-')) {
        parse_term();
        emit(Op::Sub);
      } else {
        return;
      }
    }
  }

  void parse_term() {
    parse_unary();
    for (;;) {
      if (accept('*')) {
        parse_unary();
        emit(Op::Mul);
      } else if (accept('/')) {
        parse_unary();
        emit(Op::Div);
      } else {
        return;
      }
    }
  }

  void parse_unary() {
    if (accept('-')) {
      parse_unary();
      emit(Op::Neg);
    } else if (accept('+')) {
      parse_unary();
    } else {
      parse_primary();
    }
  }

  void parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of expression");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      parse_expr();
      if (!accept(')')) fail("expected ')'");
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = src_.data() + pos_;
      char* end = nullptr;
      const std::string tmp(begin, src_.size() - pos_);
      const double v = std::strtod(tmp.c_str(), &end);
      const auto used = static_cast<std::size_t>(end - tmp.c_str());
      if (used == 0) fail("bad number");
      pos_ += used;
      emit(Op::Push, v);
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      const std::string_view name = src_.substr(start, pos_ - start);
      if (name == "t") return emit(Op::T);
      if (name == "w") return emit(Op::W);
      Op fn;
      if (name == "sin") {
        fn = Op::Sin;
      } else if (name == "cos") {
        fn = Op::Cos;
      } else if (name == "exp") {
        fn = Op::Exp;
      } else {
        pos_ = start;
        fail("unknown identifier '" + std::string(name) + "'");
      }
      if (!accept('(')) fail("expected '(' after " + std::string(name));
      parse_expr();
      if (!accept(')')) fail("expected ')'");
      emit(fn);
      return;
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::vector<Expression::Instr>* program_ = nullptr;
  std::size_t depth_ = 0;
  std::size_t max_depth_ = 0;
};

Expression Expression::parse(std::string_view text) { return ExpressionParser(text).run(); }

Expression Expression::constant(double value) {
  Expression e;
  e.program_ = {{Op::Push, value}};
  e.text_ = format_double(value);
  return e;
}

double Expression::operator()(double t, double w) const {
  if (program_.size() == 1 && program_[0].op == Op::Push) return program_[0].value;
  std::array<double, kMaxStack> stack{};
  std::size_t sp = 0;
  for (const auto& ins : program_) {
    switch (ins.op) {
      case Op::Push: stack[sp++] = ins.value; break;
      case Op::T: stack[sp++] = t; break;
      case Op::W: stack[sp++] = w; break;
      case Op::Add: --sp; stack[sp - 1] += stack[sp]; break;
      case Op::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
      case Op::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
      case Op::Div: --sp; stack[sp - 1] /= stack[sp]; break;
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
      case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
      case Op::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
    }
  }
  return stack[0];
}

std::optional<double> Expression::constant_value() const {
  if (uses_t_ || uses_w_) return std::nullopt;
  return program_.front().value;
}

ExprMatrix::ExprMatrix(Eigen::Index rows, Eigen::Index cols, std::vector<Expression> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (static_cast<Eigen::Index>(entries_.size()) != rows * cols) {
    throw std::invalid_argument("ExprMatrix: entry count does not match shape");
  }
}

ExprMatrix ExprMatrix::constant(const Matrix& m) {
  std::vector<Expression> entries;
  entries.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) entries.push_back(Expression::constant(m(r, c)));
  }
  return {m.rows(), m.cols(), std::move(entries)};
}

Matrix ExprMatrix::operator()(double t, double w) const {
  Matrix out(rows_, cols_);
  evaluate_into(t, w, out);
  return out;
}

void ExprMatrix::evaluate_into(double t, double w, Matrix& out) const {
  out.resize(rows_, cols_);
  for (Eigen::Index r = 0; r < rows_; ++r) {
    for (Eigen::Index c = 0; c < cols_; ++c) out(r, c) = entries_[r * cols_ + c](t, w);
  }
}

bool ExprMatrix::depends_on_w() const {
  for (const auto& e : entries_) {
    if (e.depends_on_w()) return true;
  }
  return false;
}

bool ExprMatrix::is_constant() const {
  for (const auto& e : entries_) {
    if (!e.constant_value()) return false;
  }
  return true;
}

CoefficientFunction::CoefficientFunction(ExprMatrix symbolic)
    : rows_(symbolic.rows()),
      cols_(symbolic.cols()),
      depends_on_w_(symbolic.depends_on_w()) {
  symbolic_ = std::move(symbolic);
}

CoefficientFunction::CoefficientFunction(Eigen::Index rows, Eigen::Index cols, Callable fn,
                                         bool depends_on_w)
    : rows_(rows), cols_(cols), fn_(std::move(fn)), depends_on_w_(depends_on_w) {}

Matrix CoefficientFunction::operator()(double t, double w) const {
  if (symbolic_) return (*symbolic_)(t, w);
  if (!fn_) return Matrix::Zero(rows_, cols_);
  return fn_(t, w);
}

void CoefficientFunction::evaluate_into(double t, double w, Matrix& out) const {
  if (symbolic_) {
    symbolic_->evaluate_into(t, w, out);
  } else {
    out = (*this)(t, w);
  }
}

bool CoefficientFunction::is_zero() const {
  if (!symbolic_) return false;
  for (Eigen::Index r = 0; r < rows_; ++r) {
    for (Eigen::Index c = 0; c < cols_; ++c) {
      const auto v = symbolic_->at(r, c).constant_value();
      if (!v || *v != 0.0) return false;
    }
  }
  return true;
}

}  // namespace rslq

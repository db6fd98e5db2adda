#pragma once

#include <stdexcept>
#include <string>

namespace rslq {

/// Base of every error raised by the library. `what()` always starts with
/// the error name followed by ": " so callers can match on it.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& detail)
      : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define RSLQ_DEFINE_ERROR(Type)                                   \
  class Type : public Error {                                     \
   public:                                                        \
    explicit Type(const std::string& detail) : Error(#Type, detail) {} \
  }

RSLQ_DEFINE_ERROR(SchemaError);
RSLQ_DEFINE_ERROR(DimensionError);
RSLQ_DEFINE_ERROR(SingularR);
RSLQ_DEFINE_ERROR(IndefiniteReducedQ);
RSLQ_DEFINE_ERROR(NoConvergence);
RSLQ_DEFINE_ERROR(DegenerateDesign);
RSLQ_DEFINE_ERROR(GridMismatch);
RSLQ_DEFINE_ERROR(ModeError);

#undef RSLQ_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& detail)
      : Error("ParseError", "line " + std::to_string(line) + ": " + detail), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// The SPD factorization of R + DᵀPD failed.
class SingularInnerMatrix : public Error {
 public:
  SingularInnerMatrix(double min_eigenvalue, const std::string& where)
      : Error("SingularInnerMatrix",
              where + " (min eigenvalue " + std::to_string(min_eigenvalue) + ")"),
        min_eigenvalue_(min_eigenvalue) {}

  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// A solution entry left the overflow guard.
class BlowUp : public Error {
 public:
  BlowUp(std::size_t node, const std::string& where)
      : Error("BlowUp", where + " at node " + std::to_string(node)), node_(node) {}

  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

}  // namespace rslq

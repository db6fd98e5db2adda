#include "rslq/config.hpp"

#include "rslq/errors.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>
#include <vector>

namespace rslq {

namespace {

// ---------------------------------------------------------------------------
// Minimal TOML reader: tables with dotted headers, key = value, numbers,
// strings, booleans and (nested, multi-line) arrays.

struct Value {
  using Array = std::vector<Value>;
  std::variant<double, std::string, bool, Array> data;
  bool integer = false;
  int line = 0;

  bool is_number() const { return std::holds_alternative<double>(data); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }
  double number() const { return std::get<double>(data); }
  const std::string& string() const { return std::get<std::string>(data); }
  const Array& array() const { return std::get<Array>(data); }
};

struct Table {
  int line = 0;
  std::map<std::string, Value> entries;
};

class TomlReader {
 public:
  explicit TomlReader(std::string_view src) : src_(src) {}

  std::map<std::string, Table> read() {
    std::map<std::string, Table> tables;
    Table* current = &tables[""];
    for (;;) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        const int header_line = line_;
        std::string name;
        while (!eof() && peek() != ']' && peek() != '\n') name += src_[pos_++];
        if (eof() || peek() != ']') fail("unterminated table header");
        ++pos_;
        name = trim(name);
        if (name.empty()) fail("empty table header");
        for (char c : name) {
          if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) {
            fail("invalid character in table header '" + name + "'");
          }
        }
        if (tables.count(name) && name != "") fail("duplicate table [" + name + "]");
        current = &tables[name];
        current->line = header_line;
        expect_line_end();
        continue;
      }
      const int key_line = line_;
      const std::string key = read_key();
      skip_inline_ws();
      if (eof() || peek() != '=') fail("expected '=' after key '" + key + "'");
      ++pos_;
      skip_inline_ws();
      Value v = read_value();
      v.line = key_line;
      if (current->entries.count(key)) fail("duplicate key '" + key + "'");
      current->entries.emplace(key, std::move(v));
      expect_line_end();
    }
    return tables;
  }

 private:
  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, msg); }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
  }

  void skip_comment() {
    if (!eof() && peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }

  // Whitespace, newlines and comments, as allowed between statements and inside arrays.
  void skip_blank_lines() {
    for (;;) {
      skip_inline_ws();
      skip_comment();
      if (!eof() && peek() == '\n') {
        ++pos_;
        ++line_;
        continue;
      }
      return;
    }
  }

  void expect_line_end() {
    skip_inline_ws();
    skip_comment();
    if (eof()) return;
    if (peek() != '\n') fail("unexpected '" + std::string(1, peek()) + "' after value");
    ++pos_;
    ++line_;
  }

  std::string read_key() {
    if (peek() == '"') return read_basic_string();
    std::string key;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                      peek() == '-')) {
      key += src_[pos_++];
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::string read_basic_string() {
    ++pos_;  // opening quote
    std::string out;
    for (;;) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = src_[pos_++];
      if (c == '"') return out;
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = src_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unknown escape \\") + e);
        }
        continue;
      }
      out += c;
    }
  }

  std::string read_literal_string() {
    ++pos_;
    std::string out;
    for (;;) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = src_[pos_++];
      if (c == '\'') return out;
      out += c;
    }
  }

  Value read_value() {
    if (eof()) fail("missing value");
    Value v;
    v.line = line_;
    const char c = peek();
    if (c == '"') {
      v.data = read_basic_string();
    } else if (c == '\'') {
      v.data = read_literal_string();
    } else if (c == '[') {
      ++pos_;
      Value::Array items;
      for (;;) {
        skip_blank_lines();
        if (eof()) fail("unterminated array");
        if (peek() == ']') {
          ++pos_;
          break;
        }
        items.push_back(read_value());
        skip_blank_lines();
        if (eof()) fail("unterminated array");
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        if (peek() == ']') {
          ++pos_;
          break;
        }
        fail("expected ',' or ']' in array");
      }
      v.data = std::move(items);
    } else if (src_.substr(pos_, 4) == "true") {
      pos_ += 4;
      v.data = true;
    } else if (src_.substr(pos_, 5) == "false") {
      pos_ += 5;
      v.data = false;
    } else {
      std::string tok;
      while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '.' ||
                        peek() == '+' || peek() == '-' || peek() == '_')) {
        if (peek() != '_') tok += peek();
        ++pos_;
      }
      if (tok.empty()) fail("unexpected '" + std::string(1, c) + "'");
      double num = 0.0;
      if (tok == "inf" || tok == "+inf") {
        num = INFINITY;
      } else if (tok == "-inf") {
        num = -INFINITY;
      } else if (tok == "nan" || tok == "+nan" || tok == "-nan") {
        num = NAN;
      } else {
        std::size_t used = 0;
        try {
          num = std::stod(tok, &used);
        } catch (const std::exception&) {
          fail("invalid number '" + tok + "'");
        }
        if (used != tok.size()) fail("invalid number '" + tok + "'");
        v.integer = tok.find_first_of(".eE") == std::string::npos;
      }
      v.data = num;
    }
    return v;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

// ---------------------------------------------------------------------------
// Schema

const Value& require(const Table& table, const std::string& section, const std::string& key) {
  const auto it = table.entries.find(key);
  if (it == table.entries.end()) {
    throw SchemaError("[" + section + "] is missing required field '" + key + "'");
  }
  return it->second;
}

double as_number(const Value& v, const std::string& field) {
  if (!v.is_number()) throw SchemaError(field + " must be a number (line " + std::to_string(v.line) + ")");
  return v.number();
}

long as_integer(const Value& v, const std::string& field) {
  const double d = as_number(v, field);
  if (!v.integer || d != std::floor(d)) {
    throw SchemaError(field + " must be an integer (line " + std::to_string(v.line) + ")");
  }
  return static_cast<long>(d);
}

Expression as_expression(const Value& v, const std::string& field, bool allow_w) {
  if (v.is_number()) return Expression::constant(v.number());
  if (!v.is_string()) {
    throw SchemaError(field + " entries must be numbers or expression strings (line " +
                      std::to_string(v.line) + ")");
  }
  Expression e;
  try {
    e = Expression::parse(v.string());
  } catch (const std::invalid_argument& ex) {
    throw ParseError(v.line, field + ": " + ex.what());
  }
  if (e.depends_on_w() && !allow_w) {
    throw SchemaError(field + " uses w but randomness_mode is deterministic (line " +
                      std::to_string(v.line) + ")");
  }
  return e;
}

[[noreturn]] void dimension_error(const std::string& field, const Value& v, const std::string& msg) {
  throw DimensionError(field + ": " + msg + " (line " + std::to_string(v.line) + ")");
}

ExprMatrix read_matrix(const Value& v, Eigen::Index rows, Eigen::Index cols,
                       const std::string& field, bool allow_w) {
  std::vector<Expression> entries;
  entries.reserve(static_cast<std::size_t>(rows * cols));
  if (!v.is_array()) {
    if (rows == 1 && cols == 1) {
      entries.push_back(as_expression(v, field, allow_w));
      return {1, 1, std::move(entries)};
    }
    dimension_error(field, v, "expected a " + std::to_string(rows) + "x" + std::to_string(cols) +
                                  " matrix literal");
  }
  const auto& outer = v.array();
  if (static_cast<Eigen::Index>(outer.size()) != rows) {
    dimension_error(field, v, "expected " + std::to_string(rows) + " rows, got " +
                                  std::to_string(outer.size()));
  }
  for (std::size_t r = 0; r < outer.size(); ++r) {
    const Value& row = outer[r];
    if (!row.is_array()) {
      dimension_error(field, v, "row " + std::to_string(r + 1) + " is not an array");
    }
    if (static_cast<Eigen::Index>(row.array().size()) != cols) {
      dimension_error(field, v, "row " + std::to_string(r + 1) + " has " +
                                    std::to_string(row.array().size()) + " entries, expected " +
                                    std::to_string(cols));
    }
    for (const Value& e : row.array()) entries.push_back(as_expression(e, field, allow_w));
  }
  return {rows, cols, std::move(entries)};
}

ExprMatrix read_vector(const Value& v, Eigen::Index len, const std::string& field, bool allow_w) {
  std::vector<Expression> entries;
  if (!v.is_array()) {
    if (len == 1) {
      entries.push_back(as_expression(v, field, allow_w));
      return {1, 1, std::move(entries)};
    }
    dimension_error(field, v, "expected a vector of length " + std::to_string(len));
  }
  const auto& items = v.array();
  if (static_cast<Eigen::Index>(items.size()) != len) {
    dimension_error(field, v, "expected " + std::to_string(len) + " entries, got " +
                                  std::to_string(items.size()));
  }
  for (const Value& e : items) {
    if (e.is_array()) {
      // column form [[a], [b]]
      if (e.array().size() != 1) dimension_error(field, v, "expected a flat vector");
      entries.push_back(as_expression(e.array()[0], field, allow_w));
    } else {
      entries.push_back(as_expression(e, field, allow_w));
    }
  }
  return {len, 1, std::move(entries)};
}

// (M + Mᵀ)/2 on symbolic entries.
ExprMatrix symmetrize_symbolic(const ExprMatrix& m) {
  std::vector<Expression> entries;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const Expression& a = m.at(r, c);
      const Expression& b = m.at(c, r);
      const auto av = a.constant_value();
      const auto bv = b.constant_value();
      if (av && bv) {
        entries.push_back(*av == *bv ? a : Expression::constant(0.5 * (*av + *bv)));
      } else if (a.text() == b.text()) {
        entries.push_back(a);
      } else {
        entries.push_back(Expression::parse("0.5*((" + a.text() + ")+(" + b.text() + "))"));
      }
    }
  }
  return {m.rows(), m.cols(), std::move(entries)};
}

void reject_unknown(const Table& table, const std::string& section,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, value] : table.entries) {
    if (!allowed.count(key)) {
      throw SchemaError("[" + section + "] has unknown field '" + key + "' (line " +
                        std::to_string(value.line) + ")");
    }
  }
}

}  // namespace

ProblemSpec parse_spec(std::string_view text) {
  auto tables = TomlReader(text).read();

  if (!tables[""].entries.empty()) {
    const auto& [key, value] = *tables[""].entries.begin();
    throw SchemaError("field '" + key + "' outside any section (line " +
                      std::to_string(value.line) + ")");
  }
  if (!tables.count("problem")) throw SchemaError("missing [problem] section");
  if (!tables.count("generator")) throw SchemaError("missing [generator] section");

  const Table& problem = tables["problem"];
  reject_unknown(problem, "problem",
                 {"n", "m", "ell", "T", "x", "i0", "lambda_min", "randomness_mode"});

  ProblemSpec spec;
  const long n = as_integer(require(problem, "problem", "n"), "problem.n");
  const long m = as_integer(require(problem, "problem", "m"), "problem.m");
  const long ell = as_integer(require(problem, "problem", "ell"), "problem.ell");
  if (n < 1 || m < 1 || ell < 1) throw SchemaError("problem.n, m and ell must be positive");
  spec.n = static_cast<int>(n);
  spec.m = static_cast<int>(m);
  spec.horizon = as_number(require(problem, "problem", "T"), "problem.T");
  spec.lambda_min = as_number(require(problem, "problem", "lambda_min"), "problem.lambda_min");
  const long i0 = as_integer(require(problem, "problem", "i0"), "problem.i0");
  spec.initial_regime = i0 >= 1 ? static_cast<std::size_t>(i0 - 1) : static_cast<std::size_t>(-1);
  if (const auto it = problem.entries.find("randomness_mode"); it != problem.entries.end()) {
    if (!it->second.is_string()) throw SchemaError("problem.randomness_mode must be a string");
    spec.mode = randomness_mode_from_string(it->second.string());
  }
  const bool allow_w = !spec.deterministic();

  {
    const Value& xv = require(problem, "problem", "x");
    const ExprMatrix x = read_vector(xv, n, "problem.x", false);
    spec.x = x(0.0, 0.0).col(0);
  }

  const Table& gen = tables["generator"];
  reject_unknown(gen, "generator", {"rates"});
  spec.generator.rates = read_matrix(require(gen, "generator", "rates"), ell, ell,
                                     "generator.rates", false)(0.0, 0.0);

  if (const auto it = tables.find("tolerances"); it != tables.end()) {
    reject_unknown(it->second, "tolerances", {"psd", "sym", "gen"});
    const auto& e = it->second.entries;
    if (e.count("psd")) spec.tol.psd = as_number(e.at("psd"), "tolerances.psd");
    if (e.count("sym")) spec.tol.sym = as_number(e.at("sym"), "tolerances.sym");
    if (e.count("gen")) spec.tol.gen = as_number(e.at("gen"), "tolerances.gen");
  }

  std::set<std::string> known = {"", "problem", "generator", "tolerances"};
  for (long i = 1; i <= ell; ++i) {
    const std::string section = "regime." + std::to_string(i);
    known.insert(section);
    const auto it = tables.find(section);
    if (it == tables.end()) throw SchemaError("missing [" + section + "] section");
    const Table& t = it->second;
    reject_unknown(t, section, {"A", "B", "C", "D", "b", "sigma", "Q", "R", "q", "r", "S"});

    auto matrix = [&](const std::string& key, Eigen::Index rows, Eigen::Index cols) {
      const auto e = t.entries.find(key);
      if (e == t.entries.end()) return CoefficientFunction::zeros(rows, cols);
      return CoefficientFunction(read_matrix(e->second, rows, cols, section + "." + key, allow_w));
    };
    auto vector = [&](const std::string& key, Eigen::Index len) {
      const auto e = t.entries.find(key);
      if (e == t.entries.end()) return CoefficientFunction::zeros(len, 1);
      return CoefficientFunction(read_vector(e->second, len, section + "." + key, allow_w));
    };

    CoefficientSet c;
    c.A = matrix("A", n, n);
    c.B = matrix("B", n, m);
    c.C = matrix("C", n, n);
    c.D = matrix("D", n, m);
    c.b = vector("b", n);
    c.sigma = vector("sigma", n);
    c.Q = CoefficientFunction(symmetrize_symbolic(matrix("Q", n, n).symbolic()));
    require(t, section, "R");
    c.R = CoefficientFunction(symmetrize_symbolic(matrix("R", m, m).symbolic()));
    c.q_target = vector("q", n);
    c.r_target = vector("r", m);
    if (t.entries.count("S")) c.S = matrix("S", m, n);
    spec.coefficients.push_back(std::move(c));

    const std::string term = "terminal." + std::to_string(i);
    known.insert(term);
    TerminalData td{CoefficientFunction::zeros(n, n), CoefficientFunction::zeros(n, 1)};
    if (const auto tt = tables.find(term); tt != tables.end()) {
      reject_unknown(tt->second, term, {"G", "g"});
      const auto& e = tt->second.entries;
      if (e.count("G")) {
        td.G = CoefficientFunction(
            symmetrize_symbolic(read_matrix(e.at("G"), n, n, term + ".G", allow_w)));
      }
      if (e.count("g")) td.g = CoefficientFunction(read_vector(e.at("g"), n, term + ".g", allow_w));
    }
    spec.terminal.push_back(std::move(td));
  }

  for (const auto& [name, table] : tables) {
    if (!known.count(name)) {
      throw SchemaError("unknown section [" + name + "] (line " + std::to_string(table.line) + ")");
    }
  }
  return spec;
}

ProblemSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str());
}

namespace {

std::string entry_text(const Expression& e) {
  if (const auto v = e.constant_value()) return format_double(*v);
  return "\"" + e.text() + "\"";
}

std::string matrix_literal(const CoefficientFunction& f, const std::string& field) {
  if (!f.is_symbolic()) throw SchemaError("cannot serialize derived coefficient " + field);
  const ExprMatrix& m = f.symbolic();
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out += r ? ", [" : "[";
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ", ";
      out += entry_text(m.at(r, c));
    }
    out += "]";
  }
  return out + "]";
}

std::string vector_literal(const CoefficientFunction& f, const std::string& field) {
  if (!f.is_symbolic()) throw SchemaError("cannot serialize derived coefficient " + field);
  const ExprMatrix& m = f.symbolic();
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += ", ";
    out += entry_text(m.at(r, 0));
  }
  return out + "]";
}

}  // namespace

std::string write_spec(const ProblemSpec& spec) {
  std::ostringstream os;
  os << "[problem]\n"
     << "n = " << spec.n << "\n"
     << "m = " << spec.m << "\n"
     << "ell = " << spec.regimes() << "\n"
     << "T = " << format_double(spec.horizon) << "\n"
     << "x = [";
  for (Eigen::Index i = 0; i < spec.x.size(); ++i) os << (i ? ", " : "") << format_double(spec.x(i));
  os << "]\n"
     << "i0 = " << spec.initial_regime + 1 << "\n"
     << "lambda_min = " << format_double(spec.lambda_min) << "\n"
     << "randomness_mode = \"" << to_string(spec.mode) << "\"\n\n";

  os << "[tolerances]\npsd = " << format_double(spec.tol.psd)
     << "\nsym = " << format_double(spec.tol.sym) << "\ngen = " << format_double(spec.tol.gen)
     << "\n\n";

  os << "[generator]\nrates = "
     << matrix_literal(CoefficientFunction::constant(spec.generator.rates), "rates") << "\n";

  for (std::size_t i = 0; i < spec.regimes(); ++i) {
    const auto& c = spec.coefficients[i];
    const std::string sec = "regime." + std::to_string(i + 1);
    os << "\n[" << sec << "]\n"
       << "A = " << matrix_literal(c.A, sec + ".A") << "\n"
       << "B = " << matrix_literal(c.B, sec + ".B") << "\n"
       << "C = " << matrix_literal(c.C, sec + ".C") << "\n"
       << "D = " << matrix_literal(c.D, sec + ".D") << "\n"
       << "b = " << vector_literal(c.b, sec + ".b") << "\n"
       << "sigma = " << vector_literal(c.sigma, sec + ".sigma") << "\n"
       << "Q = " << matrix_literal(c.Q, sec + ".Q") << "\n"
       << "R = " << matrix_literal(c.R, sec + ".R") << "\n"
       << "q = " << vector_literal(c.q_target, sec + ".q") << "\n"
       << "r = " << vector_literal(c.r_target, sec + ".r") << "\n";
    if (c.S) os << "S = " << matrix_literal(*c.S, sec + ".S") << "\n";
    const std::string term = "terminal." + std::to_string(i + 1);
    os << "\n[" << term << "]\n"
       << "G = " << matrix_literal(spec.terminal[i].G, term + ".G") << "\n"
       << "g = " << vector_literal(spec.terminal[i].g, term + ".g") << "\n";
  }
  return os.str();
}

void save_spec(const ProblemSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << write_spec(spec);
}

}  // namespace rslq

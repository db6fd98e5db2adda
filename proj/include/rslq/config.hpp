#pragma once

#include "rslq/problem.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace rslq {

/// Reads a problem config. Layout:
///
///   [problem]     n, m, ell, T, x, i0, lambda_min, randomness_mode
///   [generator]   rates = [[...], ...]          (ell x ell, row-major)
///   [tolerances]  psd, sym, gen                  (optional)
///   [regime.<i>]  A B C D Q R S   matrices;  b sigma q r   vectors
///   [terminal.<i>] G g
///
/// Matrix literals are row-major nested arrays whose entries are numbers or
/// expression strings in t and w. Missing coefficients default to zero;
/// R is required. Q, R and G are symmetrized on ingestion.
///
/// Throws ParseError (with line), SchemaError, DimensionError.
ProblemSpec load_spec(const std::filesystem::path& path);
ProblemSpec parse_spec(std::string_view text);

/// Serializes a spec whose coefficients are all symbolic. Constants are
/// written with 17 significant digits; expressions as quoted strings.
std::string write_spec(const ProblemSpec& spec);
void save_spec(const ProblemSpec& spec, const std::filesystem::path& path);

}  // namespace rslq

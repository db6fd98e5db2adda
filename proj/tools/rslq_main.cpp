#include "rslq/rslq.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace rslq;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kParse = 2, kSolver = 3, kVerify = 4 };

#ifndef RSLQ_VERSION
#define RSLQ_VERSION "unknown"
#endif

class PhaseTimer {
 public:
  void start(std::string name) {
    name_ = std::move(name);
    begin_ = std::chrono::steady_clock::now();
  }
  void stop(Manifest& manifest) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin_).count();
    manifest.emplace_back("time_" + name_ + "_s", format_double(s));
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point begin_;
};

struct Loaded {
  ProblemSpec spec;
  int code = kOk;
};

/// Parse and validate on an N-step grid over the config's horizon; on
/// failure prints the reason and sets the exit code. Pipelines (`strict` off)
/// only stop on issues the solvers do not detect themselves.
Loaded load_and_validate(const std::string& config, std::size_t steps, bool strict) {
  Loaded out;
  try {
    out.spec = load_spec(config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    out.code = kParse;
    return out;
  }
  if (!(out.spec.horizon > 0.0)) {
    std::cerr << "fatal: horizon T must be positive\n";
    out.code = kValidation;
    return out;
  }
  const ValidationReport report = validate_spec(out.spec, TimeGrid(out.spec.horizon, steps));
  const bool failed = strict ? !report.valid() : report.blocking_count() > 0;
  if (strict || !report.issues.empty()) (failed ? std::cerr : std::cout) << report.to_string();
  if (failed) out.code = kValidation;
  return out;
}

void report_condition(double value) {
  std::cout << "condition |D R^-1 D'| sup = " << format_double(value) << '\n';
  if (value > 1.0) {
    std::cout << "warning: condition value " << format_double(value)
              << " exceeds 1.0; existence of the stochastic Riccati solution is not guaranteed\n";
  }
}

struct DeterministicRun {
  RiccatiSolution riccati;
  AdjointSolution adjoint;
  FeedbackPolicy policy;
  ValueReport value;
};

DeterministicRun solve_deterministic(const ProblemSpec& spec, const TimeGrid& grid, const std::string& mode,
                                     std::optional<double> corrupt_p) {
  RiccatiSolution riccati = mode == "picard" ? solve_riccati_picard(spec, grid, 1e-10, 50)
                                             : solve_riccati_ode(spec, grid);
  if (corrupt_p) {
    for (Matrix& p : riccati.P) p *= *corrupt_p;
    for (Matrix& d : riccati.drift) d *= *corrupt_p;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      for (std::size_t i = 0; i < spec.regimes(); ++i) {
        riccati.Gamma[riccati.index(k, i)] =
            feedback_gain(spec.evaluate(i, grid.time(k)), riccati.P_at(k, i), riccati.Lambda_at(k, i));
      }
    }
  }
  AdjointSolution adjoint = solve_adjoint_ode(spec, riccati, grid);
  FeedbackPolicy policy = build_policy(riccati, adjoint, spec);
  const OccupationTable occ = occupation_probabilities(spec.generator, spec.initial_regime, grid);
  ValueReport value = optimal_value(spec, riccati, adjoint, occ);
  return {std::move(riccati), std::move(adjoint), std::move(policy), std::move(value)};
}

void print_value(const ValueReport& value) {
  std::cout << "V = " << format_double(value.V);
  if (value.standard_error) std::cout << " (standard error " << format_double(*value.standard_error) << ")";
  std::cout << '\n';
}

struct SolveOptions {
  std::string config;
  std::size_t grid = 200;
  std::string mode = "ode";
  std::string out = ".";
  std::optional<std::size_t> reference_grid;
  std::size_t paths = 10000;
  std::uint64_t seed = 1;
  int degree = 3;
};

int cmd_solve(const SolveOptions& o) {
  Manifest manifest{{"command", "solve"}, {"config", o.config}, {"grid_steps", std::to_string(o.grid)},
                    {"mode", o.mode}, {"output_dir", o.out}, {"tool_version", RSLQ_VERSION}};
  PhaseTimer timer;
  Loaded loaded = load_and_validate(o.config, o.grid, false);
  if (loaded.code != kOk) return loaded.code;
  ProblemSpec spec = std::move(loaded.spec);
  try {
    const TimeGrid grid(spec.horizon, o.grid);
    spec = reduce_cross_term(spec, grid);
    fs::create_directories(o.out);
    const fs::path out(o.out);
    std::vector<std::string> files;

    if (o.mode == "ode" || o.mode == "picard") {
      if (!spec.deterministic()) throw ModeError("mode " + o.mode + " needs deterministic coefficients; use --mode lsmc");
      timer.start("solve");
      const DeterministicRun run = solve_deterministic(spec, grid, o.mode, std::nullopt);
      timer.stop(manifest);
      report_condition(check_condition_lsigma(spec, grid));
      manifest.emplace_back("riccati_iterations", std::to_string(run.riccati.diagnostics.iterations));
      print_value(run.value);
      manifest.emplace_back("value", format_double(run.value.V));
      if (o.reference_grid) {
        const TimeGrid fine(spec.horizon, *o.reference_grid);
        if (!fine.refines(grid)) throw GridMismatch("--reference-grid must be a multiple of --grid");
        timer.start("reference");
        const RiccatiSolution ref = solve_riccati_ode(spec, fine);
        timer.stop(manifest);
        const std::size_t ratio = fine.steps() / grid.steps();
        double gap = 0.0;
        for (std::size_t k = 0; k < grid.nodes(); ++k) {
          for (std::size_t i = 0; i < spec.regimes(); ++i) {
            gap = std::max(gap, frobenius_norm(run.riccati.P_at(k, i) - ref.P_at(k * ratio, i)));
          }
        }
        std::cout << "reference grid N=" << fine.steps() << ": sup |P - P_ref| = " << format_double(gap) << '\n';
        manifest.emplace_back("reference_grid_steps", std::to_string(fine.steps()));
        manifest.emplace_back("reference_sup_distance", format_double(gap));
      }
      write_riccati_csv(run.riccati, out / "riccati.csv");
      write_adjoint_csv(run.adjoint, out / "adjoint.csv");
      write_policy_csv(run.policy, out / "policy.csv");
      files = {"riccati.csv", "adjoint.csv", "policy.csv"};
    } else if (o.mode == "lsmc") {
      if (spec.deterministic()) throw ModeError("mode lsmc needs randomness_mode = brownian_markovian");
      manifest.emplace_back("paths", std::to_string(o.paths));
      manifest.emplace_back("seed", std::to_string(o.seed));
      manifest.emplace_back("degree", std::to_string(o.degree));
      const BrownianGrid bg = simulate_brownian_grid(grid, o.paths, o.seed);
      const RegressionBasis basis{o.degree};
      timer.start("solve");
      const StochasticFieldSolution sre = solve_sre_lsmc(spec, bg, basis, 1e-3, 50);
      const StochasticFieldSolution adj = solve_adjoint_lsmc(spec, sre, bg, basis);
      timer.stop(manifest);
      report_condition(check_condition_lsigma_paths(spec, bg));
      manifest.emplace_back("riccati_iterations", std::to_string(sre.iterations));
      manifest.emplace_back("psd_clip_fraction", format_double(sre.clip_fraction));
      const ValueReport value = optimal_value_mc(spec, sre, adj, bg, 1, o.seed);
      print_value(value);
      manifest.emplace_back("value", format_double(value.V));

      // CSV views of the fields along W = 0.
      const std::size_t ell = spec.regimes();
      RiccatiSolution r(grid, ell);
      AdjointSolution a(grid, ell);
      FeedbackPolicy policy(grid, ell);
      const StochasticFeedbackPolicy sp(spec, sre, adj);
      r.diagnostics.inner_min_eigenvalue.resize(static_cast<Eigen::Index>(grid.nodes()), static_cast<Eigen::Index>(ell));
      for (std::size_t k = 0; k < grid.nodes(); ++k) {
        for (std::size_t i = 0; i < ell; ++i) {
          const RegimeCoefficients c = spec.evaluate(i, grid.time(k), 0.0);
          const Matrix P = sre.value(k, i, 0.0);
          auto [gamma, phi] = sp.gain_and_offset(k, i, 0.0);
          r.P.push_back(P);
          r.Lambda.push_back(sre.martingale(k, i, 0.0));
          r.Gamma.push_back(gamma);
          r.diagnostics.inner_min_eigenvalue(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
              min_eigenvalue(symmetrized(c.R + c.D.transpose() * P * c.D));
          a.K.push_back(adj.value(k, i, 0.0).col(0));
          a.L.push_back(adj.martingale(k, i, 0.0).col(0));
          policy.Gamma.push_back(std::move(gamma));
          policy.phi.push_back(std::move(phi));
        }
      }
      write_riccati_csv(r, out / "riccati.csv");
      write_adjoint_csv(a, out / "adjoint.csv");
      write_policy_csv(policy, out / "policy.csv");
      save_field_tables(sre, out / "riccati_tables.bin");
      save_field_tables(adj, out / "adjoint_tables.bin");
      files = {"riccati.csv", "adjoint.csv", "policy.csv", "riccati_tables.bin", "adjoint_tables.bin"};
    } else {
      std::cerr << "error: unknown mode '" << o.mode << "' (expected ode, picard or lsmc)\n";
      return kParse;
    }
    std::string listed;
    for (const auto& f : files) listed += (listed.empty() ? "" : ", ") + f;
    manifest.emplace_back("outputs", listed);
    write_manifest(manifest, out / "manifest.txt");
    std::cout << "wrote " << listed << ", manifest.txt to " << o.out << '\n';
    return kOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  }
}

struct VerifyOptions {
  std::string config;
  std::size_t grid = 200;
  std::size_t paths = 100000;
  std::uint64_t seed = 1;
  std::string out = ".";
  std::optional<double> corrupt_p;
};

int cmd_verify(const VerifyOptions& o) {
  Manifest manifest{{"command", "verify"}, {"config", o.config}, {"grid_steps", std::to_string(o.grid)},
                    {"paths", std::to_string(o.paths)}, {"seed", std::to_string(o.seed)},
                    {"output_dir", o.out}, {"tool_version", RSLQ_VERSION}};
  PhaseTimer timer;
  Loaded loaded = load_and_validate(o.config, o.grid, false);
  if (loaded.code != kOk) return loaded.code;
  ProblemSpec spec = std::move(loaded.spec);

  std::vector<VerifyRow> rows;
  try {
    if (!spec.deterministic()) throw ModeError("verify needs deterministic coefficients");
    const TimeGrid grid(spec.horizon, o.grid);
    spec = reduce_cross_term(spec, grid);
    timer.start("solve");
    const DeterministicRun run = solve_deterministic(spec, grid, "ode", o.corrupt_p);
    timer.stop(manifest);

    // Each check also runs on the refined grid with its own policy and shared
    // Brownian paths. A first-order bias at N is about twice the change, so
    // three times the change bounds it with room for higher-order terms.
    const TimeGrid fine(spec.horizon, 2 * o.grid);
    const DeterministicRun fine_run = solve_deterministic(spec, fine, "ode", o.corrupt_p);
    const SimulationOptions coarse_opts{o.seed, 2, false};
    const SimulationOptions fine_opts{o.seed, 1, false};
    const Vector delta = Vector::Constant(spec.m, 0.5);

    struct Candidate {
      std::string name;
      ControlSource at_n;
      ControlSource at_2n;
    };
    const ControlSource optimal = policy_control(run.policy);
    const ControlSource fine_optimal = policy_control(fine_run.policy);
    const std::vector<Candidate> candidates = {
        {"optimal", optimal, fine_optimal},
        {"shift_plus", shifted_control(optimal, delta), shifted_control(fine_optimal, delta)},
        {"shift_minus", shifted_control(optimal, -delta), shifted_control(fine_optimal, -delta)},
    };

    timer.start("simulate");
    std::vector<DecompositionReport> reports;
    for (const Candidate& cand : candidates) {
      const DecompositionReport at_n =
          cost_decomposition(spec, run.riccati, run.adjoint, run.policy, cand.at_n, grid, o.paths, coarse_opts);
      const DecompositionReport at_2n = cost_decomposition(spec, fine_run.riccati, fine_run.adjoint,
                                                           fine_run.policy, cand.at_2n, fine, o.paths, fine_opts);
      const double allowance = 3.0 * std::abs(at_n.discrepancy - at_2n.discrepancy);
      const double threshold = 3.0 * at_n.pooled_std_error + allowance;
      rows.push_back({"decomposition_" + cand.name, std::abs(at_n.discrepancy), threshold,
                      std::abs(at_n.discrepancy) <= threshold});
      if (cand.name == "optimal") {
        const double gap = std::abs(at_n.J - at_n.V);
        const double j_allow = 3.0 * std::abs((at_n.J - at_n.V) - (at_2n.J - at_2n.V));
        const double thr = 3.0 * at_n.J_std_error + j_allow;
        rows.push_back({"value_vs_simulated_cost", gap, thr, gap <= thr});
      }
      reports.push_back(at_n);
    }
    for (std::size_t c = 1; c < reports.size(); ++c) {
      const double margin = reports[c].J - reports[0].J;
      const double thr = -3.0 * std::hypot(reports[c].J_std_error, reports[0].J_std_error);
      rows.push_back({"optimality_" + candidates[c].name, margin, thr, margin >= thr});
    }
    timer.stop(manifest);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  }

  fs::create_directories(o.out);
  const fs::path out(o.out);
  write_verify_csv(rows, out / "verify.csv");
  manifest.emplace_back("outputs", "verify.csv");
  write_manifest(manifest, out / "manifest.txt");
  bool all = true;
  for (const VerifyRow& row : rows) {
    std::cout << (row.passed ? "pass  " : "FAIL  ") << row.check << "  statistic=" << format_double(row.statistic)
              << "  threshold=" << format_double(row.threshold) << '\n';
    all = all && row.passed;
  }
  return all ? kOk : kVerify;
}

struct ChainOptions {
  std::string config;
  std::size_t paths = 1000;
  std::uint64_t seed = 1;
  std::string out = ".";
};

int cmd_chain(const ChainOptions& o) {
  const Loaded loaded = load_and_validate(o.config, 1, false);
  if (loaded.code != kOk) return loaded.code;
  const ProblemSpec& spec = loaded.spec;
  std::vector<RegimePath> paths;
  paths.reserve(o.paths);
  for (std::size_t p = 0; p < o.paths; ++p) {
    Engine engine = make_engine(o.seed, StreamKind::ChainSample, p);
    paths.push_back(sample_regime_path(spec.generator, spec.initial_regime, spec.horizon, engine));
  }
  fs::create_directories(o.out);
  const fs::path out(o.out);
  write_chain_paths_csv(paths, out / "chain_paths.csv");
  write_manifest({{"command", "chain"}, {"config", o.config}, {"paths", std::to_string(o.paths)},
                  {"seed", std::to_string(o.seed)}, {"output_dir", o.out}, {"tool_version", RSLQ_VERSION},
                  {"outputs", "chain_paths.csv"}},
                 out / "manifest.txt");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regime-switching stochastic LQ solver"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RSLQ_VERSION);

  std::string validate_config;
  std::size_t validate_grid = 100;
  auto* validate = app.add_subcommand("validate", "Check a problem config");
  validate->add_option("config", validate_config, "Problem config")->required();
  validate->add_option("--grid", validate_grid, "Grid steps used for the pointwise checks");

  SolveOptions solve_opts;
  auto* solve = app.add_subcommand("solve", "Solve the Riccati and adjoint equations and tabulate the policy");
  solve->add_option("config", solve_opts.config, "Problem config")->required();
  solve->add_option("--grid", solve_opts.grid, "Number of time steps")->check(CLI::PositiveNumber);
  solve->add_option("--mode", solve_opts.mode, "ode, picard or lsmc")
      ->check(CLI::IsMember({"ode", "picard", "lsmc"}));
  solve->add_option("--out", solve_opts.out, "Output directory");
  solve->add_option("--reference-grid", solve_opts.reference_grid, "Also solve on this finer grid and report the gap");
  solve->add_option("--paths", solve_opts.paths, "LSMC paths")->check(CLI::PositiveNumber);
  solve->add_option("--seed", solve_opts.seed, "LSMC seed");
  solve->add_option("--degree", solve_opts.degree, "LSMC polynomial degree")->check(CLI::NonNegativeNumber);

  VerifyOptions verify_opts;
  auto* verify = app.add_subcommand("verify", "Check the cost decomposition and optimality by simulation");
  verify->add_option("config", verify_opts.config, "Problem config")->required();
  verify->add_option("--grid", verify_opts.grid, "Number of time steps")->check(CLI::PositiveNumber);
  verify->add_option("--paths", verify_opts.paths, "Monte Carlo paths")->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_opts.seed, "Random seed");
  verify->add_option("--out", verify_opts.out, "Output directory");
  verify->add_option("--corrupt-p", verify_opts.corrupt_p)->group("");

  ChainOptions chain_opts;
  auto* chain = app.add_subcommand("chain", "Sample regime paths");
  chain->add_option("config", chain_opts.config, "Problem config")->required();
  chain->add_option("--paths", chain_opts.paths, "Number of paths")->check(CLI::PositiveNumber);
  chain->add_option("--seed", chain_opts.seed, "Random seed");
  chain->add_option("--out", chain_opts.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kParse;
  }

  try {
    if (*validate) return load_and_validate(validate_config, validate_grid, true).code;
    if (*solve) return cmd_solve(solve_opts);
    if (*verify) return cmd_verify(verify_opts);
    if (*chain) return cmd_chain(chain_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolver;
  }
  return kOk;
}

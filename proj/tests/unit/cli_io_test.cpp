#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rslq;
using namespace rslq::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string output;
};

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rslq_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string(RSLQ_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(log)};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Cli, ValidateExitCodes) {
  const fs::path dir = scratch_dir("validate");
  EXPECT_EQ(run_cli("validate " + config_path("tanh.toml"), dir).code, 0);
  const CliResult bad = run_cli("validate " + config_path("bad_generator.toml"), dir);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("row 2"), std::string::npos);
  EXPECT_EQ(run_cli("validate " + (dir / "missing.toml").string(), dir).code, 2);
}

TEST(Cli, SolveWritesTablesAndManifest) {
  const fs::path dir = scratch_dir("solve");
  const CliResult run = run_cli("solve " + config_path("tanh.toml") + " --grid 200 --out " + dir.string(), dir);
  ASSERT_EQ(run.code, 0) << run.output;
  for (const char* name : {"riccati.csv", "adjoint.csv", "policy.csv", "manifest.txt"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  const auto rows = read_csv(dir / "riccati.csv");
  ASSERT_GT(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], "t");
  EXPECT_NEAR(std::stod(rows[1][2]), std::tanh(1.0), 1e-6);
  EXPECT_NE(slurp(dir / "manifest.txt").find("command: solve"), std::string::npos);
}

TEST(Cli, PicardMatchesOde) {
  const fs::path ode = scratch_dir("ode");
  const fs::path picard = scratch_dir("picard");
  ASSERT_EQ(run_cli("solve " + config_path("two_regime.toml") + " --grid 100 --out " + ode.string(), ode).code, 0);
  ASSERT_EQ(run_cli("solve " + config_path("two_regime.toml") + " --grid 100 --mode picard --out " + picard.string(),
                    picard)
                .code,
            0);
  const auto a = read_csv(ode / "riccati.csv");
  const auto b = read_csv(picard / "riccati.csv");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t r = 1; r < a.size(); ++r) {
    for (std::size_t c = 2; c < 6; ++c) EXPECT_NEAR(std::stod(a[r][c]), std::stod(b[r][c]), 1e-8);
  }
}

TEST(Cli, SingularRIsASolverFailure) {
  const fs::path dir = scratch_dir("singular");
  const CliResult run = run_cli("solve " + config_path("singular_r.toml") + " --out " + dir.string(), dir);
  EXPECT_EQ(run.code, 3);
  EXPECT_NE(run.output.find("SingularInnerMatrix"), std::string::npos) << run.output;
}

TEST(Cli, ConditionWarningAboveOne) {
  const fs::path dir = scratch_dir("condition");
  ProblemSpec spec = tanh_spec();
  spec.coefficients[0].D = constant(scalar(1.5));
  save_spec(spec, dir / "loud.toml");
  const CliResult run = run_cli("solve " + (dir / "loud.toml").string() + " --grid 20 --out " + dir.string(), dir);
  EXPECT_EQ(run.code, 0);
  EXPECT_NE(run.output.find("2.25"), std::string::npos) << run.output;
  EXPECT_NE(run.output.find("warning"), std::string::npos) << run.output;
}

TEST(Cli, VerifyPassesAndIsDeterministic) {
  const fs::path a = scratch_dir("verify_a");
  const fs::path b = scratch_dir("verify_b");
  const std::string args = "verify " + config_path("tanh_noise.toml") + " --grid 40 --paths 4000 --seed 11 --out ";
  const CliResult first = run_cli(args + a.string(), a);
  EXPECT_EQ(first.code, 0) << first.output;
  ASSERT_EQ(run_cli(args + b.string(), b).code, first.code);
  EXPECT_EQ(slurp(a / "verify.csv"), slurp(b / "verify.csv"));
}

TEST(Cli, VerifyDetectsCorruptedRiccati) {
  const fs::path dir = scratch_dir("verify_corrupt");
  const CliResult run = run_cli("verify " + config_path("tanh_noise.toml") +
                                    " --grid 40 --paths 4000 --seed 11 --corrupt-p 1.1 --out " + dir.string(),
                                dir);
  EXPECT_EQ(run.code, 4) << run.output;
  EXPECT_NE(slurp(dir / "verify.csv").find("decomposition_optimal"), std::string::npos);
}

TEST(Cli, ChainWritesPaths) {
  const fs::path dir = scratch_dir("chain");
  ASSERT_EQ(run_cli("chain " + config_path("two_regime.toml") + " --paths 20 --seed 4 --out " + dir.string(), dir).code,
            0);
  const auto rows = read_csv(dir / "chain_paths.csv");
  EXPECT_GT(rows.size(), 20u);
}

TEST(Cli, UnknownFlagIsParseError) {
  const fs::path dir = scratch_dir("flags");
  EXPECT_EQ(run_cli("solve " + config_path("tanh.toml") + " --bogus", dir).code, 2);
}

TEST(Io, CsvUsesSeventeenDigits) {
  const fs::path dir = scratch_dir("io");
  const ProblemSpec spec = sech_spec();
  const TimeGrid grid(1.0, 4);
  const RiccatiSolution ric = solve_riccati_ode(spec, grid);
  const AdjointSolution adj = solve_adjoint_ode(spec, ric, grid);
  write_adjoint_csv(adj, dir / "adjoint.csv");
  const auto rows = read_csv(dir / "adjoint.csv");
  ASSERT_EQ(rows.size(), grid.nodes() + 1);
  EXPECT_EQ(std::stod(rows[1][2]), adj.K_at(0, 0)(0));
  write_verify_csv({{"a", 1.5, 2.0, true}, {"b", 3.0, 2.0, false}}, dir / "verify.csv");
  EXPECT_EQ(slurp(dir / "verify.csv"), "check,statistic,threshold,passed\na,1.5,2,pass\nb,3,2,fail\n");
}

#include "rslq/io.hpp"

#include "rslq/errors.hpp"

#include <fstream>

namespace rslq {

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw SchemaError("cannot open " + path.string() + " for writing");
  return os;
}

void finish(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw SchemaError("failed writing " + path.string());
}

void matrix_header(std::ostream& os, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) os << ',' << name << '_' << r + 1 << '_' << c + 1;
  }
}

void vector_header(std::ostream& os, const std::string& name, Eigen::Index size) {
  for (Eigen::Index r = 0; r < size; ++r) os << ',' << name << '_' << r + 1;
}

void matrix_cells(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << format_double(m(r, c));
  }
}

void vector_cells(std::ostream& os, const Vector& v) {
  for (Eigen::Index r = 0; r < v.size(); ++r) os << ',' << format_double(v(r));
}

}  // namespace

void write_riccati_csv(const RiccatiSolution& sol, const std::filesystem::path& path) {
  auto os = open_csv(path);
  const Matrix& p0 = sol.P.front();
  const Matrix& g0 = sol.Gamma.front();
  os << "t,regime";
  matrix_header(os, "P", p0.rows(), p0.cols());
  matrix_header(os, "Gamma", g0.rows(), g0.cols());
  os << ",inner_min_eig\n";
  for (std::size_t k = 0; k < sol.grid.nodes(); ++k) {
    for (std::size_t i = 0; i < sol.regimes; ++i) {
      os << format_double(sol.grid.time(k)) << ',' << i + 1;
      matrix_cells(os, sol.P_at(k, i));
      matrix_cells(os, sol.Gamma_at(k, i));
      const Matrix& eig = sol.diagnostics.inner_min_eigenvalue;
      const bool have = eig.rows() > static_cast<Eigen::Index>(k);
      os << ',' << (have ? format_double(eig(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))) : "nan")
         << '\n';
    }
  }
  finish(os, path);
}

void write_adjoint_csv(const AdjointSolution& sol, const std::filesystem::path& path) {
  auto os = open_csv(path);
  const Eigen::Index n = sol.K.front().size();
  os << "t,regime";
  vector_header(os, "K", n);
  vector_header(os, "L", n);
  os << '\n';
  for (std::size_t k = 0; k < sol.grid.nodes(); ++k) {
    for (std::size_t i = 0; i < sol.regimes; ++i) {
      os << format_double(sol.grid.time(k)) << ',' << i + 1;
      vector_cells(os, sol.K_at(k, i));
      vector_cells(os, sol.L_at(k, i));
      os << '\n';
    }
  }
  finish(os, path);
}

void write_policy_csv(const FeedbackPolicy& policy, const std::filesystem::path& path) {
  auto os = open_csv(path);
  const Matrix& g0 = policy.Gamma.front();
  os << "t,regime";
  matrix_header(os, "Gamma", g0.rows(), g0.cols());
  vector_header(os, "phi", g0.rows());
  os << '\n';
  for (std::size_t k = 0; k < policy.grid.nodes(); ++k) {
    for (std::size_t i = 0; i < policy.regimes; ++i) {
      os << format_double(policy.grid.time(k)) << ',' << i + 1;
      matrix_cells(os, policy.Gamma_at(k, i));
      vector_cells(os, policy.phi_at(k, i));
      os << '\n';
    }
  }
  finish(os, path);
}

void write_batch_summary_csv(const SimulationBatch& batch, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "paths,mean,std_error,ci99_half_width,blowups\n"
     << batch.paths << ',' << format_double(batch.mean) << ',' << format_double(batch.std_error) << ','
     << format_double(batch.ci99_half_width) << ',' << batch.blowups << '\n';
  finish(os, path);
}

void write_batch_paths_csv(const SimulationBatch& batch, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "path,cost,blown\n";
  for (std::size_t p = 0; p < batch.costs.size(); ++p) {
    const bool blown = std::isnan(batch.costs[p]);
    os << p << ',' << (blown ? "nan" : format_double(batch.costs[p])) << ',' << (blown ? 1 : 0) << '\n';
  }
  finish(os, path);
}

void write_chain_paths_csv(const std::vector<RegimePath>& paths, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "path,segment,start_time,regime\n";
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const RegimePath& rp = paths[p];
    for (std::size_t s = 0; s < rp.states.size(); ++s) {
      const double start = s == 0 ? 0.0 : rp.jump_times[s - 1];
      os << p << ',' << s << ',' << format_double(start) << ',' << rp.states[s] + 1 << '\n';
    }
  }
  finish(os, path);
}

void write_verify_csv(const std::vector<VerifyRow>& rows, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "check,statistic,threshold,passed\n";
  for (const VerifyRow& row : rows) {
    os << row.check << ',' << format_double(row.statistic) << ',' << format_double(row.threshold) << ','
       << (row.passed ? "pass" : "fail") << '\n';
  }
  finish(os, path);
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw SchemaError("cannot open " + path.string() + " for writing");
  for (const auto& [key, value] : manifest) os << key << ": " << value << '\n';
  os.flush();
  if (!os) throw SchemaError("failed writing " + path.string());
}

}  // namespace rslq

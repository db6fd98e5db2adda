#pragma once

#include "rslq/adjoint.hpp"
#include "rslq/chain.hpp"
#include "rslq/control.hpp"
#include "rslq/riccati.hpp"
#include "rslq/simulate.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace rslq {

// CSV writers. Floats use 17 significant digits, matrices are flattened
// row-major, and regimes are numbered from 1.

void write_riccati_csv(const RiccatiSolution& sol, const std::filesystem::path& path);
void write_adjoint_csv(const AdjointSolution& sol, const std::filesystem::path& path);
void write_policy_csv(const FeedbackPolicy& policy, const std::filesystem::path& path);
void write_batch_summary_csv(const SimulationBatch& batch, const std::filesystem::path& path);
void write_batch_paths_csv(const SimulationBatch& batch, const std::filesystem::path& path);
void write_chain_paths_csv(const std::vector<RegimePath>& paths, const std::filesystem::path& path);

struct VerifyRow {
  std::string check;
  double statistic = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

void write_verify_csv(const std::vector<VerifyRow>& rows, const std::filesystem::path& path);

/// `key: value` lines.
using Manifest = std::vector<std::pair<std::string, std::string>>;
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace rslq

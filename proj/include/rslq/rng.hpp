#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace rslq {

using Engine = std::mt19937_64;

/// Independent stream families. Each sampling site draws from its own family
/// so that, e.g., regime paths do not shift when Brownian draws change.
enum class StreamKind : std::uint64_t {
  Brownian = 1,
  Regime = 2,
  ChainSample = 3,
  ValueChain = 4,
};

/// Counter-based stream derivation: the engine for (seed, kind, index) is a
/// pure function of its arguments, so path k is reproducible regardless of
/// how paths are distributed over threads.
std::uint64_t derive_seed(std::uint64_t seed, StreamKind kind, std::uint64_t index);

inline Engine make_engine(std::uint64_t seed, StreamKind kind, std::uint64_t index) {
  return Engine(derive_seed(seed, kind, index));
}

/// Worker count: hardware concurrency capped by RLQ_THREADS when set.
std::size_t worker_count();

/// Runs body(begin, end) over contiguous chunks of [0, count).
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace rslq

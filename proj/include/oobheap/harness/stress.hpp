#pragma once

// Randomized allocator workloads with built-in integrity checking. Every
// block carries a payload stamp verified at free time; structure audits run
// at quiescent points; any diagnostic is a failure (the workloads are clean
// by construction).
//
//   churn    per-thread slot arrays, random alloc/free, steady live set
//   larson   generations of worker threads that exit and leave blocks for
//            their successors, exercising orphaning and adoption
//   mstress  threads trade blocks through a shared mailbox so frees land on
//            non-owning threads, exercising the remote-free protocol

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "oobheap/harness/replay.hpp"

namespace oobheap::harness {

enum class stress_kind : std::uint8_t { churn, larson, mstress };

struct stress_options {
  stress_kind kind = stress_kind::churn;
  std::uint32_t threads = 1;
  std::uint64_t iters = 100000;  // total operations, split across threads
  std::size_t min_size = 1;
  std::size_t max_size = 4096;
  std::uint64_t seed = 42;
  std::uint32_t generations = 4;  // larson only
  std::uint32_t slots = 1024;     // per-thread working-set width
  std::uint32_t handoff = 64;     // larson: blocks each worker leaves behind
};

struct stress_result {
  bool ok = false;
  std::string error;
  stats_report stats;
  // larson: committed heap bytes at the end of each generation (committed
  // space never shrinks, so this is the generation's peak)
  std::vector<std::size_t> generation_peaks;
};

stress_result run_stress(const stress_options& opts);

}  // namespace oobheap::harness

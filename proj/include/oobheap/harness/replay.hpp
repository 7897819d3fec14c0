#pragma once

// Lockstep trace execution. Every event runs on its logical thread's real
// thread, one at a time in file order: a single sequencing gate hands the
// turn from event to event, so multi-thread traces replay deterministically
// and deferred-detection scenarios are reproducible. After the last event
// each thread frees its leftover blocks and drains its bins, then the
// coordinator adopts orphans, audits the instance and settles the violation
// ledger: diagnostics observed must equal hostile events executed, exactly.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "oobheap/config.hpp"
#include "oobheap/harness/trace.hpp"

namespace oobheap::harness {

struct stats_report {
  std::uint64_t ops = 0;
  std::uint64_t allocs = 0;
  std::uint64_t frees = 0;
  std::uint64_t reallocs = 0;
  std::uint64_t zero_allocs = 0;
  std::uint32_t threads = 0;
  std::size_t bytes_live_peak = 0;
  std::size_t heap_committed = 0;
  std::size_t meta_bytes = 0;
  std::uint64_t fixed_bins = 0;
  std::uint64_t variable_bins = 0;
  std::size_t external_live = 0;
  std::size_t external_cached = 0;
  std::size_t external_cached_bytes = 0;
  std::uint64_t remote_marks = 0;
  std::uint64_t drained_frees = 0;
  std::uint64_t orphan_adoptions = 0;
  std::uint64_t double_frees = 0;
  std::uint64_t invalid_frees = 0;
  std::uint64_t deferred_violations = 0;
  std::uint64_t expected_violations = 0;
  std::uint64_t wall_ms = 0;

  // flat key=value lines; wall time is left out when a diffable block is
  // wanted (same seed, same bytes)
  std::string to_text(bool include_wall) const;
};

struct replay_options {
  violation_policy policy = violation_policy::report;
  std::uint64_t fill_seed = 0x0b5e55edull;  // seeds the payload stamps
};

struct replay_result {
  bool ok = false;
  std::string error;             // empty when ok
  std::uint32_t error_line = 0;  // trace line of the failing event, 0 when none
  std::size_t error_event = 0;   // index into the event list
  stats_report stats;
};

replay_result replay_events(const std::vector<trace_event>& events,
                            const replay_options& opts = {});
replay_result replay_text(std::string_view text, const replay_options& opts = {});

// the reproducer for a failed replay: events[0..error_event] in grammar form
std::string failing_prefix(const std::vector<trace_event>& events, std::size_t error_event);

}  // namespace oobheap::harness

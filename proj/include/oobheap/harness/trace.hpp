#pragma once

// Line-oriented allocation trace grammar shared by the replayer, the trace
// generator and the CLI:
//
//   t <tid>                switch the current logical thread
//   a <id> <size>          allocate `size` bytes under block id
//   f <id>                 free the block id
//   r <id> <size>          reallocate the block id to `size` bytes
//   z <id> <count> <size>  zero-allocate count*size bytes under block id
//   # ...                  comment
//
// Decimal integers, single spaces, one event per line. Blank lines and
// comments are skipped; anything else is rejected with its line number.
// Duplicate frees of one id are legal trace text (that is how double-free
// scenarios are written down); reallocating or re-allocating a live id is a
// replay-time error.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace oobheap::harness {

enum class trace_op : std::uint8_t { select_thread, alloc, free_block, realloc_block, zero_alloc };

struct trace_event {
  trace_op op;
  std::uint32_t thread = 0;  // select_thread payload
  std::uint64_t id = 0;
  std::uint64_t size = 0;
  std::uint64_t count = 0;  // zero_alloc payload
  std::uint32_t line = 0;   // 1-based source line

  friend bool operator==(const trace_event&, const trace_event&) = default;
};

struct trace_parse_result {
  bool ok = true;
  std::vector<trace_event> events;
  std::uint32_t error_line = 0;
  std::string error;
};

trace_parse_result parse_trace(std::string_view text);

// One event back in grammar form, without the trailing newline.
std::string format_event(const trace_event& ev);

// Deterministic pseudo-random clean trace: ids never repeat, frees may cross
// logical threads, reallocs stay on the allocating thread. `events` counts
// emitted lines including thread switches. Sizes are log-uniform in
// [min_size, max_size].
std::string generate_trace(std::uint64_t seed, std::uint32_t events, std::uint32_t threads,
                           std::size_t min_size, std::size_t max_size);

// log-uniform draw in [min_size, max_size], integer arithmetic only; shared
// by the generator and the stress workloads
std::size_t random_size(std::mt19937_64& rng, std::size_t min_size, std::size_t max_size);

}  // namespace oobheap::harness

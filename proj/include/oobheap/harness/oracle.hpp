#pragma once

// Reference shadow of allocator liveness used for differential checking: a
// sorted interval set plus per-id bookkeeping, brute force on purpose. Its
// only inputs are trace events and observed results (addresses, footprints,
// routes); it shares nothing with the allocator's internals except the pure
// size-class routing function both sides must agree on.
//
// Also home to the payload stamp: the first 8 bytes of a block hold a seeded
// hash of (id, generation), the rest repeats a byte derived from it. The
// header catches stale reuse, the body catches cross-block bleed.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "oobheap/config.hpp"

namespace oobheap::harness {

struct shadow_block {
  std::uint64_t id;
  std::uintptr_t lo, hi;  // [lo, hi): the block's actual reserved footprint
  std::size_t requested;
  route_kind route;
  std::uint32_t owner;       // logical thread whose bins hold the block
  std::uint64_t generation;  // bumped on every alloc/realloc of this id
};

class shadow_oracle {
 public:
  // Admits a fresh allocation after checking pointer alignment, route
  // agreement with classify, footprint sufficiency and disjointness from
  // every live interval. False leaves the reason in last_error().
  bool admit(std::uint64_t id, std::size_t requested, const void* p, std::size_t block_bytes,
             route_kind observed_route, std::uint32_t owner, std::uint64_t generation);

  // Removes a live id; nullopt when it is not live.
  std::optional<shadow_block> retire(std::uint64_t id);

  const shadow_block* find(std::uint64_t id) const;
  bool live(std::uint64_t id) const { return by_id_.contains(id); }

  // live block whose interval contains p, if any
  const shadow_block* covering(const void* p) const;

  std::size_t live_count() const { return by_id_.size(); }
  std::size_t live_bytes() const { return live_bytes_; }
  std::vector<std::uint64_t> ids_owned_by(std::uint32_t owner) const;

  const std::string& last_error() const { return err_; }

 private:
  bool fail(std::string msg);

  std::map<std::uintptr_t, shadow_block> by_addr_;
  std::unordered_map<std::uint64_t, std::uintptr_t> by_id_;
  std::size_t live_bytes_ = 0;
  std::string err_;
};

// payload stamps
std::uint64_t fill_seed(std::uint64_t trace_seed, std::uint64_t id, std::uint64_t generation);
void write_fill(void* p, std::size_t bytes, std::uint64_t seed);
// byte offset of the first mismatch, or SIZE_MAX when intact
std::size_t check_fill(const void* p, std::size_t bytes, std::uint64_t seed);
bool is_zero(const void* p, std::size_t bytes);

}  // namespace oobheap::harness

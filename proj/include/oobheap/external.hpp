#pragma once

// Blocks at or above the mapper threshold: one table entry per mapping, the
// table itself in metadata pages (chunked, entries reused before growth).
// Freed mappings are parked in a small size-ordered cache; eviction is FIFO
// and bounded by entry and byte caps. A cached mapping serves a new request
// only when its size is below twice the request, otherwise the request maps
// fresh pages. The table is the authority for free validation: an unknown
// base is an invalid free, a cached base is a double free.

#include <cstddef>
#include <cstdint>
#include <mutex>

#include "oobheap/backing.hpp"
#include "oobheap/bin.hpp"

namespace oobheap {

class external_table {
 public:
  static constexpr std::size_t kCacheMaxEntries = 16;
  static constexpr std::size_t kCacheMaxBytes = std::size_t{64} << 20;

  void init(backing& bk) noexcept { bk_ = &bk; }
  void teardown() noexcept;  // unmap every live and cached mapping

  struct alloc_result {
    std::byte* ptr;
    bool fresh;  // newly mapped (zero-filled) rather than served from cache
  };
  alloc_result allocate(std::size_t rounded) noexcept;

  free_status release(std::byte* p) noexcept;

  enum class probe_state : std::uint8_t { none, live, cached };
  struct probe_result {
    probe_state state;
    std::size_t size;
  };
  probe_result probe(const std::byte* p) const noexcept;

  enum class realloc_status : std::uint8_t { ok, no_memory, invalid };
  struct realloc_result {
    std::byte* ptr;
    realloc_status status;
  };
  realloc_result reallocate(std::byte* p, std::size_t new_rounded) noexcept;

  struct counters {
    std::size_t live;
    std::size_t cached;
    std::size_t cached_bytes;
  };
  counters snapshot() const noexcept;

  const char* audit() const noexcept;

 private:
  enum : std::uint8_t { kEmpty = 0, kInUse = 1, kCached = 2 };
  static constexpr std::uint32_t kNil = ~std::uint32_t{0};

  struct entry {
    std::byte* base;
    std::size_t size;
    std::uint64_t seq;  // cache insertion order, for FIFO eviction
    std::uint32_t fw, bw;
    std::uint8_t state;
  };

  static constexpr std::size_t kChunkShift = 6;  // entries per chunk
  static constexpr std::size_t kChunkSize = std::size_t{1} << kChunkShift;
  static constexpr std::size_t kMaxChunks = 512;

  entry& at(std::uint32_t i) noexcept { return chunks_[i >> kChunkShift][i & (kChunkSize - 1)]; }
  const entry& at(std::uint32_t i) const noexcept {
    return chunks_[i >> kChunkShift][i & (kChunkSize - 1)];
  }

  std::uint32_t find_locked(const std::byte* p) const noexcept;
  std::uint32_t take_slot_locked() noexcept;  // kNil on exhaustion
  void unlink_cached_locked(std::uint32_t i) noexcept;
  void evict_locked() noexcept;

  mutable std::mutex mu_;
  backing* bk_ = nullptr;
  entry* chunks_[kMaxChunks] = {};
  std::uint32_t high_water_ = 0;
  std::uint32_t free_slots_ = kNil;
  std::uint32_t cache_head_ = kNil;  // non-increasing size order
  std::uint32_t cache_tail_ = kNil;
  std::size_t cache_count_ = 0;
  std::size_t cache_bytes_ = 0;
  std::size_t live_count_ = 0;
  std::uint64_t next_seq_ = 0;
};

}  // namespace oobheap

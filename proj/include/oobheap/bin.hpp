#pragma once

// Bin descriptors. A bin owns a span of 1024 cells carved from the heap; the
// descriptor and every structure reachable from it live in metadata pages.
// Fixed bins keep a 1024-bit free bitmap directly behind the descriptor;
// variable bins point at a separate page holding the packed cell array.
//
// Cross-thread traffic is confined to `owner`, `remote_free_count` and the
// lazily-granted remote bitmap, guarded by the per-bin spin lock. Everything
// else is owner-private.

#include <atomic>
#include <cstddef>
#include <cstdint>

#include "oobheap/config.hpp"

namespace oobheap {

struct thread_state;

enum class bin_type : std::uint8_t { fixed, variable };
enum class free_status : std::uint8_t { freed, double_free, invalid_free };

struct vcell {
  std::atomic<std::uint32_t> w{0};

  std::uint32_t load() const noexcept { return w.load(std::memory_order_relaxed); }
  void store(std::uint32_t v) noexcept { w.store(v, std::memory_order_relaxed); }
};
static_assert(sizeof(vcell) == 4);

inline constexpr std::size_t kFbinBitmapBytes = kCellsPerBin / 8;              // 128
inline constexpr std::size_t kRemoteWords = kCellsPerBin / 64;                 // 16

struct bin_header {
  std::byte* base = nullptr;
  bin_header* next = nullptr;      // owner avail list or instance orphan list
  bin_header* next_all = nullptr;  // instance-wide chain for audits
  std::atomic<thread_state*> owner{nullptr};
  vcell* cells = nullptr;          // variable bins only
  std::atomic<std::atomic<std::uint64_t>*> remote_bits{nullptr};
  std::atomic<std::uint32_t> remote_free_count{0};
  std::uint32_t free_cnt = 0;      // fixed: free cells; variable: secondary free-list head
  std::uint32_t free_head = 0;     // fixed: first bitmap word holding a set bit
  std::uint8_t shift = 0;          // log2(cell size)
  bin_type type = bin_type::fixed;
  bool in_avail = false;
  std::atomic<std::uint8_t> spin{0};

  std::size_t cell_size() const noexcept { return std::size_t{1} << shift; }
  std::size_t span_bytes() const noexcept { return kCellsPerBin << shift; }

  std::uint32_t& secondary() noexcept { return free_cnt; }  // variable-bin alias
  std::uint32_t secondary() const noexcept { return free_cnt; }

  void lock() noexcept {
    while (spin.exchange(1, std::memory_order_acquire)) spin.wait(1, std::memory_order_relaxed);
  }
  void unlock() noexcept {
    spin.store(0, std::memory_order_release);
    spin.notify_one();
  }

  // fixed-bin bitmap, directly behind the descriptor
  template <class Word>
  Word* words() noexcept {
    return reinterpret_cast<Word*>(reinterpret_cast<std::byte*>(this) + sizeof(bin_header));
  }
  template <class Word>
  const Word* words() const noexcept {
    return reinterpret_cast<const Word*>(reinterpret_cast<const std::byte*>(this) + sizeof(bin_header));
  }
};

static_assert(sizeof(bin_header) % 8 == 0);
static_assert(sizeof(bin_header) + kFbinBitmapBytes <= 192,
              "fixed-bin metadata must stay within 192 bytes per span");

}  // namespace oobheap

#pragma once

// Pointer-to-bin resolution. The heap reservation is divided into fixed
// 16 KiB-span indices; a multi-level table maps each index to its bin
// descriptor. One word holds the page-aligned root table address with the
// tree depth in its low four bits, so readers snapshot the whole structure
// with a single atomic load. Index digits are consumed most significant
// first; growing the index range prepends a new root whose slot 0 carries
// the old tree, which keeps every installed index on its existing path.
//
// A zero slot at any level means "reserved but unassigned": not heap-backed.
// Installs happen under the instance registry lock (single writer); lookups
// are lock-free and may run concurrently with installs.

#include <atomic>
#include <cstdint>

#include "oobheap/backing.hpp"
#include "oobheap/bin.hpp"

namespace oobheap {

class reverse_lookup {
 public:
  // allocates the depth-1 root; false on metadata exhaustion
  bool init(backing& bk) noexcept;

  // registers `count` consecutive span indices for one bin (single writer)
  bool install(std::uint64_t first_index, std::uint64_t count, bin_header* bin) noexcept;

  bin_header* find(std::uint64_t index) const noexcept;

  int depth() const noexcept { return static_cast<int>(root_.load(std::memory_order_acquire) & 0xF); }
  std::uint64_t capacity() const noexcept { return capacity_at(depth()); }

  static std::uint32_t fanout_log2() noexcept;

  std::uint64_t capacity_at(int depth) const noexcept {
    const std::uint32_t bits = fanout_log2() * static_cast<std::uint32_t>(depth);
    return bits >= 64 ? ~std::uint64_t{0} : std::uint64_t{1} << bits;
  }

 private:
  using slot = std::atomic<std::uintptr_t>;

  slot* new_table() noexcept;

  backing* bk_ = nullptr;
  std::atomic<std::uintptr_t> root_{0};  // table address | depth
};

}  // namespace oobheap

#pragma once

// Variable-bin operations over the packed cell array (see cell.hpp).
//
// A variable bin's span is always a perfect partition into blocks. Each block
// starts at a 16-byte granule inside its head cell; at most one head per cell,
// never in the last cell (the free-list sentinel). Used heads carry spatial
// neighbour links directly. Free heads carry free-list links instead and lean
// on the adjacent cells for spatial navigation: the neighbouring cell holds
// either the neighbouring head itself or a repurposed reference cell. A free
// head whose block ends the span has no forward reference; reading an unused
// neighbour cell means "end".
//
// The free list is threaded through free heads, anchored at the sentinel,
// ordered by non-increasing size with FIFO insertion among equals. The
// header's free_cnt field doubles as the secondary list head: the list tail
// when the list has at least two members, the sentinel index otherwise.

#include "oobheap/bin.hpp"
#include "oobheap/cell.hpp"

namespace oobheap::vbin {

void init(bin_header& b) noexcept;

// Carves `rounded` bytes (16-byte multiple, greater than the cell size) from
// the smallest adequate free block, low end first. The tail remainder becomes
// a new free block unless its head cell would collide with the next block's
// head cell or land in the sentinel cell; those remainders stay attached to
// the allocation. Returns nullptr when no free block fits.
std::byte* allocate(bin_header& b, std::size_t rounded) noexcept;

// Frees the block starting at byte offset `byte_off` inside cell `ci`,
// coalescing with free spatial neighbours. A free head at that exact position
// is a double free; anything else that is not a matching used head is an
// invalid free.
free_status release(bin_header& b, std::uint32_t ci, std::size_t byte_off) noexcept;

std::size_t freelist_head_size(const bin_header& b) noexcept;  // 0 when list empty
std::size_t block_bytes(const bin_header& b, std::uint32_t head) noexcept;
std::uint32_t spatial_next(const bin_header& b, std::uint32_t head) noexcept;
std::uint32_t spatial_prev(const bin_header& b, std::uint32_t head) noexcept;

// Block pointer for a used or free head cell (drain and diagnostics).
std::byte* cell_block_ptr(const bin_header& b, std::uint32_t ci) noexcept;

// Bytes of the live block starting exactly at p, or 0 if p is not a live
// block start.
std::size_t live_block_bytes(const bin_header& b, const std::byte* p) noexcept;

// Full structural validation; returns nullptr or a description of the first
// violated invariant. Quiescent bins only.
const char* audit(const bin_header& b) noexcept;

}  // namespace oobheap::vbin

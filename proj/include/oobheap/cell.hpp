#pragma once

// Packed 32-bit cell words for variable bins. One word describes one cell of
// the bin's span; the whole array lives in metadata pages, never in the heap.
//
//   [1:0]   tag        unused | used head | free head | reference
//   [11:2]  fw_ref     10-bit cell index
//   [21:12] bw_ref     10-bit cell index
//   [31:22] offset     10-bit block offset inside the cell, in 16-byte granules
//
// Used heads keep their spatial neighbours in fw/bw. Free heads repurpose
// fw/bw as size-ordered free-list links; their spatial neighbours are
// recovered from the adjacent cells, which hold either the neighbouring head
// itself or a reference cell. The two low offset bits of a reference select
// the valid direction: 01 forward, 10 backward, 11 both (only the sentinel in
// the last cell, which anchors the free list and is never a head).

#include <cstdint>

namespace oobheap {

enum class cell_tag : std::uint32_t { unused = 0, used_head = 1, free_head = 2, reference = 3 };

inline constexpr std::uint32_t kEndIndex = 1023;   // "no neighbour" / sentinel cell
inline constexpr std::uint32_t kRefForward = 0b01;
inline constexpr std::uint32_t kRefBackward = 0b10;
inline constexpr std::uint32_t kRefBoth = 0b11;

struct cell_fields {
  cell_tag tag;
  std::uint32_t fw;      // interpretation depends on tag
  std::uint32_t bw;
  std::uint32_t offset;  // granules for heads; direction bits for references

  friend bool operator==(const cell_fields&, const cell_fields&) = default;
};

constexpr std::uint32_t pack_cell(const cell_fields& f) {
  return static_cast<std::uint32_t>(f.tag) | (f.fw << 2) | (f.bw << 12) | (f.offset << 22);
}

constexpr cell_fields unpack_cell(std::uint32_t w) {
  return {static_cast<cell_tag>(w & 3u), (w >> 2) & 1023u, (w >> 12) & 1023u, (w >> 22) & 1023u};
}

constexpr std::uint32_t make_used_head(std::uint32_t fw, std::uint32_t bw, std::uint32_t offset) {
  return pack_cell({cell_tag::used_head, fw, bw, offset});
}

constexpr std::uint32_t make_free_head(std::uint32_t fw, std::uint32_t bw, std::uint32_t offset) {
  return pack_cell({cell_tag::free_head, fw, bw, offset});
}

constexpr std::uint32_t make_ref_forward(std::uint32_t target) {
  return pack_cell({cell_tag::reference, target, 0, kRefForward});
}

constexpr std::uint32_t make_ref_backward(std::uint32_t target) {
  return pack_cell({cell_tag::reference, 0, target, kRefBackward});
}

// free-list anchor: fw = head (largest block), bw = tail (smallest)
constexpr std::uint32_t make_sentinel(std::uint32_t head, std::uint32_t tail) {
  return pack_cell({cell_tag::reference, head, tail, kRefBoth});
}

constexpr cell_tag tag_of(std::uint32_t w) { return static_cast<cell_tag>(w & 3u); }
constexpr bool is_sentinel(std::uint32_t w) {
  return tag_of(w) == cell_tag::reference && (unpack_cell(w).offset & kRefBoth) == kRefBoth;
}

}  // namespace oobheap

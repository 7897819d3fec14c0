#pragma once

// Fixed-bin operations: a 1024-bit bitmap where a set bit means "cell free".
// free_head tracks the first word containing a set bit so allocation is a
// find-first-set from there; every word below free_head is fully allocated.
//
// Parameterized over the bitmap word so the logic is exercised at both 16-bit
// and 64-bit widths; production uses the platform's fastest >=16-bit type.

#include <bit>
#include <cstring>
#include <limits>
#include <type_traits>

#include "oobheap/bin.hpp"

namespace oobheap {

using fbin_word = std::uint_fast16_t;

template <class Word>
struct fbin_ops {
  static_assert(std::is_unsigned_v<Word>);
  static constexpr std::uint32_t kBits = std::numeric_limits<Word>::digits;
  static constexpr std::uint32_t kWords = kCellsPerBin / kBits;

  static void init(bin_header& b) noexcept {
    std::memset(b.words<Word>(), 0xFF, kFbinBitmapBytes);
    b.free_cnt = kCellsPerBin;
    b.free_head = 0;
  }

  // nullptr when the bin is full
  static std::byte* allocate(bin_header& b) noexcept {
    if (b.free_cnt == 0) return nullptr;
    Word* w = b.words<Word>();
    const std::uint32_t wi = b.free_head;
    const auto bit = static_cast<std::uint32_t>(std::countr_zero(w[wi]));
    w[wi] &= static_cast<Word>(w[wi] - 1);
    if (--b.free_cnt == 0) {
      b.free_head = kWords;
    } else if (w[wi] == 0) {
      std::uint32_t scan = wi + 1;
      while (w[scan] == 0) ++scan;  // a set bit exists above: free_cnt > 0
      b.free_head = scan;
    }
    const std::uint32_t index = wi * kBits + bit;
    return b.base + (static_cast<std::size_t>(index) << b.shift);
  }

  static free_status release(bin_header& b, const std::byte* p) noexcept {
    const auto off = static_cast<std::size_t>(p - b.base);
    if (off & (b.cell_size() - 1)) return free_status::invalid_free;
    return release_index(b, static_cast<std::uint32_t>(off >> b.shift));
  }

  static free_status release_index(bin_header& b, std::uint32_t index) noexcept {
    Word* w = b.words<Word>();
    const std::uint32_t wi = index / kBits;
    const auto mask = static_cast<Word>(Word{1} << (index % kBits));
    if (w[wi] & mask) return free_status::double_free;
    w[wi] |= mask;
    ++b.free_cnt;
    if (wi < b.free_head) b.free_head = wi;
    return free_status::freed;
  }

  static bool cell_free(const bin_header& b, std::uint32_t index) noexcept {
    const Word* w = b.words<Word>();
    return (w[index / kBits] >> (index % kBits)) & 1;
  }
};

using fbin = fbin_ops<fbin_word>;

}  // namespace oobheap

#include "oobheap/revlookup.hpp"

#include <bit>

namespace oobheap {

namespace {
constexpr std::uintptr_t kDepthMask = 0xF;
}

std::uint32_t reverse_lookup::fanout_log2() noexcept {
  static const std::uint32_t cached =
      static_cast<std::uint32_t>(std::countr_zero(page_size() / sizeof(slot)));
  return cached;
}

reverse_lookup::slot* reverse_lookup::new_table() noexcept {
  return reinterpret_cast<slot*>(bk_->grant_meta_pages(1));  // zero-filled
}

bool reverse_lookup::init(backing& bk) noexcept {
  bk_ = &bk;
  slot* root = new_table();
  if (!root) return false;
  root_.store(reinterpret_cast<std::uintptr_t>(root) | 1, std::memory_order_release);
  return true;
}

bool reverse_lookup::install(std::uint64_t first_index, std::uint64_t count, bin_header* bin) noexcept {
  const std::uint32_t lg = fanout_log2();
  const std::uint64_t mask = (std::uint64_t{1} << lg) - 1;

  while (first_index + count > capacity()) {  // deepen: old tree becomes subtree 0
    const std::uintptr_t old = root_.load(std::memory_order_relaxed);
    const auto d = static_cast<int>(old & kDepthMask);
    if (d >= 15) return false;
    slot* root = new_table();
    if (!root) return false;
    root[0].store(old & ~kDepthMask, std::memory_order_release);
    root_.store(reinterpret_cast<std::uintptr_t>(root) | static_cast<std::uintptr_t>(d + 1),
                std::memory_order_release);
  }

  const std::uintptr_t r = root_.load(std::memory_order_relaxed);
  const auto d = static_cast<int>(r & kDepthMask);
  for (std::uint64_t index = first_index; index != first_index + count; ++index) {
    auto* table = reinterpret_cast<slot*>(r & ~kDepthMask);
    for (int level = d - 1; level > 0; --level) {
      slot& s = table[(index >> (lg * static_cast<std::uint32_t>(level))) & mask];
      auto child = s.load(std::memory_order_relaxed);
      if (!child) {
        slot* fresh = new_table();
        if (!fresh) return false;
        child = reinterpret_cast<std::uintptr_t>(fresh);
        s.store(child, std::memory_order_release);
      }
      table = reinterpret_cast<slot*>(child);
    }
    table[index & mask].store(reinterpret_cast<std::uintptr_t>(bin), std::memory_order_release);
  }
  return true;
}

bin_header* reverse_lookup::find(std::uint64_t index) const noexcept {
  const std::uintptr_t r = root_.load(std::memory_order_acquire);
  const auto d = static_cast<int>(r & kDepthMask);
  if (index >= capacity_at(d)) return nullptr;
  const std::uint32_t lg = fanout_log2();
  const std::uint64_t mask = (std::uint64_t{1} << lg) - 1;
  auto* table = reinterpret_cast<const slot*>(r & ~kDepthMask);
  for (int level = d - 1; level > 0; --level) {
    const std::uintptr_t child =
        table[(index >> (lg * static_cast<std::uint32_t>(level))) & mask].load(std::memory_order_acquire);
    if (!child) return nullptr;
    table = reinterpret_cast<const slot*>(child);
  }
  return reinterpret_cast<bin_header*>(table[index & mask].load(std::memory_order_acquire));
}

}  // namespace oobheap

#include "oobheap/external.hpp"

#include <cstring>

namespace oobheap {

std::uint32_t external_table::find_locked(const std::byte* p) const noexcept {
  for (std::uint32_t i = 0; i < high_water_; ++i) {
    const entry& e = at(i);
    if (e.state != kEmpty && e.base == p) return i;
  }
  return kNil;
}

std::uint32_t external_table::take_slot_locked() noexcept {
  if (free_slots_ != kNil) {
    std::uint32_t i = free_slots_;
    free_slots_ = at(i).fw;
    return i;
  }
  std::uint32_t i = high_water_;
  std::size_t ci = i >> kChunkShift;
  if (ci >= kMaxChunks) return kNil;
  if (chunks_[ci] == nullptr) {
    std::size_t bytes = round_to_pages(kChunkSize * sizeof(entry), page_size());
    auto* mem = bk_->grant_meta_pages(bytes / page_size());
    if (mem == nullptr) return kNil;
    chunks_[ci] = reinterpret_cast<entry*>(mem);
  }
  ++high_water_;
  return i;
}

void external_table::unlink_cached_locked(std::uint32_t i) noexcept {
  entry& e = at(i);
  if (e.bw != kNil) at(e.bw).fw = e.fw; else cache_head_ = e.fw;
  if (e.fw != kNil) at(e.fw).bw = e.bw; else cache_tail_ = e.bw;
  --cache_count_;
  cache_bytes_ -= e.size;
}

void external_table::evict_locked() noexcept {
  // FIFO: drop the entry with the smallest insertion sequence.
  std::uint32_t victim = kNil;
  for (std::uint32_t i = cache_head_; i != kNil; i = at(i).fw) {
    if (victim == kNil || at(i).seq < at(victim).seq) victim = i;
  }
  if (victim == kNil) return;
  unlink_cached_locked(victim);
  entry& e = at(victim);
  bk_->unmap_external(e.base, e.size);
  e.state = kEmpty;
  e.fw = free_slots_;
  free_slots_ = victim;
}

external_table::alloc_result external_table::allocate(std::size_t rounded) noexcept {
  std::lock_guard<std::mutex> g(mu_);
  // The cache is ordered by non-increasing size, so the first fit scanning
  // from the tail is the tightest fit. It serves only under the 2x slack cap;
  // any larger cached mapping would be looser still, so one probe decides.
  std::uint32_t best = kNil;
  for (std::uint32_t i = cache_tail_; i != kNil; i = at(i).bw) {
    if (at(i).size >= rounded) {
      best = i;
      break;
    }
  }
  if (best != kNil && at(best).size < rounded * 2) {
    unlink_cached_locked(best);
    entry& e = at(best);
    e.state = kInUse;
    ++live_count_;
    return {e.base, false};
  }
  std::uint32_t slot = take_slot_locked();
  if (slot == kNil) return {nullptr, true};
  std::byte* p = bk_->map_external(rounded);
  if (p == nullptr) {
    entry& e = at(slot);
    e.state = kEmpty;
    e.fw = free_slots_;
    free_slots_ = slot;
    return {nullptr, true};
  }
  entry& e = at(slot);
  e.base = p;
  e.size = rounded;
  e.seq = 0;
  e.fw = e.bw = kNil;
  e.state = kInUse;
  ++live_count_;
  return {p, true};
}

free_status external_table::release(std::byte* p) noexcept {
  std::lock_guard<std::mutex> g(mu_);
  std::uint32_t i = find_locked(p);
  if (i == kNil) return free_status::invalid_free;
  entry& e = at(i);
  if (e.state == kCached) return free_status::double_free;
  e.state = kCached;
  e.seq = ++next_seq_;
  --live_count_;
  // Insert keeping sizes non-increasing; equal sizes go after existing ones
  // so newer entries sit closer to the tail.
  std::uint32_t cur = cache_head_;
  std::uint32_t prev = kNil;
  while (cur != kNil && at(cur).size >= e.size) {
    prev = cur;
    cur = at(cur).fw;
  }
  e.bw = prev;
  e.fw = cur;
  if (prev != kNil) at(prev).fw = i; else cache_head_ = i;
  if (cur != kNil) at(cur).bw = i; else cache_tail_ = i;
  ++cache_count_;
  cache_bytes_ += e.size;
  while (cache_count_ > kCacheMaxEntries || cache_bytes_ > kCacheMaxBytes) evict_locked();
  return free_status::freed;
}

external_table::probe_result external_table::probe(const std::byte* p) const noexcept {
  std::lock_guard<std::mutex> g(mu_);
  std::uint32_t i = find_locked(p);
  if (i == kNil) return {probe_state::none, 0};
  const entry& e = at(i);
  return {e.state == kInUse ? probe_state::live : probe_state::cached, e.size};
}

external_table::realloc_result external_table::reallocate(std::byte* p,
                                                          std::size_t new_rounded) noexcept {
  std::lock_guard<std::mutex> g(mu_);
  std::uint32_t i = find_locked(p);
  if (i == kNil || at(i).state != kInUse) return {nullptr, realloc_status::invalid};
  entry& e = at(i);
  if (e.size == new_rounded) return {e.base, realloc_status::ok};
  std::byte* q = bk_->remap_external(e.base, e.size, new_rounded);
  if (q == nullptr) return {nullptr, realloc_status::no_memory};
  e.base = q;
  e.size = new_rounded;
  return {q, realloc_status::ok};
}

external_table::counters external_table::snapshot() const noexcept {
  std::lock_guard<std::mutex> g(mu_);
  return {live_count_, cache_count_, cache_bytes_};
}

void external_table::teardown() noexcept {
  std::lock_guard<std::mutex> g(mu_);
  for (std::uint32_t i = 0; i < high_water_; ++i) {
    entry& e = at(i);
    if (e.state != kEmpty) {
      bk_->unmap_external(e.base, e.size);
      e.state = kEmpty;
    }
  }
  cache_head_ = cache_tail_ = kNil;
  cache_count_ = cache_bytes_ = live_count_ = 0;
  free_slots_ = kNil;
  high_water_ = 0;
}

const char* external_table::audit() const noexcept {
  std::lock_guard<std::mutex> g(mu_);
  if (cache_count_ > kCacheMaxEntries) return "external: cache entry cap exceeded";
  if (cache_bytes_ > kCacheMaxBytes) return "external: cache byte cap exceeded";
  std::size_t n = 0, bytes = 0;
  std::uint32_t prev = kNil;
  for (std::uint32_t i = cache_head_; i != kNil; i = at(i).fw) {
    const entry& e = at(i);
    if (e.state != kCached) return "external: non-cached entry on cache list";
    if (e.bw != prev) return "external: cache back link mismatch";
    if (prev != kNil && at(prev).size < e.size) return "external: cache size order broken";
    bytes += e.size;
    if (++n > high_water_) return "external: cache list cycle";
    prev = i;
  }
  if (prev != cache_tail_) return "external: cache tail mismatch";
  if (n != cache_count_) return "external: cache count mismatch";
  if (bytes != cache_bytes_) return "external: cache byte total mismatch";
  std::size_t cached_entries = 0, live = 0;
  for (std::uint32_t i = 0; i < high_water_; ++i) {
    if (at(i).state == kCached) ++cached_entries;
    if (at(i).state == kInUse) ++live;
  }
  if (cached_entries != cache_count_) return "external: cached entry not on list";
  if (live != live_count_) return "external: live count mismatch";
  return nullptr;
}

}  // namespace oobheap

#include "oobheap/backing.hpp"

#include <cstring>
#include <stdexcept>

#include <sys/mman.h>
#include <unistd.h>

namespace oobheap {

namespace detail {
[[noreturn]] void fatal(const char* msg) noexcept {
  ssize_t rc = ::write(2, "oobheap: fatal: ", 16);
  rc = ::write(2, msg, std::strlen(msg));
  rc = ::write(2, "\n", 1);
  (void)rc;
  std::abort();
}
}  // namespace detail

namespace {
constexpr std::size_t kMetaReserve = std::size_t{8} << 30;  // address space only
}

std::byte* backing::os_reserve(std::size_t len) noexcept {
  void* p = ::mmap(nullptr, len, PROT_NONE, MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
  return p == MAP_FAILED ? nullptr : static_cast<std::byte*>(p);
}

bool backing::os_commit(std::byte* p, std::size_t len) noexcept {
  return ::mprotect(p, len, PROT_READ | PROT_WRITE) == 0;
}

void backing::os_release(std::byte* p, std::size_t len) noexcept {
  if (p) ::munmap(p, len);
}

backing::~backing() {
  os_release(heap_base_, heap_reserved_);
  os_release(meta_base_, meta_reserved_);
}

std::byte* backing::reserve_heap(std::size_t len) {
  std::lock_guard lk(mu_);
  if (heap_base_) throw std::logic_error("heap already reserved");
  if (len == 0 || len % kMinBinSpan != 0) throw std::invalid_argument("bad heap reservation length");
  std::byte* base = os_reserve(len);
  if (!base) throw std::runtime_error("heap reservation failed");
  heap_base_ = base;
  heap_reserved_ = len;
  return base;
}

std::byte* backing::commit_span(std::size_t len) {
  std::lock_guard lk(mu_);
  if (!heap_base_) detail::fatal("commit before reserve");
  if (len == 0 || len % kMinBinSpan != 0) detail::fatal("bad span length");
  std::size_t mark = watermark_.load(std::memory_order_relaxed);
  if (len > heap_reserved_ - mark) return nullptr;
  std::byte* span = heap_base_ + mark;
  if (!os_commit(span, len)) return nullptr;
  watermark_.store(mark + len, std::memory_order_release);
  return span;
}

std::byte* backing::grant_meta_pages(std::size_t count) {
  const std::size_t page = page_size();
  std::lock_guard lk(mu_);
  if (count == 0) detail::fatal("zero-page meta grant");
  if (!meta_base_) {
    meta_base_ = os_reserve(kMetaReserve);
    if (!meta_base_) return nullptr;
    meta_reserved_ = kMetaReserve;
  }
  std::size_t len = count * page;
  if (len > meta_reserved_ - meta_watermark_) return nullptr;
  std::byte* grant = meta_base_ + meta_watermark_;
  if (!os_commit(grant, len)) return nullptr;
  meta_watermark_ += len;
  meta_granted_.fetch_add(len, std::memory_order_relaxed);
  return grant;
}

// ---- platform -------------------------------------------------------------

std::byte* platform_backing::map_external(std::size_t len) {
  void* p = ::mmap(nullptr, len, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  return p == MAP_FAILED ? nullptr : static_cast<std::byte*>(p);
}

void platform_backing::unmap_external(std::byte* p, std::size_t len) {
  if (::munmap(p, len) != 0) detail::fatal("munmap failed");
}

std::byte* platform_backing::remap_external(std::byte* p, std::size_t old_len, std::size_t new_len) {
#ifdef __linux__
  void* q = ::mremap(p, old_len, new_len, MREMAP_MAYMOVE);
  return q == MAP_FAILED ? nullptr : static_cast<std::byte*>(q);
#else
  std::byte* q = map_external(new_len);
  if (!q) return nullptr;
  std::memcpy(q, p, old_len < new_len ? old_len : new_len);
  unmap_external(p, old_len);
  return q;
#endif
}

// ---- test arena -----------------------------------------------------------

arena_backing::arena_backing(std::size_t external_capacity) : capacity_(external_capacity) {
  region_ = os_reserve(capacity_);
  if (!region_) throw std::runtime_error("arena reservation failed");
}

arena_backing::~arena_backing() { os_release(region_, capacity_); }

std::byte* arena_backing::map_external(std::size_t len) {
  std::lock_guard lk(mu_);
  std::byte* p = nullptr;
  if (auto it = pool_.find(len); it != pool_.end()) {
    p = it->second;
    pool_.erase(it);
    poison_.erase(p);
    std::memset(p, 0, len);
  } else {
    if (len > capacity_ - bump_) return nullptr;
    p = region_ + bump_;
    if (!os_commit(p, len)) return nullptr;
    bump_ += len;
  }
  live_.emplace(p, len);
  return p;
}

void arena_backing::unmap_external(std::byte* p, std::size_t len) {
  std::lock_guard lk(mu_);
  auto it = live_.find(p);
  if (it == live_.end() || it->second != len) detail::fatal("arena unmap of unknown mapping");
  live_.erase(it);
  std::memset(p, kPoisonByte, len);
  poison_.emplace(p, len);
  pool_.emplace(len, p);
}

std::byte* arena_backing::remap_external(std::byte* p, std::size_t old_len, std::size_t new_len) {
  if (new_len == old_len) return p;
  std::byte* q = map_external(new_len);
  if (!q) return nullptr;
  std::memcpy(q, p, old_len < new_len ? old_len : new_len);
  unmap_external(p, old_len);
  return q;
}

bool arena_backing::faults_on_read(const void* p, std::size_t len) const {
  std::lock_guard lk(mu_);
  auto* b = static_cast<const std::byte*>(p);
  if (b < region_ || b + len > region_ + bump_) return true;  // never issued
  for (auto it = live_.upper_bound(const_cast<std::byte*>(b)); it != live_.begin();) {
    --it;
    if (b >= it->first && b + len <= it->first + it->second) return false;
    break;
  }
  return true;
}

}  // namespace oobheap

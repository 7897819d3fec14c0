#pragma once

// Page provisioning behind the allocator. Three address families, all disjoint:
//   heap     one reservation per instance, carved into bin spans by a rising
//            watermark; spans are committed on demand and never decommitted
//   meta     zeroed pages for allocator bookkeeping, never part of the heap
//   external per-request mappings for blocks at or above the mapper threshold
//
// Heap and meta behave identically in both backends. They differ in how
// external mappings are produced: platform_backing talks to the OS directly,
// arena_backing pools mappings in a private region and poisons freed ranges so
// tests can detect reads through stale pointers deterministically.

#include <cstddef>
#include <cstdint>
#include <atomic>
#include <map>
#include <mutex>

#include "oobheap/config.hpp"

namespace oobheap {

namespace detail {
[[noreturn]] void fatal(const char* msg) noexcept;
}

class backing {
 public:
  backing() = default;
  virtual ~backing();

  backing(const backing&) = delete;
  backing& operator=(const backing&) = delete;

  // Reserves the heap address range. Callable exactly once per instance;
  // len must be a positive multiple of the minimum bin span.
  std::byte* reserve_heap(std::size_t len);

  // Carves the next `len` bytes (multiple of the minimum bin span) off the
  // reservation and makes them readable/writable and zero-filled.
  // Returns nullptr once the reservation is exhausted.
  std::byte* commit_span(std::size_t len);

  // Zeroed pages outside the heap for allocator metadata. Never returned.
  std::byte* grant_meta_pages(std::size_t count);

  std::byte* heap_base() const noexcept { return heap_base_; }
  std::size_t heap_reserved() const noexcept { return heap_reserved_; }
  std::size_t heap_committed() const noexcept { return watermark_.load(std::memory_order_acquire); }
  std::size_t meta_bytes() const noexcept { return meta_granted_.load(std::memory_order_relaxed); }

  bool in_heap(const void* p) const noexcept {
    auto* b = static_cast<const std::byte*>(p);
    return heap_base_ && b >= heap_base_ && b < heap_base_ + heap_committed();
  }

  // External mappings, zero-filled on return. remap may move; on failure the
  // original mapping is untouched and nullptr is returned.
  virtual std::byte* map_external(std::size_t len) = 0;
  virtual void unmap_external(std::byte* p, std::size_t len) = 0;
  virtual std::byte* remap_external(std::byte* p, std::size_t old_len, std::size_t new_len) = 0;

 protected:
  static std::byte* os_reserve(std::size_t len) noexcept;   // PROT_NONE address space
  static bool os_commit(std::byte* p, std::size_t len) noexcept;
  static void os_release(std::byte* p, std::size_t len) noexcept;

 private:
  std::mutex mu_;
  std::byte* heap_base_ = nullptr;
  std::size_t heap_reserved_ = 0;
  std::atomic<std::size_t> watermark_{0};

  std::byte* meta_base_ = nullptr;
  std::size_t meta_reserved_ = 0;
  std::size_t meta_watermark_ = 0;
  std::atomic<std::size_t> meta_granted_{0};
};

class platform_backing final : public backing {
 public:
  std::byte* map_external(std::size_t len) override;
  void unmap_external(std::byte* p, std::size_t len) override;
  std::byte* remap_external(std::byte* p, std::size_t old_len, std::size_t new_len) override;
};

class arena_backing final : public backing {
 public:
  explicit arena_backing(std::size_t external_capacity = std::size_t{4} << 30);
  ~arena_backing() override;

  std::byte* map_external(std::size_t len) override;
  void unmap_external(std::byte* p, std::size_t len) override;
  std::byte* remap_external(std::byte* p, std::size_t old_len, std::size_t new_len) override;

  // True when a read of [p, p+len) would touch freed or never-issued external
  // memory. The freed-range fill byte backs this up if the check is bypassed.
  bool faults_on_read(const void* p, std::size_t len = 1) const;

  static constexpr unsigned char kPoisonByte = 0xDF;

 private:
  mutable std::mutex mu_;
  std::byte* region_ = nullptr;
  std::size_t capacity_ = 0;
  std::size_t bump_ = 0;
  std::map<std::byte*, std::size_t> live_;
  std::multimap<std::size_t, std::byte*> pool_;  // freed ranges by exact length
  std::map<std::byte*, std::size_t> poison_;
};

}  // namespace oobheap

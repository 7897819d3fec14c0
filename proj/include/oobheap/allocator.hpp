#pragma once

// The allocator instance: routes requests across fixed bins, variable bins
// and external mappings, keeps every piece of bookkeeping in metadata pages
// outside the managed heap, and classifies bad frees instead of corrupting
// state. Threads register lazily on first use; each registered thread owns
// the bins it creates and frees into them directly, while frees from other
// threads are deferred through per-bin mark bitmaps that the owner drains.
// Bins of exited threads are orphaned and adopted by whichever thread next
// misses in its own lists.
//
// The instance itself never touches the process heap, so it can back a
// drop-in malloc. Diagnostics go to stderr via a fixed-size buffer.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>

#include "oobheap/backing.hpp"
#include "oobheap/bin.hpp"
#include "oobheap/config.hpp"
#include "oobheap/external.hpp"
#include "oobheap/revlookup.hpp"

namespace oobheap {

class allocator_instance;

// One per registered (thread, instance) pair, allocated from metadata pages.
struct thread_state {
  static constexpr int kClassSlots = 12;  // 6 fixed + 6 variable size classes

  allocator_instance* inst = nullptr;
  thread_state* next = nullptr;  // instance's chain of all states
  bin_header* avail_head[kClassSlots] = {};
  bin_header* avail_tail[kClassSlots] = {};
  // Bins with no usable space sit here, off the allocation path. An
  // allocation miss revisits them: pending remote frees are drained and any
  // bin that regained space rejoins the avail list, so handed-off bins are
  // reclaimed instead of leaking.
  bin_header* full_head[kClassSlots] = {};
  std::uint64_t tid = 0;
  bool exited = false;
};

struct allocator_options {
  std::size_t heap_reserve = std::size_t{64} << 30;
  violation_policy policy = policy_from_env();
};

struct allocator_stats {
  std::uint64_t alloc_calls;
  std::uint64_t free_calls;
  std::uint64_t realloc_calls;
  std::uint64_t remote_marks;
  std::uint64_t drained_frees;
  std::uint64_t orphan_adoptions;
  std::uint64_t double_frees;
  std::uint64_t invalid_frees;
  std::uint64_t deferred_violations;
  std::uint64_t fixed_bins;
  std::uint64_t variable_bins;
  std::size_t heap_committed;
  std::size_t meta_bytes;
  std::size_t external_live;
  std::size_t external_cached;
  std::size_t external_cached_bytes;
};

class allocator_instance {
 public:
  // Default: own platform backing. A caller-provided backing must outlive
  // the instance (the instance never owns it).
  explicit allocator_instance(const allocator_options& opts = {});
  allocator_instance(const allocator_options& opts, backing& bk);
  ~allocator_instance();

  allocator_instance(const allocator_instance&) = delete;
  allocator_instance& operator=(const allocator_instance&) = delete;

  void* allocate(std::size_t size) noexcept;
  void deallocate(void* p) noexcept;
  void* reallocate(void* p, std::size_t size) noexcept;
  void* zero_allocate(std::size_t count, std::size_t size) noexcept;

  violation_policy policy() const noexcept { return policy_.load(std::memory_order_relaxed); }
  void set_policy(violation_policy p) noexcept { policy_.store(p, std::memory_order_relaxed); }

  // Hooks fire with the bin lock or registry lock held; they must only
  // record and must not call back into the instance.
  using violation_fn = void (*)(void* ctx, const violation& v);
  using drain_fn = void (*)(void* ctx, void* block);
  void set_violation_hook(violation_fn fn, void* ctx) noexcept {
    violation_ctx_ = ctx;
    violation_hook_ = fn;
  }
  void set_drain_hook(drain_fn fn, void* ctx) noexcept {
    drain_ctx_ = ctx;
    drain_hook_ = fn;
  }

  struct block_info {
    route_kind kind;
    std::size_t block_bytes;  // usable bytes at this block
  };
  // Classifies p if it is the start of a live block. Callers must be
  // quiescent with respect to the owning thread.
  std::optional<block_info> inspect(const void* p) noexcept;

  // Structural audit of every bin, the reverse-lookup paths and the external
  // table. Requires quiescence. Returns nullptr or a description of the
  // first inconsistency.
  const char* audit() noexcept;

  // Drains pending remote frees in every bin owned by the calling thread.
  void drain_owned() noexcept;
  // Adopts (and drains) every orphaned bin into the calling thread.
  std::size_t adopt_all_orphans() noexcept;

  allocator_stats snapshot() const noexcept;

  std::byte* heap_base() const noexcept { return bk_->heap_base(); }
  backing& store() noexcept { return *bk_; }

  // Called by thread-exit machinery; orphans every bin owned by st.
  void on_thread_exit(thread_state* st) noexcept;

 private:
  friend struct thread_state;

  void init_common(const allocator_options& opts);
  static void thread_exit_hook(void* arg) noexcept;
  static void register_live(allocator_instance* a) noexcept;
  static void unregister_live(allocator_instance* a) noexcept;

  thread_state* state(bool create) noexcept;
  bin_header* create_bin(bin_type type, std::size_t cell, thread_state* st) noexcept;
  void link_avail(thread_state* st, int slot, bin_header* b) noexcept;
  void list_adopted(thread_state* st, bin_header* b) noexcept;
  static int slot_of(const bin_header& b) noexcept;

  void* allocate_fixed(const size_class_route& r, thread_state* st) noexcept;
  void* allocate_variable(const size_class_route& r, thread_state* st) noexcept;
  bool revive_full(thread_state* st, int slot) noexcept;
  bool adopt_one(bin_type type, std::uint8_t shift, thread_state* st) noexcept;

  void free_native(bin_header& b, std::byte* p, thread_state* st) noexcept;
  void free_remote(bin_header& b, std::byte* p) noexcept;
  void drain(bin_header& b, thread_state* st) noexcept;

  std::byte* meta_alloc(std::size_t bytes) noexcept;        // < page, under reg_mu_
  std::byte* meta_alloc_pages(std::size_t pages) noexcept;  // under reg_mu_

  void report(violation v) noexcept;

  platform_backing own_backing_;
  backing* bk_;
  reverse_lookup rl_;
  external_table ext_;

  std::mutex reg_mu_;  // states, bin creation, orphans, metadata carving
  std::byte* meta_cur_ = nullptr;
  std::size_t meta_left_ = 0;
  bin_header* all_bins_ = nullptr;    // audit chain, linked at creation
  bin_header* orphans_ = nullptr;     // ownerless bins awaiting adoption
  thread_state* states_ = nullptr;
  std::uint64_t next_tid_ = 1;

  std::atomic<violation_policy> policy_;
  violation_fn violation_hook_ = nullptr;
  void* violation_ctx_ = nullptr;
  drain_fn drain_hook_ = nullptr;
  void* drain_ctx_ = nullptr;

  struct counters {
    std::atomic<std::uint64_t> alloc_calls{0};
    std::atomic<std::uint64_t> free_calls{0};
    std::atomic<std::uint64_t> realloc_calls{0};
    std::atomic<std::uint64_t> remote_marks{0};
    std::atomic<std::uint64_t> drained_frees{0};
    std::atomic<std::uint64_t> orphan_adoptions{0};
    std::atomic<std::uint64_t> double_frees{0};
    std::atomic<std::uint64_t> invalid_frees{0};
    std::atomic<std::uint64_t> deferred_violations{0};
    std::atomic<std::uint64_t> fixed_bins{0};
    std::atomic<std::uint64_t> variable_bins{0};
  } counters_;

  std::uint64_t serial_ = 0;               // process-unique instance id
  allocator_instance* live_next_ = nullptr;  // global live-instance chain
};

}  // namespace oobheap

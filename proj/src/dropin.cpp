// LD_PRELOAD malloc replacement backed by a process-wide allocator instance.
//
// The instance lives in static storage and is constructed on first use; the
// core never calls back into malloc, so interposition cannot recurse through
// it. The only exception is language-runtime bootstrap inside this library's
// own initialization, which is served from a small static arena and leaked.

#include <errno.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <new>

#include "oobheap/allocator.hpp"

namespace {

alignas(oobheap::allocator_instance) unsigned char g_storage[sizeof(oobheap::allocator_instance)];
std::atomic<oobheap::allocator_instance*> g_inst{nullptr};
std::atomic<int> g_init_state{0};  // 0 idle, 1 constructing, 2 ready
__thread bool t_busy;

// bootstrap arena: 16-byte header holding the request size, payload after
alignas(16) unsigned char g_boot[1 << 16];
std::atomic<std::size_t> g_boot_used{0};

void* boot_alloc(std::size_t n) {
  const std::size_t need = (n + 31) & ~std::size_t{15};
  const std::size_t off = g_boot_used.fetch_add(need, std::memory_order_relaxed);
  if (off + need > sizeof g_boot) return nullptr;
  unsigned char* h = g_boot + off;
  std::memcpy(h, &n, sizeof n);
  return h + 16;
}

bool is_boot(const void* p) {
  const auto* b = static_cast<const unsigned char*>(p);
  return b >= g_boot && b < g_boot + sizeof g_boot;
}

std::size_t boot_size(const void* p) {
  std::size_t n;
  std::memcpy(&n, static_cast<const unsigned char*>(p) - 16, sizeof n);
  return n;
}

oobheap::allocator_instance* ensure() {
  auto* a = g_inst.load(std::memory_order_acquire);
  if (a != nullptr) return a;
  int expected = 0;
  if (g_init_state.compare_exchange_strong(expected, 1, std::memory_order_acq_rel)) {
    t_busy = true;
    a = new (g_storage) oobheap::allocator_instance();
    t_busy = false;
    g_inst.store(a, std::memory_order_release);
    g_init_state.store(2, std::memory_order_release);
    return a;
  }
  while ((a = g_inst.load(std::memory_order_acquire)) == nullptr) {
    // another thread is constructing
  }
  return a;
}

void* alloc_impl(std::size_t n) {
  if (t_busy) return boot_alloc(n);
  void* p = ensure()->allocate(n);
  if (p == nullptr) errno = ENOMEM;
  return p;
}

}  // namespace

extern "C" {

void* malloc(std::size_t n) { return alloc_impl(n); }

void free(void* p) {
  if (p == nullptr || is_boot(p)) return;
  ensure()->deallocate(p);
}

void* calloc(std::size_t count, std::size_t size) {
  if (t_busy) {
    std::size_t total;
    if (__builtin_mul_overflow(count, size, &total)) return nullptr;
    return boot_alloc(total);  // arena memory is never reused, still zero
  }
  void* p = ensure()->zero_allocate(count, size);
  if (p == nullptr) errno = ENOMEM;
  return p;
}

void* realloc(void* p, std::size_t n) {
  if (p == nullptr) return malloc(n);
  if (is_boot(p)) {
    void* q = malloc(n);
    if (q != nullptr) std::memcpy(q, p, std::min(boot_size(p), n));
    return q;
  }
  void* q = ensure()->reallocate(p, n);
  if (q == nullptr && n != 0) errno = ENOMEM;
  return q;
}

// Alignments up to 16 are the native guarantee. Larger ones are served only
// where a route provides them structurally: power-of-two cells up to 512
// bytes are cell-aligned, mapper blocks are page-aligned. Anything else
// fails cleanly with ENOMEM.
int posix_memalign(void** out, std::size_t align, std::size_t n) {
  if (align < sizeof(void*) || (align & (align - 1)) != 0) return EINVAL;
  void* p = nullptr;
  if (align <= oobheap::kMinFixedCell) {
    p = malloc(n);
  } else if (align <= oobheap::kFixedMaxSize && n <= oobheap::kFixedMaxSize) {
    p = malloc(oobheap::round_up_pow2(std::max(align, std::max(n, std::size_t{1}))));
  } else if (n >= oobheap::kMmapThreshold &&
             align <= static_cast<std::size_t>(sysconf(_SC_PAGESIZE))) {
    p = malloc(n);
  }
  if (p == nullptr) return ENOMEM;
  *out = p;
  return 0;
}

void* aligned_alloc(std::size_t align, std::size_t n) {
  void* p = nullptr;
  const int rc = posix_memalign(&p, align < sizeof(void*) ? sizeof(void*) : align, n);
  if (rc != 0) {
    errno = rc;
    return nullptr;
  }
  return p;
}

void* memalign(std::size_t align, std::size_t n) { return aligned_alloc(align, n); }

std::size_t malloc_usable_size(void* p) {
  if (p == nullptr) return 0;
  if (is_boot(p)) return boot_size(p);
  const auto info = ensure()->inspect(p);
  return info ? info->block_bytes : 0;
}
}

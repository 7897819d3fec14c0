#include "oobheap/allocator.hpp"

#include <pthread.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <new>

#include "oobheap/fbin.hpp"
#include "oobheap/vbin.hpp"

namespace oobheap {
namespace {

// Per-thread cache mapping (instance, serial) to this thread's state. Plain
// __thread PODs so lookup never triggers dynamic initialization or atexit
// registration, which matters when the instance backs the process malloc.
struct tl_slot {
  allocator_instance* inst;
  std::uint64_t serial;
  thread_state* st;
};
constexpr int kTlSlots = 16;
__thread tl_slot g_slots[kTlSlots];
__thread int g_slot_count;

// Live-instance registry. A cached (inst, serial) pair is only dereferenced
// after it is found here, so stale slots for destroyed instances are inert.
constinit std::mutex g_live_mu;
allocator_instance* g_live_head = nullptr;
std::uint64_t g_next_serial = 1;

pthread_key_t g_exit_key;
pthread_once_t g_exit_once = PTHREAD_ONCE_INIT;

violation_context ctx_of(bin_type t) noexcept {
  return t == bin_type::fixed ? violation_context::fixed : violation_context::variable;
}

const char* audit_fixed(const bin_header& b) noexcept {
  const auto* w = b.words<fbin_word>();
  std::uint32_t set = 0;
  std::uint32_t first = fbin::kWords;
  for (std::uint32_t i = 0; i < fbin::kWords; ++i) {
    set += static_cast<std::uint32_t>(std::popcount(w[i]));
    if (first == fbin::kWords && w[i] != 0) first = i;
  }
  if (set != b.free_cnt) return "fixed bin: bitmap population does not match free count";
  if (first != b.free_head) return "fixed bin: free head is not the first word with a set bit";
  return nullptr;
}

}  // namespace

void allocator_instance::register_live(allocator_instance* a) noexcept {
  std::lock_guard<std::mutex> g(g_live_mu);
  a->serial_ = g_next_serial++;
  a->live_next_ = g_live_head;
  g_live_head = a;
}

void allocator_instance::unregister_live(allocator_instance* a) noexcept {
  std::lock_guard<std::mutex> g(g_live_mu);
  allocator_instance** link = &g_live_head;
  while (*link && *link != a) link = &(*link)->live_next_;
  if (*link) *link = a->live_next_;
}

void allocator_instance::thread_exit_hook(void*) noexcept {
  for (int i = 0; i < g_slot_count; ++i) {
    tl_slot s = g_slots[i];
    if (s.inst == nullptr) continue;
    g_slots[i] = {};
    std::lock_guard<std::mutex> g(g_live_mu);
    for (auto* a = g_live_head; a; a = a->live_next_) {
      if (a == s.inst && a->serial_ == s.serial) {
        a->on_thread_exit(s.st);
        break;
      }
    }
  }
  g_slot_count = 0;
}

allocator_instance::allocator_instance(const allocator_options& opts)
    : bk_(&own_backing_), policy_(opts.policy) {
  init_common(opts);
}

allocator_instance::allocator_instance(const allocator_options& opts, backing& bk)
    : bk_(&bk), policy_(opts.policy) {
  init_common(opts);
}

void allocator_instance::init_common(const allocator_options& opts) {
  bk_->reserve_heap(opts.heap_reserve);
  if (!rl_.init(*bk_)) detail::fatal("oobheap: reverse lookup bootstrap failed");
  ext_.init(*bk_);
  register_live(this);
}

allocator_instance::~allocator_instance() {
  unregister_live(this);
  ext_.teardown();
  // heap and metadata mappings die with the backing
}

std::byte* allocator_instance::meta_alloc(std::size_t bytes) noexcept {
  // caller holds reg_mu_
  bytes = (bytes + 15) & ~std::size_t{15};
  if (bytes > meta_left_) {
    std::byte* page = bk_->grant_meta_pages(1);
    if (page == nullptr) return nullptr;
    meta_cur_ = page;
    meta_left_ = page_size();
  }
  std::byte* out = meta_cur_;
  meta_cur_ += bytes;
  meta_left_ -= bytes;
  return out;
}

std::byte* allocator_instance::meta_alloc_pages(std::size_t pages) noexcept {
  // caller holds reg_mu_
  return bk_->grant_meta_pages(pages);
}

thread_state* allocator_instance::state(bool create) noexcept {
  for (int i = 0; i < g_slot_count; ++i) {
    if (g_slots[i].inst == this && g_slots[i].serial == serial_) return g_slots[i].st;
  }
  if (!create) return nullptr;
  thread_state* st;
  {
    std::lock_guard<std::mutex> g(reg_mu_);
    auto* mem = meta_alloc(sizeof(thread_state));
    if (mem == nullptr) return nullptr;
    st = new (mem) thread_state{};
    st->inst = this;
    st->tid = next_tid_++;
    st->next = states_;
    states_ = st;
  }
  pthread_once(&g_exit_once, [] { pthread_key_create(&g_exit_key, thread_exit_hook); });
  pthread_setspecific(g_exit_key, reinterpret_cast<void*>(1));

  int idx = -1;
  for (int i = 0; i < g_slot_count && idx < 0; ++i) {
    if (g_slots[i].inst == nullptr) idx = i;
  }
  if (idx < 0 && g_slot_count < kTlSlots) idx = g_slot_count++;
  if (idx < 0) {
    // all slots busy: clear entries whose instance is gone, else retire the
    // oldest entry's state so its slot can be reused
    std::lock_guard<std::mutex> g(g_live_mu);
    for (int i = 0; i < g_slot_count && idx < 0; ++i) {
      bool alive = false;
      for (auto* a = g_live_head; a; a = a->live_next_) {
        if (a == g_slots[i].inst && a->serial_ == g_slots[i].serial) {
          alive = true;
          break;
        }
      }
      if (!alive) idx = i;
    }
    if (idx < 0) {
      g_slots[0].inst->on_thread_exit(g_slots[0].st);
      idx = 0;
    }
  }
  g_slots[idx] = {this, serial_, st};
  return st;
}

void allocator_instance::on_thread_exit(thread_state* st) noexcept {
  std::lock_guard<std::mutex> g(reg_mu_);
  if (st->exited) return;
  st->exited = true;
  for (int s = 0; s < thread_state::kClassSlots; ++s) {
    st->avail_head[s] = st->avail_tail[s] = st->full_head[s] = nullptr;
  }
  for (bin_header* b = all_bins_; b; b = b->next_all) {
    if (b->owner.load(std::memory_order_relaxed) == st) {
      b->owner.store(nullptr, std::memory_order_release);
      b->in_avail = false;
      b->next = orphans_;
      orphans_ = b;
    }
  }
}

int allocator_instance::slot_of(const bin_header& b) noexcept {
  return b.type == bin_type::fixed ? fixed_class_index(b.cell_size())
                                   : 6 + var_class_index(b.cell_size());
}

void allocator_instance::link_avail(thread_state* st, int slot, bin_header* b) noexcept {
  b->next = nullptr;
  b->in_avail = true;
  if (st->avail_tail[slot] != nullptr) {
    st->avail_tail[slot]->next = b;
  } else {
    st->avail_head[slot] = b;
  }
  st->avail_tail[slot] = b;
}

bin_header* allocator_instance::create_bin(bin_type type, std::size_t cell,
                                           thread_state* st) noexcept {
  std::lock_guard<std::mutex> g(reg_mu_);
  const std::size_t span = cell * kCellsPerBin;
  std::byte* base = bk_->commit_span(span);
  if (base == nullptr) return nullptr;
  bin_header* b;
  if (type == bin_type::fixed) {
    auto* mem = meta_alloc(sizeof(bin_header) + kFbinBitmapBytes);
    if (mem == nullptr) return nullptr;
    b = new (mem) bin_header{};
    b->base = base;
    b->shift = static_cast<std::uint8_t>(std::countr_zero(cell));
    b->type = bin_type::fixed;
    fbin::init(*b);
    counters_.fixed_bins.fetch_add(1, std::memory_order_relaxed);
  } else {
    auto* mem = meta_alloc(sizeof(bin_header));
    if (mem == nullptr) return nullptr;
    auto* cells = meta_alloc_pages(kCellsPerBin * sizeof(vcell) / page_size());
    if (cells == nullptr) return nullptr;
    b = new (mem) bin_header{};
    b->base = base;
    b->cells = new (cells) vcell[kCellsPerBin];
    b->shift = static_cast<std::uint8_t>(std::countr_zero(cell));
    b->type = bin_type::variable;
    vbin::init(*b);
    counters_.variable_bins.fetch_add(1, std::memory_order_relaxed);
  }
  b->owner.store(st, std::memory_order_relaxed);
  const auto first = static_cast<std::uint64_t>(base - bk_->heap_base()) / kMinBinSpan;
  if (!rl_.install(first, span / kMinBinSpan, b)) {
    detail::fatal("oobheap: reverse lookup install failed");
  }
  b->next_all = all_bins_;
  all_bins_ = b;
  return b;
}

void* allocator_instance::allocate(std::size_t size) noexcept {
  const auto r = classify(size);
  if (!r) return nullptr;
  counters_.alloc_calls.fetch_add(1, std::memory_order_relaxed);
  if (r->kind == route_kind::external) {
    return ext_.allocate(r->rounded_size).ptr;
  }
  thread_state* st = state(true);
  if (st == nullptr) return nullptr;
  return r->kind == route_kind::fixed ? allocate_fixed(*r, st) : allocate_variable(*r, st);
}

void* allocator_instance::allocate_fixed(const size_class_route& r, thread_state* st) noexcept {
  const int slot = fixed_class_index(r.cell_size);
  const auto shift = static_cast<std::uint8_t>(std::countr_zero(r.cell_size));
  for (;;) {
    while (bin_header* b = st->avail_head[slot]) {
      if (b->free_cnt == 0) {
        st->avail_head[slot] = b->next;
        if (st->avail_head[slot] == nullptr) st->avail_tail[slot] = nullptr;
        b->in_avail = false;
        b->next = st->full_head[slot];
        st->full_head[slot] = b;
        continue;
      }
      std::byte* p = fbin::allocate(*b);
      if (b->free_cnt == 0) {
        st->avail_head[slot] = b->next;
        if (st->avail_head[slot] == nullptr) st->avail_tail[slot] = nullptr;
        b->in_avail = false;
        b->next = st->full_head[slot];
        st->full_head[slot] = b;
      }
      return p;
    }
    if (revive_full(st, slot)) continue;
    if (adopt_one(bin_type::fixed, shift, st)) continue;
    bin_header* nb = create_bin(bin_type::fixed, r.cell_size, st);
    if (nb == nullptr) return nullptr;
    link_avail(st, slot, nb);
  }
}

void* allocator_instance::allocate_variable(const size_class_route& r,
                                            thread_state* st) noexcept {
  const int slot = 6 + var_class_index(r.cell_size);
  const auto shift = static_cast<std::uint8_t>(std::countr_zero(r.cell_size));
  for (;;) {
    bin_header* prev = nullptr;
    bin_header* b = st->avail_head[slot];
    while (b != nullptr) {
      const std::size_t head_sz = vbin::freelist_head_size(*b);
      if (head_sz == 0) {
        bin_header* nx = b->next;
        (prev ? prev->next : st->avail_head[slot]) = nx;
        if (nx == nullptr) st->avail_tail[slot] = prev;
        b->in_avail = false;
        b->next = st->full_head[slot];
        st->full_head[slot] = b;
        b = nx;
        continue;
      }
      if (head_sz >= r.rounded_size) {
        std::byte* p = vbin::allocate(*b, r.rounded_size);
        if (vbin::freelist_head_size(*b) == 0) {
          (prev ? prev->next : st->avail_head[slot]) = b->next;
          if (b->next == nullptr) st->avail_tail[slot] = prev;
          b->in_avail = false;
          b->next = st->full_head[slot];
          st->full_head[slot] = b;
        }
        return p;
      }
      // too fragmented for this request; smaller ones may still land here
      prev = b;
      b = b->next;
    }
    if (revive_full(st, slot)) continue;
    if (adopt_one(bin_type::variable, shift, st)) continue;
    bin_header* nb = create_bin(bin_type::variable, std::size_t{1} << shift, st);
    if (nb == nullptr) return nullptr;
    link_avail(st, slot, nb);
  }
}

bool allocator_instance::revive_full(thread_state* st, int slot) noexcept {
  bool revived = false;
  bin_header** link = &st->full_head[slot];
  while (bin_header* b = *link) {
    if (b->remote_free_count.load(std::memory_order_relaxed) != 0) drain(*b, st);
    const bool usable = b->type == bin_type::fixed ? b->free_cnt > 0
                                                   : vbin::freelist_head_size(*b) > 0;
    if (usable) {
      *link = b->next;
      link_avail(st, slot, b);
      revived = true;
    } else {
      link = &b->next;
    }
  }
  return revived;
}

bool allocator_instance::adopt_one(bin_type type, std::uint8_t shift,
                                   thread_state* st) noexcept {
  bin_header* found = nullptr;
  {
    std::lock_guard<std::mutex> g(reg_mu_);
    bin_header* prev = nullptr;
    for (bin_header* b = orphans_; b; prev = b, b = b->next) {
      if (b->type != type || b->shift != shift) continue;
      const bool usable = b->remote_free_count.load(std::memory_order_relaxed) != 0 ||
                          (type == bin_type::fixed ? b->free_cnt > 0
                                                   : vbin::freelist_head_size(*b) > 0);
      if (!usable) continue;
      (prev ? prev->next : orphans_) = b->next;
      b->next = nullptr;
      b->owner.store(st, std::memory_order_release);
      found = b;
      break;
    }
  }
  if (found == nullptr) return false;
  counters_.orphan_adoptions.fetch_add(1, std::memory_order_relaxed);
  if (found->remote_free_count.load(std::memory_order_relaxed) != 0) drain(*found, st);
  list_adopted(st, found);
  return true;
}

void allocator_instance::list_adopted(thread_state* st, bin_header* b) noexcept {
  const int slot = slot_of(*b);
  const bool usable = b->type == bin_type::fixed ? b->free_cnt > 0
                                                 : vbin::freelist_head_size(*b) > 0;
  if (usable) {
    link_avail(st, slot, b);
  } else {
    b->in_avail = false;
    b->next = st->full_head[slot];
    st->full_head[slot] = b;
  }
}

std::size_t allocator_instance::adopt_all_orphans() noexcept {
  thread_state* st = state(true);
  if (st == nullptr) return 0;
  std::size_t n = 0;
  for (;;) {
    bin_header* b;
    {
      std::lock_guard<std::mutex> g(reg_mu_);
      b = orphans_;
      if (b != nullptr) {
        orphans_ = b->next;
        b->next = nullptr;
        b->owner.store(st, std::memory_order_release);
      }
    }
    if (b == nullptr) return n;
    ++n;
    counters_.orphan_adoptions.fetch_add(1, std::memory_order_relaxed);
    if (b->remote_free_count.load(std::memory_order_relaxed) != 0) drain(*b, st);
    list_adopted(st, b);
  }
}

void allocator_instance::deallocate(void* vp) noexcept {
  if (vp == nullptr) return;
  auto* p = static_cast<std::byte*>(vp);
  if (bk_->in_heap(p)) {
    const auto idx = static_cast<std::uint64_t>(p - bk_->heap_base()) / kMinBinSpan;
    bin_header* b = rl_.find(idx);
    if (b == nullptr) {
      report({violation_kind::invalid_free, violation_context::unknown, p, false});
      return;
    }
    thread_state* st = state(false);
    if (st != nullptr && b->owner.load(std::memory_order_relaxed) == st) {
      free_native(*b, p, st);
    } else {
      free_remote(*b, p);
    }
    return;
  }
  const free_status fs = ext_.release(p);
  if (fs == free_status::freed) {
    counters_.free_calls.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  if (fs == free_status::double_free) {
    report({violation_kind::double_free, violation_context::external, p, false});
  } else {
    report({violation_kind::invalid_free, violation_context::unknown, p, false});
  }
}

void allocator_instance::free_native(bin_header& b, std::byte* p, thread_state* st) noexcept {
  free_status fs;
  if (b.type == bin_type::fixed) {
    fs = fbin::release(b, p);
  } else {
    const auto off = static_cast<std::size_t>(p - b.base);
    const auto ci = static_cast<std::uint32_t>(off >> b.shift);
    fs = vbin::release(b, ci, off - (std::size_t{ci} << b.shift));
  }
  if (fs != free_status::freed) {
    report({fs == free_status::double_free ? violation_kind::double_free
                                           : violation_kind::invalid_free,
            ctx_of(b.type), p, false});
    return;
  }
  counters_.free_calls.fetch_add(1, std::memory_order_relaxed);
  if (b.remote_free_count.load(std::memory_order_relaxed) != 0) drain(b, st);
}

void allocator_instance::free_remote(bin_header& b, std::byte* p) noexcept {
  const auto off = static_cast<std::size_t>(p - b.base);
  const auto idx = static_cast<std::uint32_t>(off >> b.shift);
  if (b.type == bin_type::fixed) {
    if ((off & (b.cell_size() - 1)) != 0) {
      report({violation_kind::invalid_free, violation_context::fixed, p, false});
      return;
    }
  } else {
    // Racy but safe validation: cells are atomic words and a used/free head
    // with a matching interior offset is the only markable shape. Stale reads
    // merely shift classification to drain time.
    bool head_match = false;
    if (idx < kEndIndex) {
      const std::uint32_t w = b.cells[idx].load();
      const cell_tag t = tag_of(w);
      if (t == cell_tag::used_head || t == cell_tag::free_head) {
        const std::size_t within = off - (std::size_t{idx} << b.shift);
        head_match = unpack_cell(w).offset * kMinFixedCell == within;
      }
    }
    if (!head_match) {
      report({violation_kind::invalid_free, violation_context::variable, p, false});
      return;
    }
  }
  // ensure the mark bitmap exists before taking the bin lock
  if (b.remote_bits.load(std::memory_order_acquire) == nullptr) {
    std::byte* mem;
    {
      std::lock_guard<std::mutex> g(reg_mu_);
      mem = meta_alloc(kRemoteWords * sizeof(std::atomic<std::uint64_t>));
    }
    if (mem == nullptr) detail::fatal("oobheap: metadata exhausted granting mark bitmap");
    auto* words = reinterpret_cast<std::atomic<std::uint64_t>*>(mem);
    for (std::size_t i = 0; i < kRemoteWords; ++i) new (&words[i]) std::atomic<std::uint64_t>{0};
    b.lock();
    if (b.remote_bits.load(std::memory_order_relaxed) == nullptr) {
      b.remote_bits.store(words, std::memory_order_release);
    }  // else another remote freer won the race; the spare chunk is abandoned
    b.unlock();
  }
  b.lock();
  auto* words = b.remote_bits.load(std::memory_order_relaxed);
  const std::uint64_t mask = std::uint64_t{1} << (idx % 64);
  const std::uint64_t prev = words[idx / 64].fetch_or(mask, std::memory_order_relaxed);
  if (prev & mask) {
    b.unlock();
    report({violation_kind::double_free, ctx_of(b.type), p, false});
    return;
  }
  b.remote_free_count.fetch_add(1, std::memory_order_relaxed);
  b.unlock();
  counters_.remote_marks.fetch_add(1, std::memory_order_relaxed);
}

void allocator_instance::drain(bin_header& b, thread_state*) noexcept {
  b.lock();
  auto* words = b.remote_bits.load(std::memory_order_relaxed);
  if (words == nullptr) {
    b.unlock();
    return;
  }
  for (std::uint32_t wi = 0; wi < kRemoteWords; ++wi) {
    std::uint64_t w = words[wi].exchange(0, std::memory_order_relaxed);
    while (w != 0) {
      const auto bit = static_cast<std::uint32_t>(std::countr_zero(w));
      w &= w - 1;
      const std::uint32_t idx = wi * 64 + bit;
      std::byte* p = b.base + (std::size_t{idx} << b.shift);
      free_status fs;
      if (b.type == bin_type::fixed) {
        fs = fbin::release_index(b, idx);
      } else if (tag_of(b.cells[idx].load()) == cell_tag::used_head) {
        p = vbin::cell_block_ptr(b, idx);
        fs = vbin::release(b, idx, static_cast<std::size_t>(p - b.base) -
                                       (std::size_t{idx} << b.shift));
      } else {
        // freed natively (and possibly coalesced away) after it was marked
        fs = free_status::double_free;
      }
      if (fs == free_status::freed) {
        counters_.drained_frees.fetch_add(1, std::memory_order_relaxed);
        counters_.free_calls.fetch_add(1, std::memory_order_relaxed);
        if (drain_hook_ != nullptr) drain_hook_(drain_ctx_, p);
      } else {
        report({violation_kind::double_free, ctx_of(b.type), p, true});
      }
    }
  }
  b.remote_free_count.store(0, std::memory_order_relaxed);
  b.unlock();
}

void allocator_instance::drain_owned() noexcept {
  thread_state* st = state(false);
  if (st == nullptr) return;
  std::lock_guard<std::mutex> g(reg_mu_);
  for (bin_header* b = all_bins_; b; b = b->next_all) {
    if (b->owner.load(std::memory_order_relaxed) == st &&
        b->remote_free_count.load(std::memory_order_relaxed) != 0) {
      drain(*b, st);
    }
  }
}

void* allocator_instance::reallocate(void* vp, std::size_t size) noexcept {
  if (vp == nullptr) return allocate(size);
  counters_.realloc_calls.fetch_add(1, std::memory_order_relaxed);
  const auto r2 = classify(size);
  if (!r2) return nullptr;
  auto* p = static_cast<std::byte*>(vp);

  std::size_t old_bytes = 0;
  bool known = false;
  violation_context bad_ctx = violation_context::unknown;
  if (bk_->in_heap(p)) {
    const auto idx = static_cast<std::uint64_t>(p - bk_->heap_base()) / kMinBinSpan;
    bin_header* b = rl_.find(idx);
    if (b != nullptr && b->type == bin_type::fixed) {
      bad_ctx = violation_context::fixed;
      const auto off = static_cast<std::size_t>(p - b->base);
      if ((off & (b->cell_size() - 1)) == 0) {
        thread_state* st = state(false);
        const bool native = st != nullptr && b->owner.load(std::memory_order_relaxed) == st;
        // the free bitmap is owner-private, so liveness is only checked natively
        if (!native || !fbin::cell_free(*b, static_cast<std::uint32_t>(off >> b->shift))) {
          known = true;
          old_bytes = b->cell_size();
          if (r2->kind == route_kind::fixed && r2->cell_size == b->cell_size()) return p;
        }
      }
    } else if (b != nullptr) {
      bad_ctx = violation_context::variable;
      const std::size_t bytes = vbin::live_block_bytes(*b, p);
      if (bytes != 0) {
        known = true;
        old_bytes = bytes;
        if (r2->kind == route_kind::variable && r2->rounded_size == bytes) return p;
      }
    }
  } else {
    const auto pr = ext_.probe(p);
    if (pr.state == external_table::probe_state::live) {
      known = true;
      old_bytes = pr.size;
      if (r2->kind == route_kind::external) {
        const auto rr = ext_.reallocate(p, r2->rounded_size);
        return rr.status == external_table::realloc_status::ok ? rr.ptr : nullptr;
      }
    } else if (pr.state == external_table::probe_state::cached) {
      bad_ctx = violation_context::external;
    }
  }
  if (!known) {
    report({violation_kind::invalid_free, bad_ctx, p, false});
    return nullptr;
  }
  void* q = allocate(size);
  if (q == nullptr) return nullptr;
  std::memcpy(q, p, std::min(old_bytes, size));
  deallocate(p);
  return q;
}

void* allocator_instance::zero_allocate(std::size_t count, std::size_t size) noexcept {
  std::size_t total;
  if (__builtin_mul_overflow(count, size, &total)) return nullptr;
  const auto r = classify(total);
  if (!r) return nullptr;
  if (r->kind == route_kind::external) {
    counters_.alloc_calls.fetch_add(1, std::memory_order_relaxed);
    const auto res = ext_.allocate(r->rounded_size);
    if (res.ptr != nullptr && !res.fresh) std::memset(res.ptr, 0, r->rounded_size);
    return res.ptr;
  }
  void* p = allocate(total);
  if (p != nullptr) std::memset(p, 0, r->rounded_size);
  return p;
}

std::optional<allocator_instance::block_info> allocator_instance::inspect(
    const void* vp) noexcept {
  const auto* p = static_cast<const std::byte*>(vp);
  if (bk_->in_heap(p)) {
    const auto idx = static_cast<std::uint64_t>(p - bk_->heap_base()) / kMinBinSpan;
    bin_header* b = rl_.find(idx);
    if (b == nullptr) return std::nullopt;
    if (b->type == bin_type::fixed) {
      const auto off = static_cast<std::size_t>(p - b->base);
      if ((off & (b->cell_size() - 1)) != 0) return std::nullopt;
      if (fbin::cell_free(*b, static_cast<std::uint32_t>(off >> b->shift))) return std::nullopt;
      return block_info{route_kind::fixed, b->cell_size()};
    }
    const std::size_t bytes = vbin::live_block_bytes(*b, p);
    if (bytes == 0) return std::nullopt;
    return block_info{route_kind::variable, bytes};
  }
  const auto pr = ext_.probe(p);
  if (pr.state != external_table::probe_state::live) return std::nullopt;
  return block_info{route_kind::external, pr.size};
}

const char* allocator_instance::audit() noexcept {
  std::lock_guard<std::mutex> g(reg_mu_);
  for (bin_header* b = all_bins_; b; b = b->next_all) {
    const auto first = static_cast<std::uint64_t>(b->base - bk_->heap_base()) / kMinBinSpan;
    const auto count = b->span_bytes() / kMinBinSpan;
    for (std::uint64_t i = 0; i < count; ++i) {
      if (rl_.find(first + i) != b) return "reverse lookup: span index does not map to its bin";
    }
    const char* err = b->type == bin_type::fixed ? audit_fixed(*b) : vbin::audit(*b);
    if (err != nullptr) return err;
  }
  return ext_.audit();
}

allocator_stats allocator_instance::snapshot() const noexcept {
  const auto ext = ext_.snapshot();
  return {
      counters_.alloc_calls.load(std::memory_order_relaxed),
      counters_.free_calls.load(std::memory_order_relaxed),
      counters_.realloc_calls.load(std::memory_order_relaxed),
      counters_.remote_marks.load(std::memory_order_relaxed),
      counters_.drained_frees.load(std::memory_order_relaxed),
      counters_.orphan_adoptions.load(std::memory_order_relaxed),
      counters_.double_frees.load(std::memory_order_relaxed),
      counters_.invalid_frees.load(std::memory_order_relaxed),
      counters_.deferred_violations.load(std::memory_order_relaxed),
      counters_.fixed_bins.load(std::memory_order_relaxed),
      counters_.variable_bins.load(std::memory_order_relaxed),
      bk_->heap_committed(),
      bk_->meta_bytes(),
      ext.live,
      ext.cached,
      ext.cached_bytes,
  };
}

void allocator_instance::report(violation v) noexcept {
  if (v.kind == violation_kind::double_free) {
    counters_.double_frees.fetch_add(1, std::memory_order_relaxed);
  } else {
    counters_.invalid_frees.fetch_add(1, std::memory_order_relaxed);
  }
  if (v.deferred) counters_.deferred_violations.fetch_add(1, std::memory_order_relaxed);
  if (violation_hook_ != nullptr) violation_hook_(violation_ctx_, v);
  const violation_policy pol = policy();
  if (pol == violation_policy::ignore) return;
  static constexpr const char* kKind[] = {"double-free", "invalid-free"};
  static constexpr const char* kCtx[] = {"fixed", "variable", "external", "unknown"};
  char buf[160];
  const int n = std::snprintf(buf, sizeof buf, "oobheap: %s ptr=0x%llx ctx=%s deferred=%d\n",
                              kKind[static_cast<int>(v.kind)],
                              static_cast<unsigned long long>(reinterpret_cast<std::uintptr_t>(v.ptr)),
                              kCtx[static_cast<int>(v.context)], v.deferred ? 1 : 0);
  if (n > 0) {
    const auto ignored = ::write(2, buf, static_cast<std::size_t>(n));
    (void)ignored;
  }
  if (pol == violation_policy::abort_process) std::abort();
}

}  // namespace oobheap

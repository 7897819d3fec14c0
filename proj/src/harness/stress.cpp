#include "oobheap/harness/stress.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <random>
#include <thread>

#include "oobheap/allocator.hpp"
#include "oobheap/harness/oracle.hpp"
#include "oobheap/harness/trace.hpp"

namespace oobheap::harness {

namespace {

struct stress_block {
  void* p = nullptr;
  std::size_t size = 0;
  std::uint64_t seed = 0;
};

// stress stamps are bounded so 10^7-op runs stay allocator-dominated: the
// seeded header up front plus a derived byte at the very end of the block
void stamp(void* p, std::size_t size, std::uint64_t seed) {
  const std::size_t head = size < 64 ? size : 64;
  write_fill(p, head, seed);
  if (size > 64)
    static_cast<unsigned char*>(p)[size - 1] = static_cast<unsigned char>((seed >> 48) | 1);
}

bool stamped(const void* p, std::size_t size, std::uint64_t seed) {
  const std::size_t head = size < 64 ? size : 64;
  if (check_fill(p, head, seed) != SIZE_MAX) return false;
  return size <= 64 || static_cast<const unsigned char*>(p)[size - 1] ==
                           static_cast<unsigned char>((seed >> 48) | 1);
}

struct fail_latch {
  std::mutex mu;
  bool failed = false;
  std::string msg;
  std::atomic<bool> stop{false};

  void fail(std::string m) {
    std::lock_guard<std::mutex> g(mu);
    if (failed) return;
    failed = true;
    msg = std::move(m);
    stop.store(true, std::memory_order_relaxed);
  }
};

struct tallies {
  std::atomic<std::uint64_t> allocs{0};
  std::atomic<std::uint64_t> frees{0};
  std::atomic<std::size_t> peak_committed{0};
  std::atomic<std::uint64_t> violations{0};

  void bump_peak(std::size_t v) {
    std::size_t cur = peak_committed.load(std::memory_order_relaxed);
    while (v > cur && !peak_committed.compare_exchange_weak(cur, v, std::memory_order_relaxed)) {
    }
  }
  static void hook(void* ctx, const violation&) {
    static_cast<tallies*>(ctx)->violations.fetch_add(1, std::memory_order_relaxed);
  }
};

std::uint64_t block_seed(const stress_options& o, std::uint64_t key) {
  return fill_seed(o.seed, key, 0xb10cull);
}

// drains one slot array: verify, free, count
bool flush_slots(allocator_instance& inst, std::vector<stress_block>& slots, fail_latch& latch,
                 std::uint64_t& frees, const char* who) {
  for (stress_block& s : slots) {
    if (s.p == nullptr) continue;
    if (!stamped(s.p, s.size, s.seed)) {
      latch.fail(std::string(who) + ": payload corrupted at drain");
      return false;
    }
    inst.deallocate(s.p);
    ++frees;
    s.p = nullptr;
  }
  return true;
}

void churn_worker(allocator_instance& inst, const stress_options& o, std::uint32_t tid,
                  std::uint64_t iters, fail_latch& latch, tallies& tally) {
  std::mt19937_64 rng(fill_seed(o.seed, tid, 0xc4u));
  std::vector<stress_block> slots(o.slots);
  std::uint64_t serial = 0, allocs = 0, frees = 0;
  for (std::uint64_t i = 0; i < iters; ++i) {
    if ((i & 0xFFF) == 0) {
      if (latch.stop.load(std::memory_order_relaxed)) break;
      tally.bump_peak(inst.snapshot().heap_committed);
    }
    stress_block& s = slots[rng() % slots.size()];
    if (s.p != nullptr) {
      if (!stamped(s.p, s.size, s.seed)) {
        latch.fail("churn: payload corrupted before free");
        break;
      }
      inst.deallocate(s.p);
      ++frees;
      s.p = nullptr;
    } else {
      const std::size_t size = random_size(rng, o.min_size, o.max_size);
      void* p = inst.allocate(size);
      if (p == nullptr) {
        latch.fail("churn: allocator returned no memory");
        break;
      }
      s = {p, size, block_seed(o, (std::uint64_t{tid} << 40) | ++serial)};
      stamp(s.p, s.size, s.seed);
      ++allocs;
    }
  }
  flush_slots(inst, slots, latch, frees, "churn");
  inst.drain_owned();
  tally.allocs.fetch_add(allocs, std::memory_order_relaxed);
  tally.frees.fetch_add(frees, std::memory_order_relaxed);
}

void larson_worker(allocator_instance& inst, const stress_options& o, std::uint32_t gen,
                   std::uint32_t tid, std::vector<stress_block>& hand, fail_latch& latch,
                   tallies& tally) {
  std::mt19937_64 rng(fill_seed(o.seed, (std::uint64_t{gen} << 32) | tid, 0x1a50u));
  std::uint64_t serial = 0, allocs = 0, frees = 0;
  // blocks left behind by the previous generation's (exited) worker: these
  // frees land in orphaned bins and pend until adoption
  for (stress_block& b : hand) {
    if (!stamped(b.p, b.size, b.seed)) {
      latch.fail("larson: inherited payload corrupted");
      return;
    }
    inst.deallocate(b.p);
    ++frees;
  }
  hand.clear();

  std::vector<stress_block> slots(o.slots);
  const std::uint64_t iters = o.iters / (o.threads ? o.threads : 1);
  for (std::uint64_t i = 0; i < iters; ++i) {
    if ((i & 0x3FF) == 0) {
      if (latch.stop.load(std::memory_order_relaxed)) break;
      tally.bump_peak(inst.snapshot().heap_committed);
    }
    // free a random slot and re-allocate it with a fresh random size
    stress_block& s = slots[rng() % slots.size()];
    if (s.p != nullptr) {
      if (!stamped(s.p, s.size, s.seed)) {
        latch.fail("larson: payload corrupted before free");
        break;
      }
      inst.deallocate(s.p);
      ++frees;
      s.p = nullptr;
    }
    const std::size_t size = random_size(rng, o.min_size, o.max_size);
    void* p = inst.allocate(size);
    if (p == nullptr) {
      latch.fail("larson: allocator returned no memory");
      break;
    }
    s = {p, size,
         block_seed(o, (std::uint64_t{gen} << 48) | (std::uint64_t{tid} << 32) | ++serial)};
    stamp(s.p, s.size, s.seed);
    ++allocs;
  }

  std::uint32_t kept = 0;
  for (stress_block& s : slots) {
    if (s.p == nullptr) continue;
    if (kept < o.handoff) {
      hand.push_back(s);
      ++kept;
      s.p = nullptr;
    }
  }
  flush_slots(inst, slots, latch, frees, "larson");
  inst.drain_owned();
  tally.allocs.fetch_add(allocs, std::memory_order_relaxed);
  tally.frees.fetch_add(frees, std::memory_order_relaxed);
}

struct mailbox {
  std::mutex mu;
  std::vector<stress_block> box;
};

void mstress_worker(allocator_instance& inst, const stress_options& o, std::uint32_t tid,
                    std::uint64_t iters, mailbox& mail, fail_latch& latch, tallies& tally) {
  std::mt19937_64 rng(fill_seed(o.seed, tid, 0x57a7u));
  std::vector<stress_block> slots(o.slots);
  std::uint64_t serial = 0, allocs = 0, frees = 0;
  for (std::uint64_t i = 0; i < iters; ++i) {
    if ((i & 0xFFF) == 0) {
      if (latch.stop.load(std::memory_order_relaxed)) break;
      tally.bump_peak(inst.snapshot().heap_committed);
    }
    const std::uint64_t roll = rng() % 100;
    if (roll < 12) {
      // ship one of our blocks to whoever pops it next
      stress_block& s = slots[rng() % slots.size()];
      if (s.p != nullptr) {
        std::lock_guard<std::mutex> g(mail.mu);
        mail.box.push_back(s);
        s.p = nullptr;
        continue;
      }
    } else if (roll < 30) {
      // free a traded block; usually someone else's
      stress_block b{};
      {
        std::lock_guard<std::mutex> g(mail.mu);
        if (!mail.box.empty()) {
          b = mail.box.back();
          mail.box.pop_back();
        }
      }
      if (b.p != nullptr) {
        if (!stamped(b.p, b.size, b.seed)) {
          latch.fail("mstress: traded payload corrupted");
          break;
        }
        inst.deallocate(b.p);
        ++frees;
        continue;
      }
    }
    stress_block& s = slots[rng() % slots.size()];
    if (s.p != nullptr) {
      if (!stamped(s.p, s.size, s.seed)) {
        latch.fail("mstress: payload corrupted before free");
        break;
      }
      inst.deallocate(s.p);
      ++frees;
      s.p = nullptr;
    } else {
      const std::size_t size = random_size(rng, o.min_size, o.max_size);
      void* p = inst.allocate(size);
      if (p == nullptr) {
        latch.fail("mstress: allocator returned no memory");
        break;
      }
      s = {p, size, block_seed(o, (std::uint64_t{tid} << 40) | ++serial)};
      stamp(s.p, s.size, s.seed);
      ++allocs;
    }
  }
  flush_slots(inst, slots, latch, frees, "mstress");
  inst.drain_owned();
  tally.allocs.fetch_add(allocs, std::memory_order_relaxed);
  tally.frees.fetch_add(frees, std::memory_order_relaxed);
}

void finish_stats(stress_result& res, allocator_instance& inst, const tallies& tally,
                  std::chrono::steady_clock::time_point t0) {
  const allocator_stats snap = inst.snapshot();
  stats_report& s = res.stats;
  s.allocs = tally.allocs.load(std::memory_order_relaxed);
  s.frees = tally.frees.load(std::memory_order_relaxed);
  s.ops = s.allocs + s.frees;
  s.bytes_live_peak = 0;
  s.heap_committed = snap.heap_committed;
  s.meta_bytes = snap.meta_bytes;
  s.fixed_bins = snap.fixed_bins;
  s.variable_bins = snap.variable_bins;
  s.external_live = snap.external_live;
  s.external_cached = snap.external_cached;
  s.external_cached_bytes = snap.external_cached_bytes;
  s.remote_marks = snap.remote_marks;
  s.drained_frees = snap.drained_frees;
  s.orphan_adoptions = snap.orphan_adoptions;
  s.double_frees = snap.double_frees;
  s.invalid_frees = snap.invalid_frees;
  s.deferred_violations = snap.deferred_violations;
  s.expected_violations = 0;
  s.wall_ms = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
          .count());
}

// shared epilogue: quiesce, audit, insist the run stayed diagnostic-free
void settle(stress_result& res, allocator_instance& inst, fail_latch& latch, tallies& tally) {
  inst.adopt_all_orphans();
  inst.drain_owned();
  if (!latch.failed) {
    if (const char* why = inst.audit()) latch.fail(std::string("structure audit failed: ") + why);
  }
  if (!latch.failed && tally.violations.load(std::memory_order_relaxed) != 0)
    latch.fail("diagnostics were reported during a clean workload");
  res.ok = !latch.failed;
  res.error = latch.msg;
}

stress_result run_churn(const stress_options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  stress_result res;
  allocator_options aopts;
  aopts.policy = violation_policy::report;
  allocator_instance inst(aopts);
  fail_latch latch;
  tallies tally;
  inst.set_violation_hook(&tallies::hook, &tally);

  const std::uint32_t threads = o.threads ? o.threads : 1;
  {
    std::vector<std::thread> ts;
    ts.reserve(threads);
    const std::uint64_t per = o.iters / threads;
    for (std::uint32_t k = 0; k < threads; ++k)
      ts.emplace_back(churn_worker, std::ref(inst), std::cref(o), k,
                      k == 0 ? per + o.iters % threads : per, std::ref(latch), std::ref(tally));
    for (auto& t : ts) t.join();
  }
  settle(res, inst, latch, tally);
  finish_stats(res, inst, tally, t0);
  res.stats.threads = threads;
  return res;
}

stress_result run_larson(const stress_options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  stress_result res;
  allocator_options aopts;
  aopts.policy = violation_policy::report;
  allocator_instance inst(aopts);
  fail_latch latch;
  tallies tally;
  inst.set_violation_hook(&tallies::hook, &tally);

  const std::uint32_t threads = o.threads ? o.threads : 1;
  std::vector<std::vector<stress_block>> hand(threads);
  for (std::uint32_t gen = 1; gen <= o.generations && !latch.stop; ++gen) {
    std::vector<std::thread> ts;
    ts.reserve(threads);
    for (std::uint32_t k = 0; k < threads; ++k)
      ts.emplace_back(larson_worker, std::ref(inst), std::cref(o), gen, k, std::ref(hand[k]),
                      std::ref(latch), std::ref(tally));
    for (auto& t : ts) t.join();
    res.generation_peaks.push_back(inst.snapshot().heap_committed);
  }
  std::uint64_t frees = 0;
  for (auto& h : hand) flush_slots(inst, h, latch, frees, "larson");
  tally.frees.fetch_add(frees, std::memory_order_relaxed);
  settle(res, inst, latch, tally);
  finish_stats(res, inst, tally, t0);
  res.stats.threads = threads;
  return res;
}

stress_result run_mstress(const stress_options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  stress_result res;
  allocator_options aopts;
  aopts.policy = violation_policy::report;
  allocator_instance inst(aopts);
  fail_latch latch;
  tallies tally;
  inst.set_violation_hook(&tallies::hook, &tally);

  const std::uint32_t threads = o.threads ? o.threads : 1;
  mailbox mail;
  {
    std::vector<std::thread> ts;
    ts.reserve(threads);
    const std::uint64_t per = o.iters / threads;
    for (std::uint32_t k = 0; k < threads; ++k)
      ts.emplace_back(mstress_worker, std::ref(inst), std::cref(o), k,
                      k == 0 ? per + o.iters % threads : per, std::ref(mail), std::ref(latch),
                      std::ref(tally));
    for (auto& t : ts) t.join();
  }
  std::uint64_t frees = 0;
  flush_slots(inst, mail.box, latch, frees, "mstress");
  tally.frees.fetch_add(frees, std::memory_order_relaxed);
  settle(res, inst, latch, tally);
  finish_stats(res, inst, tally, t0);
  res.stats.threads = threads;
  return res;
}

}  // namespace

stress_result run_stress(const stress_options& opts) {
  switch (opts.kind) {
    case stress_kind::churn: return run_churn(opts);
    case stress_kind::larson: return run_larson(opts);
    case stress_kind::mstress: return run_mstress(opts);
  }
  stress_result res;
  res.error = "unknown stress kind";
  return res;
}

}  // namespace oobheap::harness

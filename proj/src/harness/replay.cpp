#include "oobheap/harness/replay.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "oobheap/allocator.hpp"
#include "oobheap/harness/oracle.hpp"

namespace oobheap::harness {

std::string stats_report::to_text(bool include_wall) const {
  std::string s;
  auto kv = [&](const char* k, std::uint64_t v) {
    s += k;
    s += '=';
    s += std::to_string(v);
    s += '\n';
  };
  kv("ops", ops);
  kv("allocs", allocs);
  kv("frees", frees);
  kv("reallocs", reallocs);
  kv("zero_allocs", zero_allocs);
  kv("threads", threads);
  kv("bytes_live_peak", bytes_live_peak);
  kv("heap_committed", heap_committed);
  kv("meta_bytes", meta_bytes);
  kv("fixed_bins", fixed_bins);
  kv("variable_bins", variable_bins);
  kv("external_live", external_live);
  kv("external_cached", external_cached);
  kv("external_cached_bytes", external_cached_bytes);
  kv("remote_marks", remote_marks);
  kv("drained_frees", drained_frees);
  kv("orphan_adoptions", orphan_adoptions);
  kv("double_frees", double_frees);
  kv("invalid_frees", invalid_frees);
  kv("deferred_violations", deferred_violations);
  kv("expected_violations", expected_violations);
  if (include_wall) kv("wall_ms", wall_ms);
  return s;
}

std::string failing_prefix(const std::vector<trace_event>& events, std::size_t error_event) {
  std::string out;
  const std::size_t end = error_event < events.size() ? error_event + 1 : events.size();
  for (std::size_t i = 0; i < end; ++i) {
    out += format_event(events[i]);
    out += '\n';
  }
  return out;
}

namespace {

// hands the turn from sequence number to sequence number; waiting on an
// already-reached turn returns without a syscall
struct turnstile {
  std::atomic<std::uint64_t> turn{0};

  void await(std::uint64_t t) noexcept {
    std::uint64_t v;
    while ((v = turn.load(std::memory_order_acquire)) != t)
      turn.wait(v, std::memory_order_relaxed);
  }
  void advance() noexcept {
    turn.fetch_add(1, std::memory_order_acq_rel);
    turn.notify_all();
  }
};

struct violation_recorder {
  std::mutex mu;
  std::vector<violation> seen;
  std::atomic<std::uint64_t> count{0};

  static void hook(void* ctx, const violation& v) {
    auto* r = static_cast<violation_recorder*>(ctx);
    std::lock_guard<std::mutex> g(r->mu);
    r->seen.push_back(v);
    r->count.fetch_add(1, std::memory_order_relaxed);
  }
};

// deterministic non-heap addresses for frees of ids that were never allocated
alignas(16) unsigned char g_outside[4096];

struct dead_block {
  std::uintptr_t lo;
  std::uint32_t owner;
};

// All mutable state below is gate-serialized: exactly one worker runs
// between await() and advance(), and the gate's acquire/release chain orders
// every access.
struct replay_ctx {
  const std::vector<trace_event>* events = nullptr;
  allocator_instance* inst = nullptr;
  violation_recorder rec;
  turnstile gate;
  shadow_oracle oracle;
  std::unordered_map<std::uint64_t, std::uint64_t> gens;
  std::unordered_map<std::uint64_t, dead_block> tombstones;
  std::uint64_t expected_violations = 0;
  std::size_t live_peak = 0;
  std::uint64_t seed = 0;
  stats_report stats;

  std::atomic<bool> stop{false};
  std::mutex fail_mu;
  bool failed = false;
  std::string fail_msg;
  std::uint32_t fail_line = 0;
  std::size_t fail_event = 0;

  void fail(std::size_t ev_idx, std::uint32_t line, std::string msg) {
    std::lock_guard<std::mutex> g(fail_mu);
    if (failed) return;
    failed = true;
    fail_msg = std::move(msg);
    fail_line = line;
    fail_event = ev_idx;
    stop.store(true, std::memory_order_relaxed);
  }
};

std::string id_str(std::uint64_t id) { return "id " + std::to_string(id); }

void* hostile_ptr(replay_ctx& c, std::uint64_t id) {
  const auto it = c.tombstones.find(id);
  if (it != c.tombstones.end()) return reinterpret_cast<void*>(it->second.lo);
  return g_outside + (id * 16) % (sizeof g_outside - 16);
}

// a stale pointer that coincides with a live block's start would silently
// free that block and desynchronize the differential state; such traces are
// rejected rather than misjudged
bool reject_alias(replay_ctx& c, std::size_t ei, const trace_event& ev, const void* p) {
  const shadow_block* b = c.oracle.covering(p);
  if (b != nullptr && b->lo == reinterpret_cast<std::uintptr_t>(p)) {
    c.fail(ei, ev.line,
           "stale pointer of " + id_str(ev.id) + " now aliases live " + id_str(b->id) +
               "; trace not replayable");
    return true;
  }
  return false;
}

void exec_alloc(replay_ctx& c, std::size_t ei, const trace_event& ev, std::uint32_t tid) {
  ++c.stats.allocs;
  auto& inst = *c.inst;
  if (c.oracle.live(ev.id)) {
    c.fail(ei, ev.line, "trace allocates " + id_str(ev.id) + " while it is live");
    return;
  }
  void* p = inst.allocate(ev.size);
  if (ev.size >= kMaxRequest) {
    if (p != nullptr)
      c.fail(ei, ev.line, "allocation beyond the addressable range returned memory");
    return;
  }
  if (p == nullptr) {
    c.fail(ei, ev.line, "allocator returned no memory for size " + std::to_string(ev.size));
    return;
  }
  const auto info = inst.inspect(p);
  if (!info) {
    c.fail(ei, ev.line, "allocator cannot identify its own block for " + id_str(ev.id));
    return;
  }
  const std::uint64_t gen = ++c.gens[ev.id];
  if (!c.oracle.admit(ev.id, ev.size, p, info->block_bytes, info->kind, tid, gen)) {
    c.fail(ei, ev.line, c.oracle.last_error());
    return;
  }
  write_fill(p, ev.size, fill_seed(c.seed, ev.id, gen));
  if (c.oracle.live_bytes() > c.live_peak) c.live_peak = c.oracle.live_bytes();
}

void exec_zero_alloc(replay_ctx& c, std::size_t ei, const trace_event& ev, std::uint32_t tid) {
  ++c.stats.zero_allocs;
  auto& inst = *c.inst;
  if (c.oracle.live(ev.id)) {
    c.fail(ei, ev.line, "trace allocates " + id_str(ev.id) + " while it is live");
    return;
  }
  std::uint64_t total = 0;
  const bool overflow = __builtin_mul_overflow(ev.count, ev.size, &total) || total >= kMaxRequest;
  void* p = inst.zero_allocate(ev.count, ev.size);
  if (overflow) {
    if (p != nullptr) c.fail(ei, ev.line, "overflowing zero-allocation returned memory");
    return;
  }
  if (p == nullptr) {
    c.fail(ei, ev.line, "allocator returned no memory for " + std::to_string(total) + " bytes");
    return;
  }
  if (!is_zero(p, total)) {
    c.fail(ei, ev.line, "zero-allocation of " + id_str(ev.id) + " returned dirty memory");
    return;
  }
  const auto info = inst.inspect(p);
  if (!info) {
    c.fail(ei, ev.line, "allocator cannot identify its own block for " + id_str(ev.id));
    return;
  }
  const std::uint64_t gen = ++c.gens[ev.id];
  if (!c.oracle.admit(ev.id, total, p, info->block_bytes, info->kind, tid, gen)) {
    c.fail(ei, ev.line, c.oracle.last_error());
    return;
  }
  write_fill(p, total, fill_seed(c.seed, ev.id, gen));
  if (c.oracle.live_bytes() > c.live_peak) c.live_peak = c.oracle.live_bytes();
}

void exec_free(replay_ctx& c, std::size_t ei, const trace_event& ev, std::uint32_t tid) {
  ++c.stats.frees;
  auto& inst = *c.inst;
  if (const shadow_block* b = c.oracle.find(ev.id)) {
    void* p = reinterpret_cast<void*>(b->lo);
    const std::size_t off = check_fill(p, b->requested, fill_seed(c.seed, ev.id, b->generation));
    if (off != SIZE_MAX) {
      c.fail(ei, ev.line,
             "payload of " + id_str(ev.id) + " corrupted at byte " + std::to_string(off));
      return;
    }
    c.tombstones[ev.id] = {b->lo, b->owner};
    c.oracle.retire(ev.id);
    inst.deallocate(p);
    return;
  }
  // duplicate or never-allocated id: the allocator owes exactly one diagnostic
  void* p = hostile_ptr(c, ev.id);
  if (reject_alias(c, ei, ev, p)) return;
  ++c.expected_violations;
  inst.deallocate(p);
  (void)tid;
}

void exec_realloc(replay_ctx& c, std::size_t ei, const trace_event& ev, std::uint32_t tid) {
  ++c.stats.reallocs;
  auto& inst = *c.inst;
  if (const shadow_block* b = c.oracle.find(ev.id)) {
    void* oldp = reinterpret_cast<void*>(b->lo);
    const std::size_t old_req = b->requested;
    const std::size_t old_footprint = b->hi - b->lo;
    const std::uint64_t old_gen = b->generation;
    const route_kind old_route = b->route;
    void* q = inst.reallocate(oldp, ev.size);
    if (ev.size >= kMaxRequest) {
      if (q != nullptr) {
        c.fail(ei, ev.line, "reallocation beyond the addressable range returned memory");
        return;
      }
      if (check_fill(oldp, old_req, fill_seed(c.seed, ev.id, old_gen)) != SIZE_MAX)
        c.fail(ei, ev.line, "failed reallocate disturbed " + id_str(ev.id));
      return;
    }
    if (q == nullptr) {
      c.fail(ei, ev.line, "reallocate returned no memory for size " + std::to_string(ev.size));
      return;
    }
    const std::size_t keep = old_req < ev.size ? old_req : ev.size;
    if (check_fill(q, keep, fill_seed(c.seed, ev.id, old_gen)) != SIZE_MAX) {
      c.fail(ei, ev.line, "reallocate lost the payload of " + id_str(ev.id));
      return;
    }
    // a block keeps its address exactly when the new rounded size equals the
    // old footprint within the same route
    const auto r2 = classify(ev.size);
    if (r2 && r2->kind == old_route && r2->rounded_size == old_footprint && q != oldp) {
      c.fail(ei, ev.line, "reallocate moved " + id_str(ev.id) + " without a size-class change");
      return;
    }
    c.oracle.retire(ev.id);
    const auto info = inst.inspect(q);
    if (!info) {
      c.fail(ei, ev.line, "allocator cannot identify its own block for " + id_str(ev.id));
      return;
    }
    const std::uint64_t gen = ++c.gens[ev.id];
    if (!c.oracle.admit(ev.id, ev.size, q, info->block_bytes, info->kind, tid, gen)) {
      c.fail(ei, ev.line, c.oracle.last_error());
      return;
    }
    write_fill(q, ev.size, fill_seed(c.seed, ev.id, gen));
    if (c.oracle.live_bytes() > c.live_peak) c.live_peak = c.oracle.live_bytes();
    return;
  }
  // hostile realloc: detection is only guaranteed on the thread whose bins
  // held the block (the free bitmap is owner-private), so the trace must put
  // it there
  const auto it = c.tombstones.find(ev.id);
  if (it != c.tombstones.end() && it->second.owner != tid) {
    c.fail(ei, ev.line,
           "stale reallocate of " + id_str(ev.id) + " must run on its owning thread");
    return;
  }
  void* p = hostile_ptr(c, ev.id);
  if (reject_alias(c, ei, ev, p)) return;
  // an unrepresentable size is refused before the pointer is examined, so no
  // diagnostic is owed for it
  if (ev.size < kMaxRequest) ++c.expected_violations;
  void* q = inst.reallocate(p, ev.size);
  if (q != nullptr)
    c.fail(ei, ev.line, "reallocate of a stale pointer returned memory for " + id_str(ev.id));
}

void exec_event(replay_ctx& c, std::size_t ei, std::uint32_t tid) {
  const trace_event& ev = (*c.events)[ei];
  switch (ev.op) {
    case trace_op::alloc: exec_alloc(c, ei, ev, tid); break;
    case trace_op::zero_alloc: exec_zero_alloc(c, ei, ev, tid); break;
    case trace_op::free_block: exec_free(c, ei, ev, tid); break;
    case trace_op::realloc_block: exec_realloc(c, ei, ev, tid); break;
    case trace_op::select_thread: break;  // handled when planning
  }
  if (c.failed) return;
  const std::uint64_t seen = c.rec.count.load(std::memory_order_relaxed);
  if (seen > c.expected_violations)
    c.fail(ei, ev.line,
           "unexpected diagnostic: " + std::to_string(seen) + " observed, at most " +
               std::to_string(c.expected_violations) + " expected");
}

// frees every leftover block this logical thread allocated, then flushes its
// bins' pending remote marks
void cleanup_thread(replay_ctx& c, std::uint32_t tid) {
  auto& inst = *c.inst;
  for (const std::uint64_t id : c.oracle.ids_owned_by(tid)) {
    const shadow_block* b = c.oracle.find(id);
    void* p = reinterpret_cast<void*>(b->lo);
    const std::size_t off = check_fill(p, b->requested, fill_seed(c.seed, id, b->generation));
    if (off != SIZE_MAX) {
      c.fail(c.events->size(), 0,
             "payload of " + id_str(id) + " corrupted at byte " + std::to_string(off) +
                 " (found at cleanup)");
      return;
    }
    c.oracle.retire(id);
    inst.deallocate(p);
  }
  inst.drain_owned();
}

void worker_main(replay_ctx& c, const std::vector<std::pair<std::uint64_t, std::uint32_t>>& plan,
                 std::uint32_t tid, std::uint64_t cleanup_seq) {
  for (const auto& [seq, ei] : plan) {
    c.gate.await(seq);
    if (!c.stop.load(std::memory_order_relaxed)) exec_event(c, ei, tid);
    c.gate.advance();
  }
  c.gate.await(cleanup_seq);
  if (!c.stop.load(std::memory_order_relaxed)) cleanup_thread(c, tid);
  c.gate.advance();
}

}  // namespace

replay_result replay_events(const std::vector<trace_event>& events, const replay_options& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  replay_result res;

  // one worker per logical thread, steps numbered in file order
  std::unordered_map<std::uint32_t, std::uint32_t> worker_of;
  std::vector<std::uint32_t> worker_tid;
  std::vector<std::vector<std::pair<std::uint64_t, std::uint32_t>>> plans;
  auto intern = [&](std::uint32_t tid) {
    const auto [it, fresh] = worker_of.try_emplace(tid, static_cast<std::uint32_t>(worker_tid.size()));
    if (fresh) {
      worker_tid.push_back(tid);
      plans.emplace_back();
    }
    return it->second;
  };
  std::uint32_t current = intern(0);
  std::uint64_t nsteps = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].op == trace_op::select_thread) {
      current = intern(events[i].thread);
      continue;
    }
    plans[current].emplace_back(nsteps++, static_cast<std::uint32_t>(i));
  }
  if (worker_tid.size() > 64) {
    res.error = "more than 64 logical threads";
    return res;
  }

  allocator_options aopts;
  aopts.policy = opts.policy;
  allocator_instance inst(aopts);

  replay_ctx c;
  c.events = &events;
  c.inst = &inst;
  c.seed = opts.fill_seed;
  inst.set_violation_hook(&violation_recorder::hook, &c.rec);

  {
    std::vector<std::thread> workers;
    workers.reserve(plans.size());
    for (std::uint32_t w = 0; w < plans.size(); ++w)
      workers.emplace_back(worker_main, std::ref(c), std::cref(plans[w]), worker_tid[w],
                           nsteps + w);
    for (auto& t : workers) t.join();
  }

  if (!c.failed) {
    inst.adopt_all_orphans();
    const std::uint64_t observed = c.rec.count.load(std::memory_order_relaxed);
    if (observed != c.expected_violations)
      c.fail(events.size(), 0,
             "diagnostic ledger mismatch: expected " + std::to_string(c.expected_violations) +
                 ", observed " + std::to_string(observed));
  }
  if (!c.failed) {
    if (const char* why = inst.audit())
      c.fail(events.size(), 0, std::string("structure audit failed: ") + why);
  }
  if (!c.failed && c.oracle.live_count() != 0)
    c.fail(events.size(), 0, "blocks still live after cleanup");

  const allocator_stats snap = inst.snapshot();
  stats_report& s = res.stats;
  s = c.stats;
  s.ops = events.size();
  std::uint32_t active = 0;
  for (const auto& p : plans) active += p.empty() ? 0 : 1;
  s.threads = active;
  s.bytes_live_peak = c.live_peak;
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
  s.expected_violations = c.expected_violations;
  s.wall_ms = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
          .count());

  res.ok = !c.failed;
  res.error = c.fail_msg;
  res.error_line = c.fail_line;
  res.error_event = c.fail_event;
  return res;
}

replay_result replay_text(std::string_view text, const replay_options& opts) {
  const trace_parse_result parsed = parse_trace(text);
  if (!parsed.ok) {
    replay_result res;
    res.error = "trace error: line " + std::to_string(parsed.error_line) + ": " + parsed.error;
    res.error_line = parsed.error_line;
    return res;
  }
  return replay_events(parsed.events, opts);
}

}  // namespace oobheap::harness

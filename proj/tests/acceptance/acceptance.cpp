// Acceptance checks for the allocator and its harness. Each check prints one
// PASS/FAIL line with its pinned tolerance; the process exits nonzero if any
// check fails. Runs standalone (no test framework) so the output reads as a
// report.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oobheap/allocator.hpp"
#include "oobheap/backing.hpp"
#include "oobheap/cell.hpp"
#include "oobheap/config.hpp"
#include "oobheap/external.hpp"
#include "oobheap/fbin.hpp"
#include "oobheap/harness/oracle.hpp"
#include "oobheap/harness/replay.hpp"
#include "oobheap/harness/security.hpp"
#include "oobheap/harness/stress.hpp"
#include "oobheap/harness/trace.hpp"
#include "oobheap/revlookup.hpp"
#include "oobheap/vbin.hpp"

#include "../support/testbin.hpp"

using namespace oobheap;
using namespace oobheap::harness;

namespace {

int g_failures = 0;

void report(const char* id, const char* name, bool pass, const std::string& detail) {
  std::printf("%s %-3s %-22s %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

using clock_type = std::chrono::steady_clock;

double secs_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- check 1 --
// Full detection matrix under the report policy in-process, then again under
// the abort policy where every detecting scenario must kill a child process.
// Budget: 10 seconds for both sweeps.

void check_security() {
  const auto t0 = clock_type::now();
  std::string detail;
  bool pass = true;
  std::size_t rows = 0;

  security_options rep;
  for (const auto& c : run_security_matrix(rep)) {
    ++rows;
    if (!c.pass && pass) {
      pass = false;
      detail = "report-policy scenario " + c.name + " failed: " + c.detail;
    }
  }
  security_options ab;
  ab.policy = violation_policy::abort_process;
  ab.self_path = OOB_HARNESS_BIN;
  for (const auto& c : run_security_matrix(ab)) {
    ++rows;
    if (!c.pass && pass) {
      pass = false;
      detail = "abort-policy scenario " + c.name + " failed: " + c.detail;
    }
  }
  const double secs = secs_since(t0);
  if (pass && secs >= 10.0) {
    pass = false;
    detail = fmt("matrix took %.1f s, limit 10 s", secs);
  }
  if (pass)
    detail = fmt("%zu/%zu rows detected or isolated (report + abort policies) in %.2f s "
                 "(limit 10 s)",
                 rows, rows, secs);
  report("1", "security-detection", pass, detail);
}

// ---------------------------------------------------------------- check 2 --
// Differential replay: 100 seeded traces of 100000 events each, 1..8 logical
// threads, request sizes 1..262144. Any disjointness, alignment, routing,
// content or accounting failure aborts the run. Budget: 120 seconds.

void check_oracle_equivalence() {
  const auto t0 = clock_type::now();
  bool pass = true;
  std::string detail;
  std::uint64_t events_total = 0;

  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const std::uint32_t threads = 1 + static_cast<std::uint32_t>(seed % 8);
    const std::string text = generate_trace(seed, 100000, threads, 1, 262144);
    const trace_parse_result parsed = parse_trace(text);
    if (!parsed.ok) {
      pass = false;
      detail = fmt("seed %llu: generated trace failed to parse", (unsigned long long)seed);
      break;
    }
    const replay_result res = replay_events(parsed.events);
    if (!res.ok) {
      pass = false;
      detail = fmt("seed %llu: %s", (unsigned long long)seed, res.error.c_str());
      break;
    }
    if (res.stats.double_frees + res.stats.invalid_frees != 0) {
      pass = false;
      detail = fmt("seed %llu: diagnostics on a clean trace", (unsigned long long)seed);
      break;
    }
    events_total += res.stats.ops;
  }
  const double secs = secs_since(t0);
  if (pass && secs >= 120.0) {
    pass = false;
    detail = fmt("replays took %.1f s, limit 120 s", secs);
  }
  if (pass)
    detail = fmt("100 traces, %llu events, threads 1..8, sizes 1..262144, clean in %.1f s "
                 "(limit 120 s)",
                 (unsigned long long)events_total, secs);
  report("2", "oracle-equivalence", pass, detail);
}

// ---------------------------------------------------------------- check 3 --
// Randomized structure properties, >= 1000 cases per module, each case a
// fresh structure churned against a brute-force shadow.

template <class Word>
bool fbin_case(std::mt19937_64& rng, std::string& detail) {
  const std::size_t cell = std::size_t{16} << (rng() % 6);
  oobtest::fixed_bin_fixture<Word> fx(cell);
  bin_header& h = *fx.h;
  std::array<bool, kCellsPerBin> free_shadow;
  free_shadow.fill(true);
  std::vector<std::uint32_t> live;

  auto verify = [&]() -> bool {
    std::uint32_t bits = 0;
    const Word* w = h.template words<Word>();
    for (std::uint32_t i = 0; i < fbin_ops<Word>::kWords; ++i)
      bits += static_cast<std::uint32_t>(std::popcount(w[i]));
    if (bits != h.free_cnt) {
      detail = "bitmap popcount disagrees with free_cnt";
      return false;
    }
    for (std::uint32_t i = 0; i < h.free_head && i < fbin_ops<Word>::kWords; ++i)
      if (w[i] != 0) {
        detail = "set bit below free_head";
        return false;
      }
    if (h.free_cnt != 0 && (h.free_head >= fbin_ops<Word>::kWords || w[h.free_head] == 0)) {
      detail = "free_head does not point at a free word";
      return false;
    }
    for (std::uint32_t i = 0; i < kCellsPerBin; ++i)
      if (fbin_ops<Word>::cell_free(h, i) != free_shadow[i]) {
        detail = "cell state disagrees with shadow";
        return false;
      }
    return true;
  };

  for (int op = 0; op < 260; ++op) {
    const bool want_alloc = live.empty() || (h.free_cnt != 0 && rng() % 100 < 55);
    if (want_alloc) {
      std::uint32_t expect = kCellsPerBin;
      for (std::uint32_t i = 0; i < kCellsPerBin; ++i)
        if (free_shadow[i]) {
          expect = i;
          break;
        }
      std::byte* p = fbin_ops<Word>::allocate(h);
      if (expect == kCellsPerBin) {
        if (p != nullptr) {
          detail = "allocation from a full bin returned a cell";
          return false;
        }
        continue;
      }
      if (p == nullptr) {
        detail = "allocation failed with free cells available";
        return false;
      }
      const auto idx = static_cast<std::uint32_t>((p - h.base) >> h.shift);
      if (idx != expect) {
        detail = fmt("allocation chose cell %u, first-fit shadow says %u", idx, expect);
        return false;
      }
      free_shadow[idx] = false;
      live.push_back(idx);
    } else {
      const std::size_t pick = rng() % live.size();
      const std::uint32_t idx = live[pick];
      live[pick] = live.back();
      live.pop_back();
      if (fbin_ops<Word>::release_index(h, idx) != free_status::freed) {
        detail = "release of a live cell did not succeed";
        return false;
      }
      free_shadow[idx] = true;
      if (fbin_ops<Word>::release_index(h, idx) != free_status::double_free) {
        detail = "second release of a cell was not a double free";
        return false;
      }
    }
    if (op % 16 == 0 && !verify()) return false;
  }
  for (const std::uint32_t idx : live) {
    if (fbin_ops<Word>::release_index(h, idx) != free_status::freed) {
      detail = "drain release failed";
      return false;
    }
    free_shadow[idx] = true;
  }
  if (!verify()) return false;
  if (h.free_cnt != kCellsPerBin) {
    detail = "bin not fully free after draining";
    return false;
  }
  return true;
}

struct vshadow_block {
  std::size_t size;
  bool free;
};

bool vbin_case(std::mt19937_64& rng, std::string& detail) {
  static const std::size_t kLadder[] = {512, 1024, 2048, 4096, 8192, 16384};
  const std::size_t cell = kLadder[rng() % 6];
  const std::size_t cap = cell == 16384 ? (kMmapThreshold - 16) : cell * 2;
  oobtest::var_bin_fixture fx(cell);
  bin_header& h = fx.h;
  const std::size_t span = h.span_bytes();

  std::array<std::uint32_t, kCellsPerBin> init_words;
  for (std::size_t i = 0; i < kCellsPerBin; ++i) init_words[i] = fx.cells[i].load();
  const std::uint32_t init_secondary = h.secondary();

  std::map<std::size_t, vshadow_block> blocks;  // start offset -> block
  blocks.emplace(0, vshadow_block{span, true});

  auto head_cell = [&](std::size_t off) { return static_cast<std::uint32_t>(off >> h.shift); };

  auto verify = [&]() -> bool {
    if (const char* why = vbin::audit(h)) {
      detail = std::string("structural audit: ") + why;
      return false;
    }
    std::size_t used_blocks = 0, free_blocks = 0, covered = 0, max_free = 0;
    std::uint32_t prev_ci = kEndIndex;
    for (const auto& [off, b] : blocks) {
      const std::uint32_t ci = head_cell(off);
      const std::uint32_t w = fx.cells[ci].load();
      const cell_tag t = tag_of(w);
      if (b.free ? t != cell_tag::free_head : t != cell_tag::used_head) {
        detail = fmt("head tag mismatch at offset %zu", off);
        return false;
      }
      if (unpack_cell(w).offset * 16 != off - (std::size_t{ci} << h.shift)) {
        detail = fmt("head granule offset mismatch at offset %zu", off);
        return false;
      }
      if (vbin::block_bytes(h, ci) != b.size) {
        detail = fmt("block size %zu expected %zu at offset %zu", vbin::block_bytes(h, ci),
                     b.size, off);
        return false;
      }
      if (vbin::spatial_prev(h, ci) != prev_ci) {
        detail = fmt("spatial prev mismatch at offset %zu", off);
        return false;
      }
      if (prev_ci != kEndIndex && vbin::spatial_next(h, prev_ci) != ci) {
        detail = fmt("spatial next mismatch before offset %zu", off);
        return false;
      }
      prev_ci = ci;
      covered += b.size;
      if (b.free) {
        ++free_blocks;
        max_free = std::max(max_free, b.size);
      } else {
        ++used_blocks;
      }
    }
    if (prev_ci != kEndIndex && vbin::spatial_next(h, prev_ci) != kEndIndex) {
      detail = "last block has a spatial successor";
      return false;
    }
    if (covered != span) {
      detail = "blocks do not cover the span exactly";
      return false;
    }
    std::size_t uh = 0, fh = 0;
    for (std::uint32_t i = 0; i + 1 < kCellsPerBin; ++i) {
      const cell_tag t = tag_of(fx.cells[i].load());
      if (t == cell_tag::used_head) ++uh;
      if (t == cell_tag::free_head) ++fh;
    }
    if (!is_sentinel(fx.cells[kEndIndex].load())) {
      detail = "sentinel cell lost its marking";
      return false;
    }
    if (uh != used_blocks || fh != free_blocks) {
      detail = fmt("tag partition: %zu/%zu heads, shadow has %zu/%zu", uh, fh, used_blocks,
                   free_blocks);
      return false;
    }
    // free list: non-increasing sizes, no cycles, exactly the free blocks
    std::size_t last = SIZE_MAX, count = 0;
    std::set<std::uint32_t> seen;
    std::uint32_t idx = unpack_cell(fx.cells[kEndIndex].load()).fw;
    while (idx != kEndIndex) {
      if (!seen.insert(idx).second) {
        detail = "free list cycles";
        return false;
      }
      if (tag_of(fx.cells[idx].load()) != cell_tag::free_head) {
        detail = "free list visits a non-free cell";
        return false;
      }
      const std::size_t sz = vbin::block_bytes(h, idx);
      if (sz > last) {
        detail = "free list sizes increase";
        return false;
      }
      last = sz;
      ++count;
      idx = unpack_cell(fx.cells[idx].load()).fw;
    }
    if (count != free_blocks) {
      detail = fmt("free list has %zu entries, shadow has %zu", count, free_blocks);
      return false;
    }
    if (vbin::freelist_head_size(h) != (free_blocks == 0 ? 0 : max_free)) {
      detail = "free list head size is not the largest free block";
      return false;
    }
    return true;
  };

  for (int op = 0; op < 90; ++op) {
    std::size_t used_count = 0;
    for (const auto& [off, b] : blocks)
      if (!b.free) ++used_count;
    const bool want_alloc = used_count == 0 || rng() % 100 < 55;
    if (want_alloc) {
      const std::size_t lo16 = cell / 16 + 1, hi16 = cap / 16;
      const std::size_t r = 16 * (lo16 + rng() % (hi16 - lo16 + 1));
      std::size_t want = SIZE_MAX;
      for (const auto& [off, b] : blocks)
        if (b.free && b.size >= r) want = std::min(want, b.size);
      std::byte* p = vbin::allocate(h, r);
      if (want == SIZE_MAX) {
        if (p != nullptr) {
          detail = "allocation succeeded with no adequate free block";
          return false;
        }
        continue;
      }
      if (p == nullptr) {
        detail = fmt("allocation of %zu failed; best fit of %zu exists", r, want);
        return false;
      }
      const auto off = static_cast<std::size_t>(p - h.base);
      const auto it = blocks.find(off);
      if (it == blocks.end() || !it->second.free) {
        detail = "allocation did not start at a free block";
        return false;
      }
      if (it->second.size != want) {
        detail = fmt("best fit chose a %zu-byte block, minimum adequate is %zu",
                     it->second.size, want);
        return false;
      }
      const std::size_t bsz = it->second.size;
      bool keep = bsz != r;
      if (keep) {
        const std::uint32_t rem_ci = head_cell(off + r);
        keep = rem_ci != kEndIndex;
        if (keep && off + bsz < span) keep = rem_ci != head_cell(off + bsz);
      }
      const std::size_t expect_fp = keep ? r : bsz;
      if (vbin::live_block_bytes(h, p) != expect_fp) {
        detail = fmt("footprint %zu, split rule says %zu", vbin::live_block_bytes(h, p),
                     expect_fp);
        return false;
      }
      blocks.erase(it);
      blocks.emplace(off, vshadow_block{expect_fp, false});
      if (expect_fp < bsz) blocks.emplace(off + expect_fp, vshadow_block{bsz - expect_fp, true});
    } else {
      std::size_t pick = rng() % used_count;
      auto it = blocks.begin();
      for (auto scan = blocks.begin(); scan != blocks.end(); ++scan) {
        if (scan->second.free) continue;
        if (pick-- == 0) {
          it = scan;
          break;
        }
      }
      const std::size_t off = it->first;
      const std::uint32_t ci = head_cell(off);
      if (vbin::release(h, ci, off - (std::size_t{ci} << h.shift)) != free_status::freed) {
        detail = "release of a live block failed";
        return false;
      }
      it->second.free = true;
      auto nx = std::next(it);
      if (nx != blocks.end() && nx->second.free) {
        it->second.size += nx->second.size;
        blocks.erase(nx);
      }
      if (it != blocks.begin()) {
        auto pv = std::prev(it);
        if (pv->second.free) {
          pv->second.size += it->second.size;
          blocks.erase(it);
        }
      }
    }
    if (op % 9 == 0 && !verify()) return false;
  }
  if (!verify()) return false;

  // full churn restoration: free every live block, in random order
  std::vector<std::size_t> used_offsets;
  for (const auto& [off, b] : blocks)
    if (!b.free) used_offsets.push_back(off);
  std::shuffle(used_offsets.begin(), used_offsets.end(), rng);
  for (const std::size_t off : used_offsets) {
    const std::uint32_t ci = head_cell(off);
    if (vbin::release(h, ci, off - (std::size_t{ci} << h.shift)) != free_status::freed) {
      detail = "drain release failed";
      return false;
    }
  }
  for (std::size_t i = 0; i < kCellsPerBin; ++i)
    if (fx.cells[i].load() != init_words[i]) {
      detail = fmt("cell %zu not bitwise restored after full churn", i);
      return false;
    }
  if (h.secondary() != init_secondary) {
    detail = "secondary free-list head not restored";
    return false;
  }
  if (vbin::freelist_head_size(h) != span) {
    detail = "restored bin does not offer the whole span";
    return false;
  }
  return true;
}

bool revlookup_case(std::mt19937_64& rng, std::string& detail) {
  platform_backing bk;
  reverse_lookup rl;
  if (!rl.init(bk)) {
    detail = "reverse lookup init failed";
    return false;
  }
  static bin_header pool[24];
  std::map<std::uint64_t, bin_header*> expect;
  const int installs = 3 + static_cast<int>(rng() % 14);
  for (int k = 0; k < installs; ++k) {
    const bool deep = rng() % 4 == 0;
    const std::uint64_t first = deep ? rng() % 3'000'000 : rng() % 4000;
    const std::uint64_t count = 1 + rng() % 32;
    bool overlaps = false;
    for (std::uint64_t i = first; i < first + count; ++i)
      if (expect.contains(i)) overlaps = true;
    if (overlaps) continue;
    bin_header* bin = &pool[k];
    if (!rl.install(first, count, bin)) {
      detail = "install failed";
      return false;
    }
    for (std::uint64_t i = first; i < first + count; ++i) expect[i] = bin;
    // every index ever installed must still resolve after any deepening
    for (const auto& [idx, b] : expect)
      if (rl.find(idx) != b) {
        detail = fmt("index %llu lost its bin after install %d", (unsigned long long)idx, k);
        return false;
      }
    if (!expect.contains(first + count) && rl.find(first + count) != nullptr) {
      detail = "index past the range resolved";
      return false;
    }
    if (first > 0 && !expect.contains(first - 1) && rl.find(first - 1) != nullptr) {
      detail = "index before the range resolved";
      return false;
    }
  }
  if (rl.capacity() < 3'000'000 && rl.depth() >= 3) {
    detail = "depth grew without capacity following";
    return false;
  }
  return true;
}

bool external_case(std::mt19937_64& rng, std::string& detail) {
  platform_backing bk;
  external_table et;
  et.init(bk);
  const std::size_t page = page_size();
  std::map<std::byte*, std::size_t> live;
  std::map<std::byte*, std::size_t> cached;

  auto prune_cached = [&]() {
    for (auto it = cached.begin(); it != cached.end();) {
      if (et.probe(it->first).state != external_table::probe_state::cached)
        it = cached.erase(it);  // evicted
      else
        ++it;
    }
  };
  auto check_caps = [&]() -> bool {
    const auto s = et.snapshot();
    if (s.cached > external_table::kCacheMaxEntries) {
      detail = "cache entry cap exceeded";
      return false;
    }
    if (s.cached_bytes > external_table::kCacheMaxBytes) {
      detail = "cache byte cap exceeded";
      return false;
    }
    if (s.live != live.size()) {
      detail = fmt("table reports %zu live, shadow has %zu", s.live, live.size());
      return false;
    }
    if (const char* why = et.audit()) {
      detail = why;
      return false;
    }
    return true;
  };

  for (int op = 0; op < 36; ++op) {
    if (live.empty() || rng() % 100 < 60) {
      const std::size_t rounded = page * (32 + rng() % 480);
      const auto [p, fresh] = et.allocate(rounded);
      if (p == nullptr) {
        detail = "external allocation failed";
        return false;
      }
      if (reinterpret_cast<std::uintptr_t>(p) % page != 0) {
        detail = "external block not page aligned";
        return false;
      }
      std::size_t granted = rounded;
      if (fresh) {
        if (cached.contains(p)) {
          detail = "a fresh mapping reused a cached base";
          return false;
        }
        static const unsigned char zeros[64] = {};
        if (std::memcmp(p, zeros, 64) != 0 || std::memcmp(p + rounded - 64, zeros, 64) != 0) {
          detail = "fresh mapping not zero filled";
          return false;
        }
      } else {
        const auto it = cached.find(p);
        if (it == cached.end()) {
          detail = "reused base was not in the cache";
          return false;
        }
        granted = it->second;
        if (granted < rounded || granted >= 2 * rounded) {
          detail = fmt("cache reuse granted %zu bytes for a %zu request", granted, rounded);
          return false;
        }
        cached.erase(it);
      }
      // never double-issued: must not overlap any live block
      const auto nx = live.lower_bound(p);
      if (nx != live.end() && nx->first < p + granted) {
        detail = "issued block overlaps a live block";
        return false;
      }
      if (nx != live.begin()) {
        const auto pv = std::prev(nx);
        if (pv->first + pv->second > p) {
          detail = "issued block overlaps a live block";
          return false;
        }
      }
      const auto pr = et.probe(p);
      if (pr.state != external_table::probe_state::live || pr.size != granted) {
        detail = "probe of a live block disagrees";
        return false;
      }
      live.emplace(p, granted);
    } else {
      auto it = live.begin();
      std::advance(it, static_cast<long>(rng() % live.size()));
      std::byte* p = it->first;
      const std::size_t sz = it->second;
      live.erase(it);
      if (et.release(p) != free_status::freed) {
        detail = "release of a live mapping failed";
        return false;
      }
      const auto pr = et.probe(p);
      if (pr.state == external_table::probe_state::live) {
        detail = "released mapping still reported live";
        return false;
      }
      if (pr.state == external_table::probe_state::cached) {
        cached.emplace(p, sz);
        if (rng() % 4 == 0 && et.release(p) != free_status::double_free) {
          detail = "re-release of a cached base was not a double free";
          return false;
        }
      }
    }
    prune_cached();
    if (!check_caps()) return false;
    if (et.release(reinterpret_cast<std::byte*>(page * 7)) != free_status::invalid_free) {
      detail = "release of an unknown pointer was not invalid";
      return false;
    }
  }
  for (const auto& [p, sz] : live)
    if (et.release(p) != free_status::freed) {
      detail = "final release failed";
      return false;
    }
  live.clear();
  if (!check_caps()) return false;
  et.teardown();
  return true;
}

void check_structure_properties() {
  bool pass = true;
  std::string detail;
  std::mt19937_64 rng(0x5eedf00dULL);

  for (int i = 0; pass && i < 1000; ++i) {
    std::string why;
    const bool ok = i % 2 == 0 ? fbin_case<std::uint64_t>(rng, why) : fbin_case<std::uint16_t>(rng, why);
    if (!ok) {
      pass = false;
      detail = fmt("fbin case %d: %s", i, why.c_str());
    }
  }
  for (int i = 0; pass && i < 1000; ++i) {
    std::string why;
    if (!vbin_case(rng, why)) {
      pass = false;
      detail = fmt("vbin case %d: %s", i, why.c_str());
    }
  }
  for (int i = 0; pass && i < 1000; ++i) {
    std::string why;
    if (!revlookup_case(rng, why)) {
      pass = false;
      detail = fmt("revlookup case %d: %s", i, why.c_str());
    }
  }
  for (int i = 0; pass && i < 1000; ++i) {
    std::string why;
    if (!external_case(rng, why)) {
      pass = false;
      detail = fmt("external case %d: %s", i, why.c_str());
    }
  }
  if (pass) detail = "fbin 1000, vbin 1000, revlookup 1000, external 1000 cases, zero failures";
  report("3", "structure-properties", pass, detail);
}

// ---------------------------------------------------------------- check 4 --
// Cell word encoding: exact round-trips over >= 10^6 random words in both
// directions, then the documented free-head neighbourhood rebuilt through
// real bin operations: a used head directly before a free head (no backward
// reference cell) and a forward reference in the cell after the free head.

void check_cell_encoding() {
  bool pass = true;
  std::string detail;
  std::mt19937_64 rng(0xce11ULL);

  for (int i = 0; pass && i < (1 << 20); ++i) {
    const cell_fields f{static_cast<cell_tag>(rng() % 4), static_cast<std::uint32_t>(rng() % 1024),
                        static_cast<std::uint32_t>(rng() % 1024),
                        static_cast<std::uint32_t>(rng() % 1024)};
    if (unpack_cell(pack_cell(f)) != f) {
      pass = false;
      detail = "field round-trip mismatch";
    }
    const auto w = static_cast<std::uint32_t>(rng());
    if (pack_cell(unpack_cell(w)) != w) {
      pass = false;
      detail = fmt("word round-trip mismatch for 0x%08x", w);
    }
  }

  if (pass) {
    // 512-byte cells; 528-byte blocks start at granule 33*k, so block 116
    // heads cell 119, block 117 cell 120, block 118 cell 121, block 119 cell
    // 122. Freeing 117 and 118 leaves a 1056-byte free block headed in cell
    // 120 between used heads in 119 and 122.
    oobtest::var_bin_fixture fx(512);
    bin_header& h = fx.h;
    std::array<std::byte*, 121> ps{};
    for (int k = 0; k < 121; ++k) {
      ps[k] = vbin::allocate(h, 528);
      if (ps[k] != h.base + 528 * k) {
        pass = false;
        detail = fmt("carve %d landed off plan", k);
        break;
      }
    }
    auto free_block = [&](int k) {
      const std::size_t off = 528u * static_cast<std::size_t>(k);
      const auto ci = static_cast<std::uint32_t>(off >> h.shift);
      return vbin::release(h, ci, off - (std::size_t{ci} << h.shift)) == free_status::freed;
    };
    if (pass && (!free_block(117) || !free_block(118))) {
      pass = false;
      detail = "layout frees failed";
    }
    if (pass) {
      const std::uint32_t c119 = fx.cells[119].load();
      const std::uint32_t c120 = fx.cells[120].load();
      const std::uint32_t c121 = fx.cells[121].load();
      const std::uint32_t c122 = fx.cells[122].load();
      if (tag_of(c119) != cell_tag::used_head) {
        pass = false;
        detail = "cell 119 should stay a used head (no backward reference)";
      } else if (tag_of(c120) != cell_tag::free_head || unpack_cell(c120).offset != 21) {
        pass = false;
        detail = "cell 120 should hold the free head at granule 21";
      } else if (tag_of(c121) != cell_tag::reference ||
                 (unpack_cell(c121).offset & kRefBoth) != kRefForward ||
                 unpack_cell(c121).fw != 122) {
        pass = false;
        detail = "cell 121 should be a forward reference to cell 122";
      } else if (tag_of(c122) != cell_tag::used_head) {
        pass = false;
        detail = "cell 122 should hold the next used head";
      } else if (vbin::spatial_next(h, 120) != 122 || vbin::spatial_prev(h, 120) != 119) {
        pass = false;
        detail = "spatial navigation around the free head is wrong";
      } else if (vbin::block_bytes(h, 120) != 1056) {
        pass = false;
        detail = "merged free block size is wrong";
      }
    }
  }
  if (pass)
    detail = fmt("%d round-trips exact; free-head neighbourhood (UH | FH | REF-forward) "
                 "rebuilt at cells 119..122",
                 1 << 20);
  report("4", "cell-encoding", pass, detail);
}

// ---------------------------------------------------------------- check 5 --
// Metadata isolation: for every overflow width 1..256, write that many bytes
// past a block into a freed hole (fixed, variable) or page slack (external);
// after every write the full structure audit passes and a bystander block's
// fill is intact.

bool overflow_fixed(std::string& detail) {
  allocator_instance inst;
  auto* p = static_cast<std::byte*>(inst.allocate(64));
  std::byte* hole[4];
  for (auto& x : hole) x = static_cast<std::byte*>(inst.allocate(64));
  auto* bystander = static_cast<std::byte*>(inst.allocate(64));
  if (bystander != p + 320) {
    detail = "fixed cells not carved contiguously";
    return false;
  }
  write_fill(bystander, 64, 0xb5);
  for (auto* x : hole) inst.deallocate(x);
  for (std::size_t len = 1; len <= 256; ++len) {
    std::memset(p + 64, static_cast<int>(len), len);
    if (const char* why = inst.audit()) {
      detail = fmt("fixed: audit after %zu-byte overflow: %s", len, why);
      return false;
    }
    if (check_fill(bystander, 64, 0xb5) != SIZE_MAX) {
      detail = fmt("fixed: bystander damaged by %zu-byte overflow", len);
      return false;
    }
  }
  for (auto& x : hole) x = static_cast<std::byte*>(inst.allocate(64));
  for (auto* x : hole) inst.deallocate(x);
  inst.deallocate(p);
  inst.deallocate(bystander);
  if (const char* why = inst.audit()) {
    detail = fmt("fixed: final audit: %s", why);
    return false;
  }
  return true;
}

bool overflow_variable(std::string& detail) {
  allocator_instance inst;
  auto* a = static_cast<std::byte*>(inst.allocate(1000));
  auto* b = static_cast<std::byte*>(inst.allocate(1000));
  auto* c = static_cast<std::byte*>(inst.allocate(1000));
  const auto fa = inst.inspect(a);
  if (!fa || b != a + fa->block_bytes) {
    detail = "variable blocks not carved contiguously";
    return false;
  }
  write_fill(c, 1000, 0xc5);
  inst.deallocate(b);
  for (std::size_t len = 1; len <= 256; ++len) {
    std::memset(a + fa->block_bytes, static_cast<int>(len), len);
    if (const char* why = inst.audit()) {
      detail = fmt("variable: audit after %zu-byte overflow: %s", len, why);
      return false;
    }
    if (check_fill(c, 1000, 0xc5) != SIZE_MAX) {
      detail = fmt("variable: bystander damaged by %zu-byte overflow", len);
      return false;
    }
  }
  void* d = inst.allocate(1000);
  inst.deallocate(d);
  inst.deallocate(a);
  inst.deallocate(c);
  if (const char* why = inst.audit()) {
    detail = fmt("variable: final audit: %s", why);
    return false;
  }
  return true;
}

bool overflow_external(std::string& detail) {
  allocator_instance inst;
  constexpr std::size_t req = 131073;  // rounds to 33 pages, 4095 bytes of slack
  auto* p = static_cast<std::byte*>(inst.allocate(req));
  auto* q = static_cast<std::byte*>(inst.allocate(req));
  write_fill(q, 4096, 0xe5);
  for (std::size_t len = 1; len <= 256; ++len) {
    std::memset(p + req, static_cast<int>(len), len);
    if (const char* why = inst.audit()) {
      detail = fmt("external: audit after %zu-byte overflow: %s", len, why);
      return false;
    }
    if (check_fill(q, 4096, 0xe5) != SIZE_MAX) {
      detail = fmt("external: bystander damaged by %zu-byte overflow", len);
      return false;
    }
  }
  inst.deallocate(p);
  inst.deallocate(q);
  void* r = inst.allocate(req);
  inst.deallocate(r);
  if (const char* why = inst.audit()) {
    detail = fmt("external: final audit: %s", why);
    return false;
  }
  return true;
}

void check_metadata_isolation() {
  std::string detail;
  bool pass = overflow_fixed(detail) && overflow_variable(detail) && overflow_external(detail);
  if (pass)
    detail = "overflow widths 1..256 past fixed/variable/external blocks: every audit clean, "
             "bystander fills intact";
  report("5", "metadata-isolation", pass, detail);
}

// ---------------------------------------------------------------- check 6 --
// Desk-scale performance properties: (a) 10^7 single-thread churn ops inside
// 60 s; (b) metadata bytes <= 3% of committed heap bytes after that run;
// (c) larson-style respawn for 10 generations keeps the committed-heap peak
// within 2x the first generation's peak.

void check_performance() {
  stress_options o;
  o.kind = stress_kind::churn;
  o.threads = 1;
  o.iters = 10'000'000;
  o.min_size = 1;
  o.max_size = 4096;
  o.seed = 42;
  const auto t0 = clock_type::now();
  const stress_result churn = run_stress(o);
  const double churn_secs = secs_since(t0);

  bool pass_a = churn.ok && churn_secs < 60.0;
  std::string detail_a = churn.ok
      ? fmt("%llu ops single-thread in %.1f s (limit 60 s)",
            (unsigned long long)churn.stats.ops, churn_secs)
      : "churn failed: " + churn.error;
  if (churn.ok && !pass_a) detail_a += " over limit";
  report("6a", "churn-throughput", pass_a, detail_a);

  const double pct = churn.stats.heap_committed == 0
      ? 100.0
      : 100.0 * static_cast<double>(churn.stats.meta_bytes) /
            static_cast<double>(churn.stats.heap_committed);
  const bool pass_b = churn.ok && pct <= 3.0;
  report("6b", "metadata-overhead", pass_b,
         fmt("metadata %zu B = %.2f%% of %zu B committed heap (limit 3%%)",
             churn.stats.meta_bytes, pct, churn.stats.heap_committed));

  stress_options l;
  l.kind = stress_kind::larson;
  l.threads = 4;
  l.iters = 200'000;
  l.generations = 10;
  l.min_size = 1;
  l.max_size = 16384;
  l.slots = 256;
  l.handoff = 64;
  const stress_result lar = run_stress(l);
  bool pass_c = lar.ok && lar.generation_peaks.size() == 10;
  std::string detail_c;
  if (!lar.ok) {
    detail_c = "larson failed: " + lar.error;
  } else {
    const std::size_t first = lar.generation_peaks.front();
    std::size_t worst = 0;
    for (const std::size_t g : lar.generation_peaks) worst = std::max(worst, g);
    pass_c = pass_c && worst <= 2 * first;
    detail_c = fmt("10 generations x 4 threads: peak committed %zu B vs gen-1 %zu B "
                   "(limit 2x)",
                   worst, first);
  }
  report("6c", "respawn-footprint", pass_c, detail_c);
}

}  // namespace

int main() {
  std::puts("allocator acceptance checks");
  check_security();
  check_oracle_equivalence();
  check_structure_properties();
  check_cell_encoding();
  check_metadata_isolation();
  check_performance();
  if (g_failures == 0) {
    std::puts("all acceptance checks passed");
    return 0;
  }
  std::printf("%d acceptance check(s) failed\n", g_failures);
  return 1;
}

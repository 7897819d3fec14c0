#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "oobheap/backing.hpp"
#include "oobheap/external.hpp"

using namespace oobheap;

namespace {

constexpr std::size_t kPage = 4096;
constexpr std::size_t k128K = 131072;

struct table_fixture {
  platform_backing bk;
  external_table tab;

  table_fixture() { tab.init(bk); }
  ~table_fixture() { tab.teardown(); }

  std::byte* get(std::size_t rounded) {
    auto r = tab.allocate(rounded);
    REQUIRE(r.ptr != nullptr);
    return r.ptr;
  }
};

}  // namespace

TEST_CASE("fresh mappings are distinct, page aligned and zero filled") {
  table_fixture fx;
  auto a = fx.tab.allocate(k128K);
  auto b = fx.tab.allocate(k128K);
  REQUIRE(a.ptr != nullptr);
  REQUIRE(b.ptr != nullptr);
  CHECK(a.fresh);
  CHECK(b.fresh);
  CHECK(a.ptr != b.ptr);
  CHECK(reinterpret_cast<std::uintptr_t>(a.ptr) % kPage == 0);
  std::byte zero{};
  CHECK(a.ptr[0] == zero);
  CHECK(a.ptr[k128K - 1] == zero);
  const auto counters = fx.tab.snapshot();
  CHECK(counters.live == 2);
  CHECK(counters.cached == 0);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("a released mapping is cached and reused for a close fit") {
  table_fixture fx;
  std::byte* p = fx.get(k128K);
  REQUIRE(fx.tab.release(p) == free_status::freed);
  CHECK(fx.tab.probe(p).state == external_table::probe_state::cached);
  CHECK(fx.tab.snapshot().cached_bytes == k128K);

  auto again = fx.tab.allocate(k128K);
  CHECK(again.ptr == p);
  CHECK_FALSE(again.fresh);
  CHECK(fx.tab.probe(p).state == external_table::probe_state::live);
  CHECK(fx.tab.snapshot().cached == 0);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("reuse picks the tightest adequate mapping") {
  table_fixture fx;
  std::byte* small = fx.get(k128K);
  std::byte* mid = fx.get(2 * k128K);
  std::byte* big = fx.get(3 * k128K);
  REQUIRE(fx.tab.release(big) == free_status::freed);
  REQUIRE(fx.tab.release(small) == free_status::freed);
  REQUIRE(fx.tab.release(mid) == free_status::freed);

  auto r = fx.tab.allocate(k128K + 10 * kPage);  // fits mid and big, mid is tighter
  CHECK(r.ptr == mid);
  CHECK_FALSE(r.fresh);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("a cached mapping twice the request or larger is not reused") {
  table_fixture fx;
  std::byte* p = fx.get(2 * k128K);
  REQUIRE(fx.tab.release(p) == free_status::freed);

  auto r = fx.tab.allocate(k128K);  // 2*131072 is exactly twice: too loose
  CHECK(r.ptr != p);
  CHECK(r.fresh);
  CHECK(fx.tab.snapshot().cached == 1);

  auto r2 = fx.tab.allocate(k128K + kPage);  // now the slack is under 2x
  CHECK(r2.ptr == p);
  CHECK_FALSE(r2.fresh);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("frees are validated against the table") {
  table_fixture fx;
  std::byte* p = fx.get(k128K);
  CHECK(fx.tab.release(p + kPage) == free_status::invalid_free);  // interior
  std::byte local;
  CHECK(fx.tab.release(&local) == free_status::invalid_free);    // never mapped
  REQUIRE(fx.tab.release(p) == free_status::freed);
  CHECK(fx.tab.release(p) == free_status::double_free);          // cached base
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("the cache evicts oldest first past the entry cap") {
  table_fixture fx;
  std::vector<std::byte*> ps;
  for (std::size_t i = 0; i < external_table::kCacheMaxEntries + 1; ++i) ps.push_back(fx.get(k128K));
  for (auto* p : ps) REQUIRE(fx.tab.release(p) == free_status::freed);

  const auto counters = fx.tab.snapshot();
  CHECK(counters.cached == external_table::kCacheMaxEntries);
  // the first release went out first
  CHECK(fx.tab.probe(ps[0]).state == external_table::probe_state::none);
  for (std::size_t i = 1; i < ps.size(); ++i) {
    CHECK(fx.tab.probe(ps[i]).state == external_table::probe_state::cached);
  }
  // the evicted mapping is gone entirely, so freeing it again is invalid
  CHECK(fx.tab.release(ps[0]) == free_status::invalid_free);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("the cache evicts oldest first past the byte cap") {
  table_fixture fx;
  const std::size_t sixteen_mib = std::size_t{16} << 20;
  std::vector<std::byte*> ps;
  for (int i = 0; i < 5; ++i) ps.push_back(fx.get(sixteen_mib));
  for (auto* p : ps) REQUIRE(fx.tab.release(p) == free_status::freed);

  const auto counters = fx.tab.snapshot();
  CHECK(counters.cached == 4);
  CHECK(counters.cached_bytes == external_table::kCacheMaxBytes);
  CHECK(fx.tab.probe(ps[0]).state == external_table::probe_state::none);
  CHECK(fx.tab.probe(ps[1]).state == external_table::probe_state::cached);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("table slots are recycled through heavy churn") {
  table_fixture fx;
  std::byte* last = nullptr;
  for (int round = 0; round < 200; ++round) {
    std::byte* p = fx.get(k128K + kPage * static_cast<std::size_t>(round % 3));
    if (last != nullptr) REQUIRE(fx.tab.release(last) == free_status::freed);
    last = p;
  }
  REQUIRE(fx.tab.release(last) == free_status::freed);
  const auto counters = fx.tab.snapshot();
  CHECK(counters.live == 0);
  CHECK(counters.cached <= external_table::kCacheMaxEntries);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("reallocate resizes in place or moves, preserving content") {
  table_fixture fx;
  std::byte* p = fx.get(k128K);
  std::memset(p, 0x5A, k128K);

  auto grown = fx.tab.reallocate(p, 4 * k128K);
  REQUIRE(grown.status == external_table::realloc_status::ok);
  REQUIRE(grown.ptr != nullptr);
  CHECK(grown.ptr[0] == std::byte{0x5A});
  CHECK(grown.ptr[k128K - 1] == std::byte{0x5A});
  CHECK(fx.tab.probe(grown.ptr).size == 4 * k128K);

  auto same = fx.tab.reallocate(grown.ptr, 4 * k128K);
  CHECK(same.ptr == grown.ptr);
  CHECK(same.status == external_table::realloc_status::ok);

  auto shrunk = fx.tab.reallocate(grown.ptr, k128K);
  REQUIRE(shrunk.status == external_table::realloc_status::ok);
  CHECK(shrunk.ptr[k128K - 1] == std::byte{0x5A});

  std::byte local;
  CHECK(fx.tab.reallocate(&local, k128K).status == external_table::realloc_status::invalid);
  REQUIRE(fx.tab.release(shrunk.ptr) == free_status::freed);
  CHECK(fx.tab.reallocate(shrunk.ptr, k128K).status == external_table::realloc_status::invalid);
  CHECK(fx.tab.audit() == nullptr);
}

TEST_CASE("teardown empties the table") {
  platform_backing bk;
  external_table tab;
  tab.init(bk);
  std::byte* a = tab.allocate(k128K).ptr;
  std::byte* b = tab.allocate(k128K).ptr;
  REQUIRE(a != nullptr);
  REQUIRE(tab.release(b) == free_status::freed);
  tab.teardown();
  const auto counters = tab.snapshot();
  CHECK(counters.live == 0);
  CHECK(counters.cached == 0);
  CHECK(tab.probe(a).state == external_table::probe_state::none);
  CHECK(tab.audit() == nullptr);
}

#include "oobheap/harness/oracle.hpp"

#include <cstring>

namespace oobheap::harness {

namespace {

const char* route_name(route_kind k) {
  switch (k) {
    case route_kind::fixed: return "fixed";
    case route_kind::variable: return "variable";
    case route_kind::external: return "external";
  }
  return "?";
}

}  // namespace

bool shadow_oracle::fail(std::string msg) {
  err_ = std::move(msg);
  return false;
}

bool shadow_oracle::admit(std::uint64_t id, std::size_t requested, const void* p,
                          std::size_t block_bytes, route_kind observed_route, std::uint32_t owner,
                          std::uint64_t generation) {
  if (p == nullptr) return fail("null address admitted for id " + std::to_string(id));
  const auto lo = reinterpret_cast<std::uintptr_t>(p);
  if (lo % 16 != 0) return fail("address not 16-byte aligned for id " + std::to_string(id));
  if (by_id_.contains(id)) return fail("id " + std::to_string(id) + " admitted while live");

  const auto route = classify(requested);
  if (!route) return fail("request beyond the addressable range admitted");
  if (route->kind != observed_route)
    return fail(std::string("route mismatch for id ") + std::to_string(id) + ": expected " +
                route_name(route->kind) + ", observed " + route_name(observed_route));
  if (block_bytes < route->rounded_size)
    return fail("footprint " + std::to_string(block_bytes) + " below rounded size " +
                std::to_string(route->rounded_size) + " for id " + std::to_string(id));
  if (route->kind == route_kind::fixed && block_bytes != route->cell_size)
    return fail("fixed footprint " + std::to_string(block_bytes) + " is not the cell size " +
                std::to_string(route->cell_size));

  const std::uintptr_t hi = lo + block_bytes;
  auto next = by_addr_.lower_bound(lo);
  if (next != by_addr_.end() && next->first < hi)
    return fail("id " + std::to_string(id) + " overlaps live id " +
                std::to_string(next->second.id));
  if (next != by_addr_.begin()) {
    auto prev = std::prev(next);
    if (prev->second.hi > lo)
      return fail("id " + std::to_string(id) + " overlaps live id " +
                  std::to_string(prev->second.id));
  }

  by_addr_.emplace(lo, shadow_block{id, lo, hi, requested, route->kind, owner, generation});
  by_id_.emplace(id, lo);
  live_bytes_ += requested;  // trace-visible bytes, not footprint
  return true;
}

std::optional<shadow_block> shadow_oracle::retire(std::uint64_t id) {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  const auto ait = by_addr_.find(it->second);
  shadow_block b = ait->second;
  live_bytes_ -= b.requested;
  by_addr_.erase(ait);
  by_id_.erase(it);
  return b;
}

const shadow_block* shadow_oracle::find(std::uint64_t id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) return nullptr;
  return &by_addr_.at(it->second);
}

const shadow_block* shadow_oracle::covering(const void* p) const {
  const auto a = reinterpret_cast<std::uintptr_t>(p);
  auto it = by_addr_.upper_bound(a);
  if (it == by_addr_.begin()) return nullptr;
  --it;
  return a < it->second.hi ? &it->second : nullptr;
}

std::vector<std::uint64_t> shadow_oracle::ids_owned_by(std::uint32_t owner) const {
  std::vector<std::uint64_t> ids;
  for (const auto& [lo, b] : by_addr_)
    if (b.owner == owner) ids.push_back(b.id);
  return ids;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fill_seed(std::uint64_t trace_seed, std::uint64_t id, std::uint64_t generation) {
  return splitmix64(splitmix64(trace_seed ^ id) + generation);
}

void write_fill(void* p, std::size_t bytes, std::uint64_t seed) {
  auto* b = static_cast<unsigned char*>(p);
  const std::size_t head = bytes < 8 ? bytes : 8;
  std::memcpy(b, &seed, head);
  if (bytes > 8) {
    unsigned char body = static_cast<unsigned char>(seed >> 56) | 1u;
    std::memset(b + 8, body, bytes - 8);
  }
}

std::size_t check_fill(const void* p, std::size_t bytes, std::uint64_t seed) {
  const auto* b = static_cast<const unsigned char*>(p);
  const std::size_t head = bytes < 8 ? bytes : 8;
  unsigned char expect[8];
  std::memcpy(expect, &seed, 8);
  for (std::size_t i = 0; i < head; ++i)
    if (b[i] != expect[i]) return i;
  if (bytes > 8) {
    // bulk-compare in chunks; only a failing chunk is rescanned per byte
    const unsigned char body = static_cast<unsigned char>(seed >> 56) | 1u;
    unsigned char chunk[256];
    std::memset(chunk, body, sizeof chunk);
    std::size_t i = 8;
    while (i < bytes) {
      const std::size_t n = bytes - i < sizeof chunk ? bytes - i : sizeof chunk;
      if (std::memcmp(b + i, chunk, n) != 0) {
        for (std::size_t j = i; j < i + n; ++j)
          if (b[j] != body) return j;
      }
      i += n;
    }
  }
  return SIZE_MAX;
}

bool is_zero(const void* p, std::size_t bytes) {
  static const unsigned char zeros[256] = {};
  const auto* b = static_cast<const unsigned char*>(p);
  std::size_t i = 0;
  while (i < bytes) {
    const std::size_t n = bytes - i < sizeof zeros ? bytes - i : sizeof zeros;
    if (std::memcmp(b + i, zeros, n) != 0) return false;
    i += n;
  }
  return true;
}

}  // namespace oobheap::harness

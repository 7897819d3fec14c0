#pragma once

// Size-class routing and build-time constants shared by the allocator and the
// harness oracle. Everything here is pure: no state, no platform calls except
// the cached page-size probe.

#include <cstddef>
#include <cstdint>
#include <optional>

namespace oobheap {

inline constexpr std::size_t kMinFixedCell = 16;        // smallest fixed class, also alignment
inline constexpr std::size_t kFixedMaxSize = 512;       // largest fixed class
inline constexpr std::size_t kMmapThreshold = 131072;   // requests >= this go to the mapper
inline constexpr std::size_t kCellsPerBin = 1024;
inline constexpr std::size_t kMinBinSpan = kCellsPerBin * kMinFixedCell;  // 16384
inline constexpr std::size_t kMaxRequest = std::size_t{1} << 48;

// variable-bin cell ladder (fixed classes double from 16 to 512; variable
// classes reuse the 512..16384 run)
inline constexpr std::size_t kVarCellLadder[] = {512, 1024, 2048, 4096, 8192, 16384};
inline constexpr int kFixedClassCount = 6;     // 16,32,64,128,256,512
inline constexpr int kVarClassCount = 6;

std::size_t page_size() noexcept;

enum class route_kind : std::uint8_t { fixed, variable, external };

struct size_class_route {
  route_kind kind;
  std::size_t cell_size;     // fixed/variable block granularity; 0 for external
  std::size_t rounded_size;  // bytes actually reserved for the request

  friend bool operator==(const size_class_route&, const size_class_route&) = default;
};

constexpr std::size_t round_up_pow2(std::size_t v) {
  std::size_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

// fixed classes: power of two in [16, 512]
constexpr std::size_t round_fixed(std::size_t request) {
  return round_up_pow2(request < kMinFixedCell ? kMinFixedCell : request);
}

// variable requests round to the 16-byte grid
constexpr std::size_t round_variable(std::size_t request) {
  return (request + 15) & ~std::size_t{15};
}

constexpr std::size_t var_cell_for(std::size_t rounded) {
  std::size_t cell = kVarCellLadder[0];
  for (std::size_t c : kVarCellLadder)
    if (c < rounded) cell = c;
  return cell;
}

constexpr int fixed_class_index(std::size_t cell) {
  int i = 0;
  for (std::size_t c = kMinFixedCell; c != cell; c <<= 1) ++i;
  return i;
}

constexpr int var_class_index(std::size_t cell) {
  int i = 0;
  for (std::size_t c = kVarCellLadder[0]; c != cell; c <<= 1) ++i;
  return i;
}

constexpr std::size_t round_to_pages(std::size_t request, std::size_t page) {
  return (request + page - 1) & ~(page - 1);
}

// Total routing function. nullopt = request beyond the addressable range.
inline std::optional<size_class_route> classify(std::size_t request) {
  if (request >= kMaxRequest) return std::nullopt;
  if (request <= kFixedMaxSize) {
    std::size_t cell = round_fixed(request);
    return size_class_route{route_kind::fixed, cell, cell};
  }
  if (request < kMmapThreshold) {
    std::size_t rounded = round_variable(request);
    return size_class_route{route_kind::variable, var_cell_for(rounded), rounded};
  }
  return size_class_route{route_kind::external, 0, round_to_pages(request, page_size())};
}

enum class violation_policy : std::uint8_t { ignore, report, abort_process };

// OOBHEAP_POLICY=ignore|report|abort; unset or unrecognized -> report
violation_policy policy_from_env() noexcept;

enum class violation_kind : std::uint8_t { double_free, invalid_free };
enum class violation_context : std::uint8_t { fixed, variable, external, unknown };

struct violation {
  violation_kind kind;
  violation_context context;
  const void* ptr;
  bool deferred;
};

}  // namespace oobheap

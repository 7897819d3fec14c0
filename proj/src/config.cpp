#include "oobheap/config.hpp"

#include <cstdlib>
#include <cstring>
#include <unistd.h>

namespace oobheap {

std::size_t page_size() noexcept {
  static const std::size_t cached = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
  return cached;
}

violation_policy policy_from_env() noexcept {
  const char* v = std::getenv("OOBHEAP_POLICY");
  if (!v) return violation_policy::report;
  if (std::strcmp(v, "ignore") == 0) return violation_policy::ignore;
  if (std::strcmp(v, "abort") == 0) return violation_policy::abort_process;
  return violation_policy::report;
}

}  // namespace oobheap

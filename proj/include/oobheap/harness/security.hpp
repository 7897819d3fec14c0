#pragma once

#include <string>
#include <vector>

#include "oobheap/config.hpp"

namespace oobheap::harness {

// one row of the detection matrix
struct security_case {
  std::string name;
  bool pass = false;
  std::string detail;  // what was observed, for the failure report
};

struct security_options {
  violation_policy policy = violation_policy::report;
  // abort-policy rows re-exec the harness binary and expect the child to die
  // on SIGABRT; self_path names that binary
  std::string self_path;
};

std::vector<std::string> security_scenario_names();

// runs one scenario in-process. With policy abort_process, scenarios that
// expect a diagnostic will terminate the process; callers wanting to observe
// that must fork first (run_security_matrix does).
security_case run_security_scenario(const std::string& name, violation_policy policy);

std::vector<security_case> run_security_matrix(const security_options& opts);

}  // namespace oobheap::harness

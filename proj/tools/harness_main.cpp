#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "oobheap/harness/replay.hpp"
#include "oobheap/harness/security.hpp"
#include "oobheap/harness/stress.hpp"
#include "oobheap/harness/trace.hpp"

namespace hn = oobheap::harness;

namespace {

oobheap::violation_policy to_policy(const std::string& s) {
  if (s == "ignore") return oobheap::violation_policy::ignore;
  if (s == "abort") return oobheap::violation_policy::abort_process;
  return oobheap::violation_policy::report;
}

bool write_stats(const std::string& path, const hn::stats_report& stats) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return false;
  out << stats.to_text(false);
  return static_cast<bool>(out);
}

std::string self_path() {
  char buf[4096];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return {};
  buf[n] = '\0';
  return buf;
}

int run_replay(const std::string& file, const std::string& policy, const std::string& stats_out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "cannot open trace file: %s\n", file.c_str());
    return 2;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  const hn::trace_parse_result parsed = hn::parse_trace(text);
  if (!parsed.ok) {
    std::fprintf(stderr, "trace error: line %u: %s\n", parsed.error_line, parsed.error.c_str());
    return 2;
  }
  hn::replay_options opts;
  opts.policy = to_policy(policy);
  const hn::replay_result res = hn::replay_events(parsed.events, opts);
  std::fputs(res.stats.to_text(true).c_str(), stdout);
  if (!stats_out.empty() && !write_stats(stats_out, res.stats)) {
    std::fprintf(stderr, "cannot write stats file: %s\n", stats_out.c_str());
    return 2;
  }
  if (!res.ok) {
    std::fprintf(stderr, "replay failed: %s\n", res.error.c_str());
    std::fputs("failing prefix:\n", stderr);
    std::fputs(hn::failing_prefix(parsed.events, res.error_event).c_str(), stderr);
    return 1;
  }
  return 0;
}

int run_stress_cmd(const hn::stress_options& opts, const std::string& stats_out) {
  const hn::stress_result res = hn::run_stress(opts);
  std::fputs(res.stats.to_text(true).c_str(), stdout);
  if (opts.kind == hn::stress_kind::larson && !res.generation_peaks.empty()) {
    std::string line = "generation_peaks=";
    for (std::size_t i = 0; i < res.generation_peaks.size(); ++i) {
      if (i != 0) line += ',';
      line += std::to_string(res.generation_peaks[i]);
    }
    line += '\n';
    std::fputs(line.c_str(), stdout);
  }
  if (!stats_out.empty() && !write_stats(stats_out, res.stats)) {
    std::fprintf(stderr, "cannot write stats file: %s\n", stats_out.c_str());
    return 2;
  }
  if (!res.ok) {
    std::fprintf(stderr, "stress failed: %s\n", res.error.c_str());
    return 1;
  }
  return 0;
}

int run_security_cmd(const std::string& policy, const std::string& scenario) {
  const oobheap::violation_policy pol = to_policy(policy);
  if (!scenario.empty()) {
    // single-scenario mode; under the abort policy the expected outcome of a
    // detecting scenario is process death, observed by the parent
    const hn::security_case c = hn::run_security_scenario(scenario, pol);
    std::printf("%s %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    return c.pass ? 0 : 1;
  }
  hn::security_options opts;
  opts.policy = pol;
  opts.self_path = self_path();
  const std::vector<hn::security_case> cases = hn::run_security_matrix(opts);
  std::size_t passed = 0;
  for (const hn::security_case& c : cases) {
    std::printf("%s %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    if (c.pass) ++passed;
  }
  std::printf("security: %zu/%zu scenarios passed\n", passed, cases.size());
  return passed == cases.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace replay, stress and security harness for the oobheap allocator"};
  app.require_subcommand(1);

  std::string policy = "report";
  std::string stats_out;

  auto* rep = app.add_subcommand("replay", "replay a trace file with differential checking");
  std::string trace_file;
  rep->add_option("file", trace_file, "trace file in the line grammar")->required();
  rep->add_option("--policy", policy, "violation policy")
      ->check(CLI::IsMember({"ignore", "report", "abort"}));
  rep->add_option("--stats-out", stats_out, "write the stats block (without wall time) here");

  auto* str = app.add_subcommand("stress", "run a randomized workload");
  hn::stress_options sopts;
  std::string kind;
  str->add_option("--kind", kind, "workload shape")
      ->required()
      ->check(CLI::IsMember({"churn", "larson", "mstress"}));
  str->add_option("--threads", sopts.threads, "worker threads");
  str->add_option("--iters", sopts.iters, "total operations across all threads");
  str->add_option("--min", sopts.min_size, "smallest request in bytes");
  str->add_option("--max", sopts.max_size, "largest request in bytes");
  str->add_option("--seed", sopts.seed, "seed fixing all randomness");
  str->add_option("--generations", sopts.generations, "thread respawn rounds (larson)");
  str->add_option("--slots", sopts.slots, "per-thread block slots");
  str->add_option("--handoff", sopts.handoff, "blocks left for the successor (larson)");
  str->add_option("--stats-out", stats_out, "write the stats block (without wall time) here");

  auto* sec = app.add_subcommand("security", "run the detection matrix");
  std::string scenario;
  sec->add_option("--policy", policy, "violation policy")
      ->check(CLI::IsMember({"ignore", "report", "abort"}));
  sec->add_option("--scenario", scenario, "run a single scenario in-process");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (rep->parsed()) return run_replay(trace_file, policy, stats_out);
  if (str->parsed()) {
    if (kind == "churn") sopts.kind = hn::stress_kind::churn;
    else if (kind == "larson") sopts.kind = hn::stress_kind::larson;
    else sopts.kind = hn::stress_kind::mstress;
    return run_stress_cmd(sopts, stats_out);
  }
  return run_security_cmd(policy, scenario);
}

#include "oobheap/harness/security.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <atomic>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

#include "oobheap/allocator.hpp"

extern char** environ;

namespace oobheap::harness {

namespace {

struct recorder {
  std::mutex mu;
  std::vector<violation> seen;

  static void hook(void* ctx, const violation& v) {
    auto* r = static_cast<recorder*>(ctx);
    std::lock_guard<std::mutex> g(r->mu);
    r->seen.push_back(v);
  }
};

struct phaser {
  std::atomic<int> phase{0};

  void reach(int v) {
    phase.store(v, std::memory_order_release);
    phase.notify_all();
  }
  void await(int v) {
    int cur = phase.load(std::memory_order_acquire);
    while (cur < v) {
      phase.wait(cur, std::memory_order_acquire);
      cur = phase.load(std::memory_order_acquire);
    }
  }
};

struct outcome {
  std::string setup_error;  // the attack could not even be staged
};

// stage on a victim thread, attack from the calling thread, then let the
// victim run a closing step (native free or drain) before it exits
void with_victim(allocator_instance& inst, std::size_t stake_size, void (*attack)(allocator_instance&, void*),
                 void (*finish)(allocator_instance&, void*)) {
  phaser ph;
  void* p = nullptr;
  std::thread victim([&] {
    p = inst.allocate(stake_size);
    ph.reach(1);
    ph.await(2);
    if (finish != nullptr) finish(inst, p);
  });
  ph.await(1);
  attack(inst, p);
  ph.reach(2);
  victim.join();
}

void finish_free(allocator_instance& inst, void* p) { inst.deallocate(p); }
void finish_drain(allocator_instance& inst, void*) { inst.drain_owned(); }

// --- double frees and invalid frees, all routes and both free paths ---

void sc_fixed_double_native(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(64);
  inst.deallocate(p);
  inst.deallocate(p);
}

void sc_fixed_double_remote(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 64,
      [](allocator_instance& a, void* p) {
        a.deallocate(p);
        a.deallocate(p);
      },
      finish_drain);
}

void sc_fixed_double_deferred(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 64, [](allocator_instance& a, void* p) { a.deallocate(p); }, finish_free);
}

void sc_fixed_invalid_interior(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(64);
  inst.deallocate(static_cast<std::byte*>(p) + 8);
  inst.deallocate(p);
}

void sc_fixed_invalid_remote(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 64,
      [](allocator_instance& a, void* p) { a.deallocate(static_cast<std::byte*>(p) + 8); },
      finish_free);
}

void sc_var_double_native(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(2000);
  inst.deallocate(p);
  inst.deallocate(p);
}

void sc_var_double_remote(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 2000,
      [](allocator_instance& a, void* p) {
        a.deallocate(p);
        a.deallocate(p);
      },
      finish_drain);
}

void sc_var_double_deferred(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 2000, [](allocator_instance& a, void* p) { a.deallocate(p); }, finish_free);
}

void sc_var_invalid_interior(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(2000);
  inst.deallocate(static_cast<std::byte*>(p) + 16);
  inst.deallocate(p);
}

void sc_var_invalid_remote(allocator_instance& inst, outcome&) {
  with_victim(
      inst, 2000,
      [](allocator_instance& a, void* p) { a.deallocate(static_cast<std::byte*>(p) + 16); },
      finish_free);
}

void sc_ext_double_native(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(200000);
  inst.deallocate(p);
  inst.deallocate(p);
}

void sc_ext_invalid_interior(allocator_instance& inst, outcome&) {
  void* p = inst.allocate(200000);
  inst.deallocate(static_cast<std::byte*>(p) + 4096);
  inst.deallocate(p);
}

void sc_unknown_invalid(allocator_instance& inst, outcome&) {
  alignas(16) static unsigned char never_allocated[64];
  inst.deallocate(never_allocated + 16);
}

// --- overflow isolation: payload writes past a block must never be able to
// reach allocator state, because there is none interleaved with payloads ---

void sc_overflow_fixed(allocator_instance& inst, outcome& out) {
  auto* p = static_cast<std::byte*>(inst.allocate(64));
  std::byte* hole[4];
  for (auto& h : hole) h = static_cast<std::byte*>(inst.allocate(64));
  auto* bystander = static_cast<std::byte*>(inst.allocate(64));
  for (int i = 0; i < 4; ++i) {
    if (hole[i] != p + 64 * (i + 1)) {
      out.setup_error = "fixed cells were not carved contiguously";
      return;
    }
  }
  if (bystander != p + 320) {
    out.setup_error = "bystander cell not where expected";
    return;
  }
  std::memset(bystander, 0x5A, 64);
  for (auto* h : hole) inst.deallocate(h);
  std::memset(p, 0xAA, 64 + 256);  // tramples the freed cells, nothing else
  if (const char* why = inst.audit()) {
    out.setup_error = std::string("audit after overflow: ") + why;
    return;
  }
  for (std::size_t i = 0; i < 64; ++i) {
    if (bystander[i] != std::byte{0x5A}) {
      out.setup_error = "bystander payload was damaged";
      return;
    }
  }
  for (auto& h : hole) h = static_cast<std::byte*>(inst.allocate(64));
  for (auto* h : hole) inst.deallocate(h);
  inst.deallocate(p);
  inst.deallocate(bystander);
}

void sc_overflow_var(allocator_instance& inst, outcome& out) {
  auto* a = static_cast<std::byte*>(inst.allocate(1000));  // rounds to 1008
  auto* b = static_cast<std::byte*>(inst.allocate(1000));
  auto* c = static_cast<std::byte*>(inst.allocate(1000));
  if (b != a + 1008 || c != b + 1008) {
    out.setup_error = "variable blocks were not carved contiguously";
    return;
  }
  std::memset(c, 0x5A, 1000);
  inst.deallocate(b);
  std::memset(a, 0xBB, 1008 + 256);  // runs 256 bytes into the freed hole
  if (const char* why = inst.audit()) {
    out.setup_error = std::string("audit after overflow: ") + why;
    return;
  }
  for (std::size_t i = 0; i < 1000; ++i) {
    if (c[i] != std::byte{0x5A}) {
      out.setup_error = "bystander payload was damaged";
      return;
    }
  }
  void* d = inst.allocate(1000);
  inst.deallocate(d);
  inst.deallocate(a);
  inst.deallocate(c);
}

void sc_overflow_ext(allocator_instance& inst, outcome& out) {
  constexpr std::size_t req = 131073;  // one byte over a page boundary: 4095 bytes of slack
  auto* p = static_cast<std::byte*>(inst.allocate(req));
  auto* q = static_cast<std::byte*>(inst.allocate(req));
  std::memset(q, 0x5A, 64);
  std::memset(p + req, 0xCC, 256);  // writes into p's own page slack
  if (const char* why = inst.audit()) {
    out.setup_error = std::string("audit after overflow: ") + why;
    return;
  }
  for (std::size_t i = 0; i < 64; ++i) {
    if (q[i] != std::byte{0x5A}) {
      out.setup_error = "bystander payload was damaged";
      return;
    }
  }
  inst.deallocate(p);
  inst.deallocate(q);
  void* r = inst.allocate(req);
  inst.deallocate(r);
}

struct expectation {
  bool detects;
  violation_kind kind;
  violation_context ctx;
  bool deferred;
};

struct scenario {
  const char* name;
  void (*run)(allocator_instance&, outcome&);
  expectation want;
};

constexpr expectation none{false, violation_kind::double_free, violation_context::unknown, false};
constexpr expectation dbl(violation_context c, bool def = false) {
  return {true, violation_kind::double_free, c, def};
}
constexpr expectation inv(violation_context c) {
  return {true, violation_kind::invalid_free, c, false};
}

const scenario kScenarios[] = {
    {"fixed-double-native", sc_fixed_double_native, dbl(violation_context::fixed)},
    {"fixed-double-remote", sc_fixed_double_remote, dbl(violation_context::fixed)},
    {"fixed-double-deferred", sc_fixed_double_deferred, dbl(violation_context::fixed, true)},
    {"fixed-invalid-interior", sc_fixed_invalid_interior, inv(violation_context::fixed)},
    {"fixed-invalid-remote", sc_fixed_invalid_remote, inv(violation_context::fixed)},
    {"var-double-native", sc_var_double_native, dbl(violation_context::variable)},
    {"var-double-remote", sc_var_double_remote, dbl(violation_context::variable)},
    {"var-double-deferred", sc_var_double_deferred, dbl(violation_context::variable, true)},
    {"var-invalid-interior", sc_var_invalid_interior, inv(violation_context::variable)},
    {"var-invalid-remote", sc_var_invalid_remote, inv(violation_context::variable)},
    {"ext-double-native", sc_ext_double_native, dbl(violation_context::external)},
    {"ext-invalid-interior", sc_ext_invalid_interior, inv(violation_context::unknown)},
    {"unknown-invalid-free", sc_unknown_invalid, inv(violation_context::unknown)},
    {"overflow-fixed-isolated", sc_overflow_fixed, none},
    {"overflow-var-isolated", sc_overflow_var, none},
    {"overflow-ext-isolated", sc_overflow_ext, none},
};

const char* kind_name(violation_kind k) {
  return k == violation_kind::double_free ? "double-free" : "invalid-free";
}
const char* ctx_name(violation_context c) {
  static constexpr const char* names[] = {"fixed", "variable", "external", "unknown"};
  return names[static_cast<int>(c)];
}

std::string describe(const violation& v) {
  std::string s = kind_name(v.kind);
  s += " ctx=";
  s += ctx_name(v.context);
  s += v.deferred ? " deferred=1" : " deferred=0";
  return s;
}

security_case judge(const scenario& sc, const recorder& rec, const outcome& out,
                    const char* audit_msg) {
  security_case c;
  c.name = sc.name;
  if (!out.setup_error.empty()) {
    c.detail = out.setup_error;
    return c;
  }
  if (audit_msg != nullptr) {
    c.detail = std::string("final audit failed: ") + audit_msg;
    return c;
  }
  if (!sc.want.detects) {
    if (!rec.seen.empty()) {
      c.detail = "unexpected diagnostic: " + describe(rec.seen.front());
      return c;
    }
    c.pass = true;
    c.detail = "no diagnostics, structures intact";
    return c;
  }
  if (rec.seen.size() != 1) {
    c.detail = "expected exactly one diagnostic, saw " + std::to_string(rec.seen.size());
    return c;
  }
  const violation& v = rec.seen.front();
  if (v.kind != sc.want.kind || v.context != sc.want.ctx || v.deferred != sc.want.deferred) {
    c.detail = "expected " + describe({sc.want.kind, sc.want.ctx, nullptr, sc.want.deferred}) +
               ", saw " + describe(v);
    return c;
  }
  c.pass = true;
  c.detail = describe(v);
  return c;
}

const scenario* find_scenario(const std::string& name) {
  for (const scenario& sc : kScenarios)
    if (name == sc.name) return &sc;
  return nullptr;
}

// spawns `self security --scenario NAME --policy abort` with stderr silenced;
// returns the wait status, or -1 with detail set
int spawn_abort_child(const std::string& self, const std::string& name, std::string& detail) {
  std::vector<std::string> args = {self, "security", "--scenario", name, "--policy", "abort"};
  std::vector<char*> argv;
  argv.reserve(args.size() + 1);
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, self.c_str(), &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  if (rc != 0) {
    detail = std::string("spawn failed: ") + std::strerror(rc);
    return -1;
  }
  int status = 0;
  if (::waitpid(pid, &status, 0) != pid) {
    detail = "waitpid failed";
    return -1;
  }
  return status;
}

}  // namespace

std::vector<std::string> security_scenario_names() {
  std::vector<std::string> names;
  for (const scenario& sc : kScenarios) names.emplace_back(sc.name);
  return names;
}

security_case run_security_scenario(const std::string& name, violation_policy policy) {
  const scenario* sc = find_scenario(name);
  if (sc == nullptr) {
    security_case c;
    c.name = name;
    c.detail = "unknown scenario";
    return c;
  }
  allocator_options aopts;
  aopts.policy = policy;
  allocator_instance inst(aopts);
  recorder rec;
  inst.set_violation_hook(&recorder::hook, &rec);
  outcome out;
  sc->run(inst, out);
  inst.adopt_all_orphans();
  return judge(*sc, rec, out, inst.audit());
}

std::vector<security_case> run_security_matrix(const security_options& opts) {
  std::vector<security_case> cases;
  for (const scenario& sc : kScenarios) {
    if (opts.policy == violation_policy::abort_process && sc.want.detects) {
      // a detecting scenario under the abort policy must kill the process; run
      // it in a child and require death by SIGABRT
      security_case c;
      c.name = sc.name;
      if (opts.self_path.empty()) {
        c.detail = "abort policy needs self_path to re-exec";
      } else {
        std::string detail;
        const int status = spawn_abort_child(opts.self_path, sc.name, detail);
        if (status < 0) {
          c.detail = detail;
        } else if (WIFSIGNALED(status) && WTERMSIG(status) == SIGABRT) {
          c.pass = true;
          c.detail = "child died on SIGABRT as required";
        } else if (WIFEXITED(status)) {
          c.detail = "child exited with status " + std::to_string(WEXITSTATUS(status)) +
                     " instead of aborting";
        } else {
          c.detail = "child died on unexpected signal";
        }
      }
      cases.push_back(std::move(c));
    } else {
      cases.push_back(run_security_scenario(sc.name, opts.policy));
    }
  }
  return cases;
}

}  // namespace oobheap::harness

#include "oobheap/harness/trace.hpp"

#include <charconv>
#include <random>

namespace oobheap::harness {

namespace {

// strict decimal: nonempty, digits only, no overflow
bool parse_u64(std::string_view tok, std::uint64_t& out) {
  if (tok.empty()) return false;
  const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc{} && end == tok.data() + tok.size();
}

// splits on single spaces; a leading, trailing or doubled space yields an
// empty token, which the caller rejects
std::size_t split(std::string_view line, std::string_view toks[], std::size_t cap) {
  std::size_t n = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ' ') {
      if (n == cap) return cap + 1;
      toks[n++] = line.substr(start, i - start);
      start = i + 1;
    }
  }
  return n;
}

}  // namespace

trace_parse_result parse_trace(std::string_view text) {
  trace_parse_result r;
  std::uint32_t line_no = 0;
  std::size_t pos = 0;
  auto fail = [&](std::string msg) {
    r.ok = false;
    r.error_line = line_no;
    r.error = std::move(msg);
    return r;
  };
  while (pos < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty() || line[0] == '#') continue;

    std::string_view toks[5];
    const std::size_t n = split(line, toks, 5);
    if (n > 4) return fail("too many fields");
    for (std::size_t i = 0; i < n; ++i)
      if (toks[i].empty()) return fail("empty field (check spacing)");
    if (toks[0].size() != 1) return fail("unknown event '" + std::string(toks[0]) + "'");

    trace_event ev{};
    ev.line = line_no;
    std::uint64_t a = 0, b = 0, c = 0;
    switch (toks[0][0]) {
      case 't':
        if (n != 2 || !parse_u64(toks[1], a)) return fail("expected: t <tid>");
        if (a > 0xFFFFFFFFu) return fail("thread id out of range");
        ev.op = trace_op::select_thread;
        ev.thread = static_cast<std::uint32_t>(a);
        break;
      case 'a':
        if (n != 3 || !parse_u64(toks[1], a) || !parse_u64(toks[2], b))
          return fail("expected: a <id> <size>");
        ev.op = trace_op::alloc;
        ev.id = a;
        ev.size = b;
        break;
      case 'f':
        if (n != 2 || !parse_u64(toks[1], a)) return fail("expected: f <id>");
        ev.op = trace_op::free_block;
        ev.id = a;
        break;
      case 'r':
        if (n != 3 || !parse_u64(toks[1], a) || !parse_u64(toks[2], b))
          return fail("expected: r <id> <size>");
        ev.op = trace_op::realloc_block;
        ev.id = a;
        ev.size = b;
        break;
      case 'z':
        if (n != 4 || !parse_u64(toks[1], a) || !parse_u64(toks[2], b) || !parse_u64(toks[3], c))
          return fail("expected: z <id> <count> <size>");
        ev.op = trace_op::zero_alloc;
        ev.id = a;
        ev.count = b;
        ev.size = c;
        break;
      default:
        return fail("unknown event '" + std::string(toks[0]) + "'");
    }
    r.events.push_back(ev);
  }
  return r;
}

std::string format_event(const trace_event& ev) {
  switch (ev.op) {
    case trace_op::select_thread:
      return "t " + std::to_string(ev.thread);
    case trace_op::alloc:
      return "a " + std::to_string(ev.id) + " " + std::to_string(ev.size);
    case trace_op::free_block:
      return "f " + std::to_string(ev.id);
    case trace_op::realloc_block:
      return "r " + std::to_string(ev.id) + " " + std::to_string(ev.size);
    case trace_op::zero_alloc:
      return "z " + std::to_string(ev.id) + " " + std::to_string(ev.count) + " " +
             std::to_string(ev.size);
  }
  return {};
}

// a power-of-two bucket first, then a uniform offset within it; no floating
// point so every platform draws the same sequence
std::size_t random_size(std::mt19937_64& rng, std::size_t min_size, std::size_t max_size) {
  if (min_size >= max_size) return min_size;
  int lo = 0, hi = 0;
  while ((std::size_t{1} << (lo + 1)) <= min_size) ++lo;
  while ((std::size_t{1} << (hi + 1)) <= max_size) ++hi;  // highest bucket base <= max
  const int bucket = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  std::size_t b_lo = std::size_t{1} << bucket;
  std::size_t b_hi = bucket + 1 < 64 ? (std::size_t{1} << (bucket + 1)) - 1 : max_size;
  if (b_lo < min_size) b_lo = min_size;
  if (b_hi > max_size) b_hi = max_size;
  return b_lo + rng() % (b_hi - b_lo + 1);
}

std::string generate_trace(std::uint64_t seed, std::uint32_t events, std::uint32_t threads,
                           std::size_t min_size, std::size_t max_size) {
  if (threads == 0) threads = 1;
  if (min_size == 0) min_size = 1;
  std::mt19937_64 rng(seed);
  std::string out;
  out.reserve(std::size_t{events} * 12);

  struct live_block {
    std::uint64_t id;
    std::uint32_t owner;
  };
  std::vector<live_block> live;
  std::uint64_t next_id = 1;
  std::uint32_t current = 0;
  std::uint32_t run_left = 0;
  std::uint32_t emitted = 0;
  constexpr std::size_t kLiveCap = 8192;

  auto emit = [&](const std::string& s) {
    out += s;
    out += '\n';
    ++emitted;
  };

  while (emitted < events) {
    if (threads > 1 && run_left == 0) {
      const auto pick = static_cast<std::uint32_t>(rng() % threads);
      run_left = 8 + static_cast<std::uint32_t>(rng() % 56);
      if (pick != current) {
        current = pick;
        emit("t " + std::to_string(current));
        continue;
      }
    }
    if (run_left > 0) --run_left;

    const std::uint64_t roll = rng() % 100;
    const bool must_alloc = live.empty();
    const bool must_free = live.size() >= kLiveCap;
    if (!must_free && (must_alloc || roll < 45)) {
      const std::uint64_t id = next_id++;
      emit("a " + std::to_string(id) + " " + std::to_string(random_size(rng, min_size, max_size)));
      live.push_back({id, current});
    } else if (!must_free && roll < 50) {
      const std::uint64_t id = next_id++;
      const std::size_t total = random_size(rng, min_size, max_size);
      const std::uint64_t count = 1 + rng() % 4;
      std::uint64_t unit = total / count;
      if (unit == 0) unit = 1;
      emit("z " + std::to_string(id) + " " + std::to_string(count) + " " + std::to_string(unit));
      live.push_back({id, current});
    } else if (!must_free && roll < 60) {
      // realloc one of the current thread's own blocks, if it has any
      std::size_t found = live.size();
      for (int probe = 0; probe < 16; ++probe) {
        const std::size_t i = rng() % live.size();
        if (live[i].owner == current) {
          found = i;
          break;
        }
      }
      if (found == live.size()) {
        const std::uint64_t id = next_id++;
        emit("a " + std::to_string(id) + " " +
             std::to_string(random_size(rng, min_size, max_size)));
        live.push_back({id, current});
      } else {
        emit("r " + std::to_string(live[found].id) + " " +
             std::to_string(random_size(rng, min_size, max_size)));
        live[found].owner = current;
      }
    } else {
      const std::size_t i = rng() % live.size();
      emit("f " + std::to_string(live[i].id));
      live[i] = live.back();
      live.pop_back();
    }
  }
  return out;
}

}  // namespace oobheap::harness

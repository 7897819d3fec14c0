#include "oobheap/vbin.hpp"

#include <cassert>
#include <cstring>

namespace oobheap::vbin {

namespace {

std::uint32_t ld(const bin_header& b, std::uint32_t i) noexcept { return b.cells[i].load(); }
void st(bin_header& b, std::uint32_t i, std::uint32_t w) noexcept { b.cells[i].store(w); }

std::size_t start_of(const bin_header& b, std::uint32_t head) noexcept {
  return (static_cast<std::size_t>(head) << b.shift) + unpack_cell(ld(b, head)).offset * kMinFixedCell;
}

// ---- free list (index kEndIndex doubles as the sentinel node) -------------

std::uint32_t fl_next(const bin_header& b, std::uint32_t i) noexcept { return unpack_cell(ld(b, i)).fw; }
std::uint32_t fl_prev(const bin_header& b, std::uint32_t i) noexcept { return unpack_cell(ld(b, i)).bw; }

void fl_link(bin_header& b, std::uint32_t a, std::uint32_t c) noexcept {
  auto fa = unpack_cell(ld(b, a));
  fa.fw = c;
  st(b, a, pack_cell(fa));
  auto fc = unpack_cell(ld(b, c));
  fc.bw = a;
  st(b, c, pack_cell(fc));
}

void fix_secondary(bin_header& b) noexcept {
  const std::uint32_t head = fl_next(b, kEndIndex);
  const std::uint32_t tail = fl_prev(b, kEndIndex);
  b.secondary() = head != tail ? tail : kEndIndex;
}

void fl_remove(bin_header& b, std::uint32_t h) noexcept {
  fl_link(b, fl_prev(b, h), fl_next(b, h));
  fix_secondary(b);
}

void fl_insert(bin_header& b, std::uint32_t h, std::size_t size) noexcept {
  std::uint32_t cur = fl_next(b, kEndIndex);
  while (cur != kEndIndex && block_bytes(b, cur) >= size) cur = fl_next(b, cur);
  fl_link(b, fl_prev(b, cur), h);
  fl_link(b, h, cur);
  fix_secondary(b);
}

}  // namespace

void init(bin_header& b) noexcept {
  std::memset(static_cast<void*>(b.cells), 0, kCellsPerBin * sizeof(vcell));
  st(b, 0, make_free_head(kEndIndex, kEndIndex, 0));
  st(b, kEndIndex, make_sentinel(0, 0));
  b.secondary() = kEndIndex;
  b.free_head = 0;
}

std::uint32_t spatial_next(const bin_header& b, std::uint32_t head) noexcept {
  const auto f = unpack_cell(ld(b, head));
  if (f.tag == cell_tag::used_head) return f.fw;
  assert(f.tag == cell_tag::free_head);
  const auto nb = unpack_cell(ld(b, head + 1));
  switch (nb.tag) {
    case cell_tag::used_head:
      return head + 1;
    case cell_tag::reference:
      if ((nb.offset & kRefBoth) == kRefBoth) return kEndIndex;  // sentinel: span end
      assert((nb.offset & kRefForward) != 0);
      return nb.fw;
    default:
      return kEndIndex;  // unused neighbour: block runs to span end
  }
}

std::uint32_t spatial_prev(const bin_header& b, std::uint32_t head) noexcept {
  const auto f = unpack_cell(ld(b, head));
  if (f.tag == cell_tag::used_head) return f.bw;
  assert(f.tag == cell_tag::free_head);
  if (head == 0) return kEndIndex;
  const auto nb = unpack_cell(ld(b, head - 1));
  if (nb.tag == cell_tag::used_head || nb.tag == cell_tag::free_head) return head - 1;
  assert(nb.tag == cell_tag::reference && (nb.offset & kRefBackward) != 0);
  return nb.bw;
}

std::size_t block_bytes(const bin_header& b, std::uint32_t head) noexcept {
  const std::uint32_t u = spatial_next(b, head);
  const std::size_t end = u == kEndIndex ? b.span_bytes() : start_of(b, u);
  return end - start_of(b, head);
}

std::size_t freelist_head_size(const bin_header& b) noexcept {
  const std::uint32_t h = fl_next(b, kEndIndex);
  return h == kEndIndex ? 0 : block_bytes(b, h);
}

std::byte* cell_block_ptr(const bin_header& b, std::uint32_t ci) noexcept {
  return b.base + start_of(b, ci);
}

std::size_t live_block_bytes(const bin_header& b, const std::byte* p) noexcept {
  const auto off = static_cast<std::size_t>(p - b.base);
  const auto ci = static_cast<std::uint32_t>(off >> b.shift);
  if (ci >= kEndIndex) return 0;
  const auto f = unpack_cell(ld(b, ci));
  if (f.tag != cell_tag::used_head) return 0;
  if (start_of(b, ci) != off) return 0;
  return block_bytes(b, ci);
}

std::byte* allocate(bin_header& b, std::size_t rounded) noexcept {
  assert(rounded % kMinFixedCell == 0 && rounded > b.cell_size());

  // Best fit: the last list entry whose size still satisfies the request.
  // The secondary head skips the large end of the list when it already fits.
  std::uint32_t cur;
  const std::uint32_t sec = b.secondary();
  if (sec != kEndIndex && block_bytes(b, sec) >= rounded) {
    cur = sec;
  } else {
    cur = fl_next(b, kEndIndex);
    if (cur == kEndIndex || block_bytes(b, cur) < rounded) return nullptr;
  }
  for (std::uint32_t nx = fl_next(b, cur); nx != kEndIndex && block_bytes(b, nx) >= rounded;
       nx = fl_next(b, cur))
    cur = nx;

  const std::uint32_t h = cur;
  const auto hf = unpack_cell(ld(b, h));
  const std::size_t s = start_of(b, h);
  const std::uint32_t u = spatial_next(b, h);
  const std::uint32_t p = spatial_prev(b, h);
  const std::size_t e = u == kEndIndex ? b.span_bytes() : start_of(b, u);

  fl_remove(b, h);
  if (h > 0 && tag_of(ld(b, h - 1)) == cell_tag::reference) st(b, h - 1, 0);
  if (h + 1 < kEndIndex && tag_of(ld(b, h + 1)) == cell_tag::reference) st(b, h + 1, 0);

  const std::size_t rs = s + rounded;  // remainder start
  const auto rcell = static_cast<std::uint32_t>(rs >> b.shift);
  bool split = rs != e;
  if (split && (rcell == kEndIndex || (u != kEndIndex && rcell == u))) split = false;

  st(b, h, make_used_head(split ? rcell : u, p, hf.offset));

  if (split) {
    const auto roff = static_cast<std::uint32_t>((rs - (static_cast<std::size_t>(rcell) << b.shift)) /
                                                 kMinFixedCell);
    st(b, rcell, make_free_head(kEndIndex, kEndIndex, roff));
    if (rcell - 1 != h) st(b, rcell - 1, make_ref_backward(h));
    if (u != kEndIndex) {
      if (u > rcell + 1) st(b, rcell + 1, make_ref_forward(u));
      auto uf = unpack_cell(ld(b, u));
      uf.bw = rcell;
      st(b, u, pack_cell(uf));
    }
    fl_insert(b, rcell, e - rs);
  }
  return b.base + s;
}

free_status release(bin_header& b, std::uint32_t ci, std::size_t byte_off) noexcept {
  if (ci >= kEndIndex) return free_status::invalid_free;
  const auto cf = unpack_cell(ld(b, ci));
  const std::size_t cell_off = cf.offset * kMinFixedCell;
  if (cf.tag == cell_tag::free_head && cell_off == byte_off) return free_status::double_free;
  if (cf.tag != cell_tag::used_head || cell_off != byte_off) return free_status::invalid_free;

  const std::size_t span = b.span_bytes();
  const std::size_t s = start_of(b, ci);
  const std::uint32_t u = cf.fw;
  const std::uint32_t p = cf.bw;
  const std::size_t e = u == kEndIndex ? span : start_of(b, u);

  const bool p_free = p != kEndIndex && tag_of(ld(b, p)) == cell_tag::free_head;
  const bool u_free = u != kEndIndex && tag_of(ld(b, u)) == cell_tag::free_head;

  std::uint32_t n_final = u;
  std::size_t e_final = e;
  if (u_free) {
    n_final = spatial_next(b, u);
    e_final = n_final == kEndIndex ? span : start_of(b, n_final);
    fl_remove(b, u);
    if (u + 1 < kEndIndex && tag_of(ld(b, u + 1)) == cell_tag::reference) st(b, u + 1, 0);
    if (u - 1 > ci) st(b, u - 1, 0);  // backward reference for the dissolved head
    st(b, u, 0);
  }

  std::uint32_t m;
  std::size_t s_final;
  if (p_free) {
    m = p;
    s_final = start_of(b, p);
    fl_remove(b, p);
    if (p + 1 != ci && tag_of(ld(b, p + 1)) == cell_tag::reference) st(b, p + 1, 0);
    st(b, ci, 0);  // this head dissolves into the predecessor
  } else {
    m = ci;
    s_final = s;
    st(b, ci, make_free_head(kEndIndex, kEndIndex, cf.offset));
    if (p != kEndIndex && ci - 1 != p) st(b, ci - 1, make_ref_backward(p));
  }

  if (m + 1 < kEndIndex && n_final != kEndIndex && n_final > m + 1)
    st(b, m + 1, make_ref_forward(n_final));
  if (n_final != kEndIndex) {
    auto nf = unpack_cell(ld(b, n_final));
    nf.bw = m;
    st(b, n_final, pack_cell(nf));
  }

  fl_insert(b, m, e_final - s_final);
  return free_status::freed;
}

// ---- structural audit -------------------------------------------------------

namespace {
struct head_info {
  std::uint32_t cell;
  std::uint32_t offset;  // granules
  bool used;
  std::size_t start;
  std::size_t size;
};
}  // namespace

const char* audit(const bin_header& b) noexcept {
  if (!b.cells) return "no cell array";
  if (!is_sentinel(ld(b, kEndIndex))) return "sentinel cell corrupt";

  // spatial pass: walk heads from cell 0, rebuilding the block partition
  head_info heads[kCellsPerBin];
  std::uint32_t n = 0;
  std::uint32_t cur = 0;
  std::size_t pos = 0;
  const std::size_t span = b.span_bytes();
  while (true) {
    if (n >= kCellsPerBin) return "spatial walk does not terminate";
    const auto f = unpack_cell(ld(b, cur));
    if (f.tag != cell_tag::used_head && f.tag != cell_tag::free_head)
      return "spatial walk hit a non-head cell";
    const std::size_t start = start_of(b, cur);
    if (start != pos) return "blocks do not partition the span";
    std::uint32_t next;
    if (f.tag == cell_tag::used_head) {
      next = f.fw;
    } else {
      const auto nb = unpack_cell(ld(b, cur + 1));
      if (nb.tag == cell_tag::used_head) {
        next = cur + 1;
      } else if (nb.tag == cell_tag::reference) {
        if ((nb.offset & kRefBoth) == kRefBoth) {
          if (cur + 1 != kEndIndex) return "sentinel-shaped reference inside the span";
          next = kEndIndex;
        } else if (nb.offset & kRefForward) {
          next = nb.fw;
        } else {
          return "backward reference after a free head";
        }
      } else {
        next = kEndIndex;
      }
    }
    const std::size_t end = next == kEndIndex ? span : start_of(b, next);
    if (end <= start || (end - start) % kMinFixedCell != 0) return "bad block extent";
    heads[n++] = {cur, f.offset, f.tag == cell_tag::used_head, start, end - start};
    if (next == kEndIndex) break;
    if (next <= cur || next >= kEndIndex) return "spatial next out of order";
    pos = end;
    cur = next;
  }

  // per-block checks and the expected cell image (free-head links aside)
  std::uint32_t expected[kCellsPerBin] = {};
  bool is_free_head[kCellsPerBin] = {};
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& hd = heads[i];
    const std::uint32_t prev = i == 0 ? kEndIndex : heads[i - 1].cell;
    const std::uint32_t next = i + 1 == n ? kEndIndex : heads[i + 1].cell;
    if (hd.used) {
      if (hd.size <= b.cell_size()) return "used block not larger than a cell";
      expected[hd.cell] = make_used_head(next, prev, hd.offset);
    } else {
      if (i > 0 && !heads[i - 1].used) return "adjacent free blocks";
      is_free_head[hd.cell] = true;
      expected[hd.cell] = make_free_head(0, 0, hd.offset);  // links checked via the list
      if (prev != kEndIndex && prev < hd.cell - 1) expected[hd.cell - 1] = make_ref_backward(prev);
      if (next != kEndIndex && next > hd.cell + 1) expected[hd.cell + 1] = make_ref_forward(next);
    }
  }
  for (std::uint32_t i = 0; i < kEndIndex; ++i) {
    const std::uint32_t actual = ld(b, i);
    if (is_free_head[i]) {
      const auto f = unpack_cell(actual);
      if (f.tag != cell_tag::free_head || f.offset != unpack_cell(expected[i]).offset)
        return "free head cell mismatch";
    } else if (actual != expected[i]) {
      return "cell image mismatch";
    }
  }

  // free-list pass: doubly linked through the sentinel, non-increasing sizes,
  // covering exactly the free heads
  std::uint32_t seen = 0;
  std::size_t prev_size = ~std::size_t{0};
  std::uint32_t prev_idx = kEndIndex;
  std::uint32_t list_len = 0;
  std::uint32_t sec_pos = kEndIndex;
  for (std::uint32_t it = fl_next(b, kEndIndex); it != kEndIndex; it = fl_next(b, it)) {
    if (++seen > kCellsPerBin) return "free list does not terminate";
    if (it >= kEndIndex || !is_free_head[it]) return "free list entry is not a free head";
    if (fl_prev(b, it) != prev_idx) return "free list back link broken";
    const std::size_t sz = block_bytes(b, it);
    if (sz > prev_size) return "free list size order violated";
    if (it == b.secondary()) sec_pos = list_len;
    prev_size = sz;
    prev_idx = it;
    ++list_len;
  }
  if (fl_prev(b, kEndIndex) != prev_idx) return "free list tail link broken";
  std::uint32_t free_heads = 0;
  for (bool ish : is_free_head) free_heads += ish;
  if (free_heads != list_len) return "free list does not cover all free heads";

  const std::uint32_t sec = b.secondary();
  if (list_len < 2) {
    if (sec != kEndIndex) return "secondary head set on a short list";
  } else {
    if (sec_pos == kEndIndex) return "secondary head is not a list member";
    if (sec_pos < list_len / 2) return "secondary head in the upper half of the list";
  }
  return nullptr;
}

}  // namespace oobheap::vbin

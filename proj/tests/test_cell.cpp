#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oobheap/cell.hpp"

using namespace oobheap;

TEST_CASE("field packing puts every field in its lane") {
  CHECK(pack_cell({cell_tag::unused, 0, 0, 0}) == 0u);
  CHECK(pack_cell({cell_tag::used_head, 0, 0, 0}) == 1u);
  CHECK(pack_cell({cell_tag::free_head, 0, 0, 0}) == 2u);
  CHECK(pack_cell({cell_tag::reference, 0, 0, 0}) == 3u);
  CHECK(pack_cell({cell_tag::unused, 1023, 0, 0}) == 0xFFCu);
  CHECK(pack_cell({cell_tag::unused, 0, 1023, 0}) == 0x3FF000u);
  CHECK(pack_cell({cell_tag::unused, 0, 0, 1023}) == 0xFFC00000u);
  CHECK(pack_cell({cell_tag::used_head, 1023, 1023, 1023}) == 0xFFFFFFFDu);
}

TEST_CASE("constructors encode the documented shapes") {
  CHECK(unpack_cell(make_used_head(5, 3, 7)) == cell_fields{cell_tag::used_head, 5, 3, 7});
  CHECK(unpack_cell(make_free_head(1023, 1023, 0)) == cell_fields{cell_tag::free_head, 1023, 1023, 0});

  auto fwd = unpack_cell(make_ref_forward(130));
  CHECK(fwd.tag == cell_tag::reference);
  CHECK(fwd.fw == 130);
  CHECK(fwd.bw == 0);
  CHECK(fwd.offset == kRefForward);

  auto bwd = unpack_cell(make_ref_backward(122));
  CHECK(bwd.tag == cell_tag::reference);
  CHECK(bwd.bw == 122);
  CHECK(bwd.fw == 0);
  CHECK(bwd.offset == kRefBackward);

  auto anchor = unpack_cell(make_sentinel(9, 4));
  CHECK(anchor.offset == kRefBoth);
  CHECK(anchor.fw == 9);
  CHECK(anchor.bw == 4);
  CHECK(is_sentinel(make_sentinel(0, 0)));
  CHECK(!is_sentinel(make_ref_forward(1)));
  CHECK(!is_sentinel(make_ref_backward(1)));
  CHECK(!is_sentinel(make_free_head(0, 0, kRefBoth)));  // tag disambiguates
}

TEST_CASE("pack/unpack round-trips a million random tag-valid words") {
  std::mt19937_64 rng(0x0c311);
  auto idx = [&] { return static_cast<std::uint32_t>(rng() % 1024); };
  int checked = 0;
  for (int i = 0; i < 1'000'000; ++i) {
    cell_fields f{};
    switch (i & 3) {
      case 0: f = {cell_tag::unused, 0, 0, 0}; break;
      case 1: f = {cell_tag::used_head, idx(), idx(), idx()}; break;
      case 2: f = {cell_tag::free_head, idx(), idx(), idx()}; break;
      case 3:
        switch (rng() % 3) {
          case 0: f = {cell_tag::reference, idx(), 0, kRefForward}; break;
          case 1: f = {cell_tag::reference, 0, idx(), kRefBackward}; break;
          default: f = {cell_tag::reference, idx(), idx(), kRefBoth}; break;
        }
        break;
    }
    std::uint32_t w = pack_cell(f);
    if (unpack_cell(w) == f && pack_cell(unpack_cell(w)) == w) ++checked;
  }
  CHECK(checked == 1'000'000);
}

TEST_CASE("unpack tolerates arbitrary words without losing bits") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100000; ++i) {
    auto w = static_cast<std::uint32_t>(rng());
    CHECK(pack_cell(unpack_cell(w)) == w);
  }
}

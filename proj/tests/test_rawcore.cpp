#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "rawvsr/rawcore.h"

using namespace rawvsr;

namespace {

RawBayerFrame random_frame(Rng& rng, int h, int w, BayerPhase phase) {
  RawBayerFrame f;
  f.data = Image(1, h, w);
  f.phase = phase;
  f.bit_depth = 16;
  f.black_level = 0.f;
  f.white_level = 65535.f;
  for (auto& v : f.data.data) v = float(rng.uniform_int(0, 65535));
  return f;
}

const BayerPhase kPhases[] = {BayerPhase::RGGB, BayerPhase::BGGR, BayerPhase::GRBG,
                              BayerPhase::GBRG};

}  // namespace

TEST_CASE("phase strings round trip") {
  for (BayerPhase p : kPhases) CHECK(phase_from_string(to_string(p)) == p);
  CHECK_THROWS_AS(phase_from_string("XYZW"), MetadataError);
}

TEST_CASE("phase sites cover the 2x2 tile") {
  for (BayerPhase p : kPhases) {
    const auto s = phase_sites(p);
    bool seen[2][2] = {};
    for (const auto& rc : s) {
      CHECK(rc[0] >= 0);
      CHECK(rc[0] <= 1);
      CHECK(rc[1] >= 0);
      CHECK(rc[1] <= 1);
      seen[rc[0]][rc[1]] = true;
    }
    CHECK(seen[0][0]);
    CHECK(seen[0][1]);
    CHECK(seen[1][0]);
    CHECK(seen[1][1]);
  }
  // RGGB: R top-left, B bottom-right, G1 on the R row.
  const auto s = phase_sites(BayerPhase::RGGB);
  CHECK(s[0] == std::array<int, 2>{0, 0});
  CHECK(s[1] == std::array<int, 2>{0, 1});
  CHECK(s[2] == std::array<int, 2>{1, 0});
  CHECK(s[3] == std::array<int, 2>{1, 1});
  const auto b = phase_sites(BayerPhase::BGGR);
  CHECK(b[0] == std::array<int, 2>{1, 1});
  CHECK(b[3] == std::array<int, 2>{0, 0});
}

TEST_CASE("pack/unpack round trips exactly") {
  Rng rng(42);
  for (int trial = 0; trial < 24; ++trial) {
    const int h = 2 * rng.uniform_int(2, 20);
    const int w = 2 * rng.uniform_int(2, 20);
    const BayerPhase p = kPhases[trial % 4];
    const RawBayerFrame f = random_frame(rng, h, w, p);
    const PackedRawFrame packed = pack_bayer(f);
    CHECK(packed.planes.channels == 4);
    CHECK(packed.planes.height == h / 2);
    CHECK(packed.planes.width == w / 2);
    const RawBayerFrame back = unpack_bayer(packed);
    REQUIRE(back.data.same_shape(f.data));
    CHECK(back.phase == f.phase);
    for (size_t i = 0; i < f.data.data.size(); ++i) CHECK(back.data.data[i] == f.data.data[i]);
  }
}

TEST_CASE("packed planes pick the documented sites") {
  RawBayerFrame f;
  f.data = Image(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) f.data.at(0, y, x) = float(10 * y + x);
  f.phase = BayerPhase::RGGB;
  const PackedRawFrame p = pack_bayer(f);
  // R = even rows/cols, G1 = even row, odd col, G2 = odd row, even col, B = odd/odd.
  CHECK(p.planes.at(0, 0, 0) == 0.f);
  CHECK(p.planes.at(1, 0, 0) == 1.f);
  CHECK(p.planes.at(2, 0, 0) == 10.f);
  CHECK(p.planes.at(3, 0, 0) == 11.f);
  CHECK(p.planes.at(0, 1, 1) == 22.f);
  CHECK(p.planes.at(3, 1, 1) == 33.f);
}

TEST_CASE("pack rejects odd mosaics") {
  Rng rng(1);
  RawBayerFrame f = random_frame(rng, 6, 6, BayerPhase::RGGB);
  f.data = Image(1, 5, 6);
  CHECK_THROWS_AS(pack_bayer(f), ShapeError);
}

TEST_CASE("normalize maps counts into [0,1] and counts clamps") {
  RawBayerFrame f;
  f.data = Image(1, 2, 4);
  f.phase = BayerPhase::RGGB;
  f.bit_depth = 12;
  f.black_level = 64.f;
  f.white_level = 1023.f;
  f.data.data = {64.f, 1023.f, 543.5f, 0.f, 2000.f, 100.f, 64.f, 1023.f};
  size_t clamped = 0;
  const RawBayerFrame n = normalize_raw(f, &clamped);
  CHECK(n.normalized);
  CHECK(clamped == 2);  // 0 below black, 2000 above white
  CHECK(n.data.data[0] == doctest::Approx(0.0));
  CHECK(n.data.data[1] == doctest::Approx(1.0));
  CHECK(n.data.data[2] == doctest::Approx((543.5 - 64.0) / (1023.0 - 64.0)));
  CHECK(n.data.data[3] == doctest::Approx(0.0));
  CHECK(n.data.data[4] == doctest::Approx(1.0));
  for (float v : n.data.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("normalize rejects inverted levels") {
  Rng rng(2);
  RawBayerFrame f = random_frame(rng, 4, 4, BayerPhase::RGGB);
  f.black_level = 100.f;
  f.white_level = 100.f;
  CHECK_THROWS_AS(normalize_raw(f), MetadataError);
}

TEST_CASE("phase-safe crop keeps the phase") {
  Rng rng(3);
  const RawBayerFrame f = random_frame(rng, 16, 20, BayerPhase::GRBG);
  const RawBayerFrame c = crop_phase_safe(f, 4, 6, 8, 6);
  CHECK(c.phase == f.phase);
  CHECK(c.height() == 6);
  CHECK(c.width() == 8);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(c.data.at(0, y, x) == f.data.at(0, y + 6, x + 4));
}

TEST_CASE("phase-safe crop rejects odd geometry") {
  Rng rng(4);
  const RawBayerFrame f = random_frame(rng, 16, 16, BayerPhase::RGGB);
  CHECK_THROWS_AS(crop_phase_safe(f, 1, 0, 4, 4), ShapeError);
  CHECK_THROWS_AS(crop_phase_safe(f, 0, 3, 4, 4), ShapeError);
  CHECK_THROWS_AS(crop_phase_safe(f, 0, 0, 5, 4), ShapeError);
  CHECK_THROWS_AS(crop_phase_safe(f, 0, 0, 4, 5), ShapeError);
}

TEST_CASE("phase-safe crop rejects out-of-bounds windows") {
  Rng rng(5);
  const RawBayerFrame f = random_frame(rng, 8, 8, BayerPhase::RGGB);
  CHECK_THROWS_AS(crop_phase_safe(f, 6, 0, 4, 4), BoundsError);
  CHECK_THROWS_AS(crop_phase_safe(f, 0, 6, 4, 4), BoundsError);
}

TEST_CASE("crop then pack commutes with pack then crop") {
  Rng rng(6);
  const RawBayerFrame f = random_frame(rng, 32, 32, BayerPhase::RGGB);
  const RawBayerFrame c = crop_phase_safe(f, 8, 4, 16, 12);
  const PackedRawFrame pc = pack_bayer(c);
  const PackedRawFrame pf = pack_bayer(f);
  for (int ch = 0; ch < 4; ++ch)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x)
        CHECK(pc.planes.at(ch, y, x) == pf.planes.at(ch, y + 2, x + 4));
}

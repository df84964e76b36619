#include "rawvsr/rawcore.h"

#include <algorithm>

namespace rawvsr {

std::string to_string(BayerPhase p) {
  switch (p) {
    case BayerPhase::RGGB: return "RGGB";
    case BayerPhase::BGGR: return "BGGR";
    case BayerPhase::GRBG: return "GRBG";
    case BayerPhase::GBRG: return "GBRG";
  }
  return "RGGB";
}

BayerPhase phase_from_string(const std::string& s) {
  if (s == "RGGB") return BayerPhase::RGGB;
  if (s == "BGGR") return BayerPhase::BGGR;
  if (s == "GRBG") return BayerPhase::GRBG;
  if (s == "GBRG") return BayerPhase::GBRG;
  throw MetadataError("unknown Bayer phase: " + s);
}

std::array<std::array<int, 2>, 4> phase_sites(BayerPhase p) {
  switch (p) {
    case BayerPhase::RGGB: return {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    case BayerPhase::BGGR: return {{{1, 1}, {1, 0}, {0, 1}, {0, 0}}};
    case BayerPhase::GRBG: return {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}};
    case BayerPhase::GBRG: return {{{1, 0}, {1, 1}, {0, 0}, {0, 1}}};
  }
  return {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
}

void RawBayerFrame::validate() const {
  if (data.channels != 1) throw ShapeError("mosaic must have one channel");
  if (!is_even(data.height) || !is_even(data.width))
    throw ShapeError("mosaic dimensions must be even");
  if (white_level <= black_level)
    throw MetadataError("white level must exceed black level");
}

RawBayerFrame normalize_raw(const RawBayerFrame& f, size_t* clamped_count) {
  f.validate();
  if (f.normalized) {
    if (clamped_count) *clamped_count = 0;
    return f;
  }
  RawBayerFrame out = f;
  const float range = f.white_level - f.black_level;
  size_t clamped = 0;
  for (auto& v : out.data.data) {
    const float t = (v - f.black_level) / range;
    const float c = std::clamp(t, 0.f, 1.f);
    if (c != t) ++clamped;
    v = c;
  }
  out.normalized = true;
  if (clamped_count) *clamped_count = clamped;
  return out;
}

PackedRawFrame pack_bayer(const RawBayerFrame& f) {
  f.validate();
  const auto sites = phase_sites(f.phase);
  const int ph = f.height() / 2, pw = f.width() / 2;
  PackedRawFrame out;
  out.planes = Image(4, ph, pw);
  out.phase = f.phase;
  out.bit_depth = f.bit_depth;
  out.black_level = f.black_level;
  out.white_level = f.white_level;
  out.normalized = f.normalized;
  for (int ch = 0; ch < 4; ++ch) {
    const int dy = sites[ch][0], dx = sites[ch][1];
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        out.planes.at(ch, y, x) = f.data.at(0, 2 * y + dy, 2 * x + dx);
  }
  return out;
}

RawBayerFrame unpack_bayer(const PackedRawFrame& p) {
  if (p.planes.channels != 4) throw ShapeError("packed frame must have four planes");
  const auto sites = phase_sites(p.phase);
  RawBayerFrame out;
  out.data = Image(1, p.height() * 2, p.width() * 2);
  out.phase = p.phase;
  out.bit_depth = p.bit_depth;
  out.black_level = p.black_level;
  out.white_level = p.white_level;
  out.normalized = p.normalized;
  for (int ch = 0; ch < 4; ++ch) {
    const int dy = sites[ch][0], dx = sites[ch][1];
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x)
        out.data.at(0, 2 * y + dy, 2 * x + dx) = p.planes.at(ch, y, x);
  }
  return out;
}

RawBayerFrame crop_phase_safe(const RawBayerFrame& f, int x0, int y0, int w, int h) {
  if (!is_even(x0) || !is_even(y0) || !is_even(w) || !is_even(h))
    throw ShapeError("phase-safe crop needs even origin and extent");
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > f.width() || y0 + h > f.height())
    throw BoundsError("crop outside mosaic");
  RawBayerFrame out = f;
  out.data = crop(f.data, x0, y0, w, h);
  return out;
}

}  // namespace rawvsr

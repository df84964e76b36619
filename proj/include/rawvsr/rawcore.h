#pragma once

#include <array>
#include <string>

#include "rawvsr/image.h"

namespace rawvsr {

enum class BayerPhase { RGGB, BGGR, GRBG, GBRG };

std::string to_string(BayerPhase p);
BayerPhase phase_from_string(const std::string& s);

/// (row, col) inside the 2x2 tile for each packed channel, order (R, G1, G2, B).
/// G1 is the green sharing a row with R, G2 the green sharing a row with B.
std::array<std::array<int, 2>, 4> phase_sites(BayerPhase p);

/// Single-plane color-filter-array mosaic. `data` holds sensor counts until
/// normalize_raw() maps them to [0,1] and sets `normalized`.
struct RawBayerFrame {
  Image data;  // 1 channel
  BayerPhase phase = BayerPhase::RGGB;
  int bit_depth = 16;
  float black_level = 0.f;
  float white_level = 65535.f;
  bool normalized = false;

  int height() const { return data.height; }
  int width() const { return data.width; }
  void validate() const;
};

/// Four half-resolution planes in fixed order (R, G1, G2, B); carries the
/// source mosaic's metadata so unpacking is lossless.
struct PackedRawFrame {
  Image planes;  // 4 channels, H/2 x W/2
  BayerPhase phase = BayerPhase::RGGB;
  int bit_depth = 16;
  float black_level = 0.f;
  float white_level = 65535.f;
  bool normalized = false;

  int height() const { return planes.height; }
  int width() const { return planes.width; }
};

/// clamp((v - black) / (white - black), 0, 1). Out-of-range inputs (hot
/// pixels) are clamped and counted, not rejected.
RawBayerFrame normalize_raw(const RawBayerFrame& f, size_t* clamped_count = nullptr);

PackedRawFrame pack_bayer(const RawBayerFrame& f);
RawBayerFrame unpack_bayer(const PackedRawFrame& p);

/// Crop with even origin and extent so the Bayer phase is preserved.
RawBayerFrame crop_phase_safe(const RawBayerFrame& f, int x0, int y0, int w, int h);

}  // namespace rawvsr

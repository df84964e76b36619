#pragma once

#include <string>

#include "rawvsr/rawcore.h"

namespace rawvsr {

/// 8-bit RGB PNG, values clamped to [0,1] on write.
void write_png_rgb8(const std::string& path, const Image& rgb);
Image read_png_rgb8(const std::string& path);

/// 16-bit grayscale PNG holding raw sensor counts.
void write_png_gray16(const std::string& path, const Image& gray);
Image read_png_gray16(const std::string& path);

/// Mosaic persistence: counts in a 16-bit PNG plus a JSON sidecar
/// (phase, bit_depth, black_level, white_level) next to it.
void write_raw_frame(const std::string& png_path, const RawBayerFrame& frame);
RawBayerFrame read_raw_frame(const std::string& png_path);

}  // namespace rawvsr

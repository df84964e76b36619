#include "rawvsr/pngio.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "json.hpp"

namespace rawvsr {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, int h, int w, int color_type, int bit_depth,
               const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // rows are little-endian u16
  png_write_image(png, const_cast<png_bytep*>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngImage {
  int h = 0, w = 0, channels = 0, bit_depth = 0;
  std::vector<uint16_t> pixels;  // interleaved
};

PngImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);

  PngImage out;
  out.h = png_get_image_height(png, info);
  out.w = png_get_image_width(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.pixels.resize(size_t(out.h) * out.w * out.channels);

  const size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<uint8_t> row8(rowbytes);
  for (int y = 0; y < out.h; ++y) {
    png_read_row(png, row8.data(), nullptr);
    uint16_t* dst = &out.pixels[size_t(y) * out.w * out.channels];
    if (out.bit_depth == 16) {
      std::copy_n(reinterpret_cast<const uint16_t*>(row8.data()),
                  size_t(out.w) * out.channels, dst);
    } else {
      for (int i = 0; i < out.w * out.channels; ++i) dst[i] = row8[i];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png_rgb8(const std::string& path, const Image& rgb) {
  if (rgb.channels != 3) throw ShapeError("write_png_rgb8 expects 3 channels");
  std::vector<uint8_t> buf(size_t(rgb.height) * rgb.width * 3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb.at(c, y, x), 0.f, 1.f);
        buf[(size_t(y) * rgb.width + x) * 3 + c] = uint8_t(std::lround(v * 255.f));
      }
  std::vector<png_bytep> rows(rgb.height);
  for (int y = 0; y < rgb.height; ++y) rows[y] = &buf[size_t(y) * rgb.width * 3];
  write_png(path, rgb.height, rgb.width, PNG_COLOR_TYPE_RGB, 8, rows);
}

Image read_png_rgb8(const std::string& path) {
  PngImage p = read_png(path);
  if (p.channels < 3) throw IoError("expected RGB png: " + path);
  const float scale = p.bit_depth == 16 ? 65535.f : 255.f;
  Image out(3, p.h, p.w);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = p.pixels[(size_t(y) * p.w + x) * p.channels + c] / scale;
  return out;
}

void write_png_gray16(const std::string& path, const Image& gray) {
  if (gray.channels != 1) throw ShapeError("write_png_gray16 expects 1 channel");
  std::vector<uint16_t> buf(size_t(gray.height) * gray.width);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      const float v = std::clamp(gray.at(0, y, x), 0.f, 65535.f);
      buf[size_t(y) * gray.width + x] = uint16_t(std::lround(v));
    }
  std::vector<png_bytep> rows(gray.height);
  for (int y = 0; y < gray.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(&buf[size_t(y) * gray.width]);
  write_png(path, gray.height, gray.width, PNG_COLOR_TYPE_GRAY, 16, rows);
}

Image read_png_gray16(const std::string& path) {
  PngImage p = read_png(path);
  if (p.channels != 1) throw IoError("expected grayscale png: " + path);
  Image out(1, p.h, p.w);
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = float(p.pixels[i]);
  return out;
}

namespace {
std::string sidecar_path(const std::string& png_path) {
  auto dot = png_path.find_last_of('.');
  return (dot == std::string::npos ? png_path : png_path.substr(0, dot)) + ".json";
}
}  // namespace

void write_raw_frame(const std::string& png_path, const RawBayerFrame& frame) {
  if (frame.normalized)
    throw MetadataError("persist raw frames as counts, not normalized values");
  write_png_gray16(png_path, frame.data);
  nlohmann::json meta = {
      {"phase", to_string(frame.phase)},
      {"bit_depth", frame.bit_depth},
      {"black_level", frame.black_level},
      {"white_level", frame.white_level},
  };
  std::ofstream os(sidecar_path(png_path));
  if (!os) throw IoError("cannot write sidecar for " + png_path);
  os << meta.dump(2) << "\n";
}

RawBayerFrame read_raw_frame(const std::string& png_path) {
  RawBayerFrame frame;
  frame.data = read_png_gray16(png_path);
  std::ifstream is(sidecar_path(png_path));
  if (!is) throw IoError("missing sidecar for " + png_path);
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar for " + png_path + ": " + e.what());
  }
  frame.phase = phase_from_string(meta.at("phase").get<std::string>());
  frame.bit_depth = meta.at("bit_depth").get<int>();
  frame.black_level = meta.at("black_level").get<float>();
  frame.white_level = meta.at("white_level").get<float>();
  frame.normalized = false;
  return frame;
}

}  // namespace rawvsr

#pragma once

#include <cstddef>
#include <vector>

#include "rawvsr/common.h"

namespace rawvsr {

/// Planar float image, channel-major ([c][y][x]). sRGB frames use 3 channels
/// in [0,1]; mosaics use 1 channel; packed raw uses 4.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w), data(size_t(c) * h * w, 0.f) {}

  static Image zeros(int c, int h, int w) { return Image(c, h, w); }
  static Image constant(int c, int h, int w, float v) {
    Image im(c, h, w);
    std::fill(im.data.begin(), im.data.end(), v);
    return im;
  }

  size_t plane_size() const { return size_t(height) * width; }
  size_t numel() const { return data.size(); }

  float& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }

  float* plane(int c) { return data.data() + size_t(c) * plane_size(); }
  const float* plane(int c) const { return data.data() + size_t(c) * plane_size(); }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

Image crop(const Image& im, int x0, int y0, int w, int h);

/// Separable Keys bicubic (a = -0.5) resize with half-pixel mapping.
/// Downsampling stretches the kernel by the scale ratio (antialiased), so
/// constant images and local means are preserved.
Image resize_bicubic(const Image& im, int out_h, int out_w);

/// sigma <= 0 returns the input unchanged. Replicated borders.
Image gaussian_blur(const Image& im, double sigma);

/// Rec.601 luma for 3-channel input; identity copy for 1-channel.
Image to_gray(const Image& im);

Image clamp01(const Image& im);

/// Bilinear sample with border replication.
float sample_bilinear(const float* plane, int h, int w, double y, double x);

}  // namespace rawvsr

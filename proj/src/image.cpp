#include "rawvsr/image.h"

#include <algorithm>
#include <cmath>

namespace rawvsr {

Image crop(const Image& im, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > im.width || y0 + h > im.height)
    throw BoundsError("crop outside image");
  Image out(im.channels, h, w);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
  return out;
}

namespace {

double cubic_kernel(double x) {
  // Keys kernel, a = -0.5.
  x = std::abs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

struct ResampleAxis {
  std::vector<int> first;        // leftmost source index per output sample
  std::vector<double> weights;   // taps x out, normalized
  int taps = 0;
};

ResampleAxis plan_axis(int in_n, int out_n) {
  ResampleAxis ax;
  const double scale = double(out_n) / in_n;
  const double support = scale < 1.0 ? 2.0 / scale : 2.0;
  ax.taps = int(std::ceil(support)) * 2 + 1;
  ax.first.resize(out_n);
  ax.weights.assign(size_t(ax.taps) * out_n, 0.0);
  for (int o = 0; o < out_n; ++o) {
    const double center = (o + 0.5) / scale - 0.5;
    const int left = int(std::floor(center - support + 0.5));
    ax.first[o] = left;
    double sum = 0.0;
    for (int t = 0; t < ax.taps; ++t) {
      const double x = center - (left + t);
      const double wv = scale < 1.0 ? cubic_kernel(x * scale) : cubic_kernel(x);
      ax.weights[size_t(o) * ax.taps + t] = wv;
      sum += wv;
    }
    if (sum != 0.0)
      for (int t = 0; t < ax.taps; ++t) ax.weights[size_t(o) * ax.taps + t] /= sum;
  }
  return ax;
}

}  // namespace

Image resize_bicubic(const Image& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize to empty size");
  if (out_h == im.height && out_w == im.width) return im;
  const ResampleAxis ay = plan_axis(im.height, out_h);
  const ResampleAxis axx = plan_axis(im.width, out_w);

  Image tmp(im.channels, out_h, im.width);
  for (int c = 0; c < im.channels; ++c) {
    const float* src = im.plane(c);
    float* dst = tmp.plane(c);
    for (int o = 0; o < out_h; ++o) {
      const double* wrow = &ay.weights[size_t(o) * ay.taps];
      const int left = ay.first[o];
      for (int x = 0; x < im.width; ++x) {
        double acc = 0.0;
        for (int t = 0; t < ay.taps; ++t) {
          const int yy = std::clamp(left + t, 0, im.height - 1);
          acc += wrow[t] * src[size_t(yy) * im.width + x];
        }
        dst[size_t(o) * im.width + x] = float(acc);
      }
    }
  }

  Image out(im.channels, out_h, out_w);
  for (int c = 0; c < im.channels; ++c) {
    const float* src = tmp.plane(c);
    float* dst = out.plane(c);
    for (int y = 0; y < out_h; ++y) {
      for (int o = 0; o < out_w; ++o) {
        const double* wrow = &axx.weights[size_t(o) * axx.taps];
        const int left = axx.first[o];
        double acc = 0.0;
        for (int t = 0; t < axx.taps; ++t) {
          const int xx = std::clamp(left + t, 0, im.width - 1);
          acc += wrow[t] * src[size_t(y) * im.width + xx];
        }
        dst[size_t(y) * out_w + o] = float(acc);
      }
    }
  }
  return out;
}

Image gaussian_blur(const Image& im, double sigma) {
  if (sigma <= 0.0) return im;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;

  Image tmp(im.channels, im.height, im.width);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, im.width - 1);
          acc += k[i + radius] * im.at(c, y, xx);
        }
        tmp.at(c, y, x) = float(acc);
      }
  Image out(im.channels, im.height, im.width);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, im.height - 1);
          acc += k[i + radius] * tmp.at(c, yy, x);
        }
        out.at(c, y, x) = float(acc);
      }
  return out;
}

Image to_gray(const Image& im) {
  if (im.channels == 1) return im;
  if (im.channels < 3) throw ShapeError("to_gray expects 1 or >=3 channels");
  Image out(1, im.height, im.width);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      out.at(0, y, x) =
          0.299f * im.at(0, y, x) + 0.587f * im.at(1, y, x) + 0.114f * im.at(2, y, x);
  return out;
}

Image clamp01(const Image& im) {
  Image out = im;
  for (auto& v : out.data) v = std::clamp(v, 0.f, 1.f);
  return out;
}

float sample_bilinear(const float* plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, double(h - 1));
  x = std::clamp(x, 0.0, double(w - 1));
  const int y0 = std::min(int(y), h - 2 >= 0 ? h - 2 : 0);
  const int x0 = std::min(int(x), w - 2 >= 0 ? w - 2 : 0);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ay = y - y0, ax = x - x0;
  const double v00 = plane[size_t(y0) * w + x0], v01 = plane[size_t(y0) * w + x1];
  const double v10 = plane[size_t(y1) * w + x0], v11 = plane[size_t(y1) * w + x1];
  return float((v00 * (1 - ax) + v01 * ax) * (1 - ay) + (v10 * (1 - ax) + v11 * ax) * ay);
}

}  // namespace rawvsr

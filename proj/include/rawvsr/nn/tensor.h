#pragma once

#include <array>
#include <string>
#include <vector>

#include "rawvsr/image.h"

namespace rawvsr::nn {

/// Dense NCHW tensor. The N axis doubles as the temporal axis for frame
/// stacks. Templated so gradient checks can run the whole model in double.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(size_t(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("negative tensor dim");
  }

  static Tensor full(int n, int c, int h, int w, T val) {
    Tensor t(n, c, h, w);
    std::fill(t.v.begin(), t.v.end(), val);
    return t;
  }

  size_t numel() const { return v.size(); }
  std::array<int, 4> shape() const { return {n, c, h, w}; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T& at(int i, int j, int y, int x) { return v[((size_t(i) * c + j) * h + y) * w + x]; }
  T at(int i, int j, int y, int x) const { return v[((size_t(i) * c + j) * h + y) * w + x]; }

  T* chan(int i, int j) { return v.data() + (size_t(i) * c + j) * h * w; }
  const T* chan(int i, int j) const { return v.data() + (size_t(i) * c + j) * h * w; }

  std::string shape_str() const;
};

template <typename T>
Tensor<T> from_image(const Image& im) {
  Tensor<T> t(1, im.channels, im.height, im.width);
  for (size_t i = 0; i < im.data.size(); ++i) t.v[i] = T(im.data[i]);
  return t;
}

template <typename T>
Image to_image(const Tensor<T>& t) {
  if (t.n != 1) throw ShapeError("to_image expects a single batch entry");
  Image im(t.c, t.h, t.w);
  for (size_t i = 0; i < t.v.size(); ++i) im.data[i] = float(t.v[i]);
  return im;
}

template <typename T, typename U>
Tensor<T> cast(const Tensor<U>& src) {
  Tensor<T> t(src.n, src.c, src.h, src.w);
  for (size_t i = 0; i < src.v.size(); ++i) t.v[i] = T(src.v[i]);
  return t;
}

}  // namespace rawvsr::nn

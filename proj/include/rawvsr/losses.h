#pragma once

#include <array>
#include <span>

#include "rawvsr/image.h"

namespace rawvsr {

struct ColorGains {
  std::array<double, 3> rgb{1.0, 1.0, 1.0};
};

struct ColorMatrix {
  // Row-major 3x3, applied as out = M * in per pixel.
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

/// Closed-form minimizer of ||a*lr - gt||^2:
///   a = sum(lr*gt) / (sum(lr^2) + 1e-8).
/// All-zero lr yields a = 0 and sets *degenerate.
double fit_channel_gain(std::span<const float> lr, std::span<const float> gt,
                        bool* degenerate = nullptr);

/// Per-channel gains between an LR RGB frame and the ground truth downsampled
/// to the same size.
ColorGains fit_gains(const Image& lr_rgb, const Image& gt_down, bool* degenerate = nullptr);

Image apply_color_correction(const Image& rgb, const ColorGains& gains);

/// Least-squares 3x3 mix minimizing ||M*lr - gt|| over pixel pairs.
/// Rank-deficient systems fall back to the pseudo-inverse and set *degenerate.
ColorMatrix fit_ccm(const Image& lr_rgb, const Image& gt_down, bool* degenerate = nullptr);

Image apply_ccm(const Image& rgb, const ColorMatrix& m);

/// Mean over elements of sqrt(d^2 + eps), the per-pixel robust penalty.
double charbonnier(std::span<const float> pred, std::span<const float> target,
                   double eps = 1e-6);
double charbonnier(const Image& pred, const Image& target, double eps = 1e-6);

}  // namespace rawvsr

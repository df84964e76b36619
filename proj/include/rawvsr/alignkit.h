#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rawvsr/rawcore.h"

namespace rawvsr {

/// Row-major 3x3 projective transform, bottom-right normalized to 1.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double dx, double dy);

  std::array<double, 2> apply(double x, double y) const;
  Homography inverse() const;
  Homography compose(const Homography& rhs) const;  // this ∘ rhs
  void normalize();                                 // scale so m[8] == 1
  double det() const;
};

/// Per-pixel displacements in px at the size of the image the flow refines.
struct FlowField {
  int height = 0, width = 0;
  std::vector<float> dx, dy;

  FlowField() = default;
  FlowField(int h, int w) : height(h), width(w), dx(size_t(h) * w, 0.f), dy(size_t(h) * w, 0.f) {}
  float& u(int y, int x) { return dx[size_t(y) * width + x]; }
  float& v(int y, int x) { return dy[size_t(y) * width + x]; }
  float u(int y, int x) const { return dx[size_t(y) * width + x]; }
  float v(int y, int x) const { return dy[size_t(y) * width + x]; }
};

struct Correspondences {
  std::vector<std::array<double, 2>> a, b;
  size_t size() const { return a.size(); }
};

std::vector<std::array<double, 2>> harris_corners(const Image& gray, int max_corners = 400,
                                                  double quality = 0.01,
                                                  double min_distance = 6.0);

/// ZNCC patch matching with per-axis parabolic subpixel refinement.
Correspondences match_corners(const Image& gray_a, const Image& gray_b,
                              const std::vector<std::array<double, 2>>& corners_a,
                              int search_radius = 24, int patch_radius = 4,
                              double min_zncc = 0.6);

struct HomographyFit {
  Homography h;  // maps A coordinates to B coordinates
  std::vector<uint8_t> inliers;
  double inlier_ratio = 0.0;
};

/// RANSAC over normalized-DLT minimal fits, then a final all-inlier refit.
/// Deterministic for a fixed seed.
HomographyFit estimate_homography(const Correspondences& pairs, double tau = 1.5,
                                  int iters = 2000, uint64_t seed = 7);

enum class WarpInterp { Bilinear, Nearest };

/// Backward warp: out(p) = img(H^{-1} p). Out-of-field samples are 0 and the
/// optional validity mask is 0 there.
Image warp_homography(const Image& img, const Homography& h, int out_h, int out_w,
                      Image* validity = nullptr, WarpInterp interp = WarpInterp::Bilinear);

struct FlowConfig {
  int levels = 0;  // 0 = derive from image size
  int search_radius = 2;
  int patch_radius = 3;
  bool smooth = true;
};

/// Multi-scale block matching. Convention: b(p + d(p)) ≈ a(p), so warp_flow
/// pulls b onto a. Ties prefer the smaller displacement (zero on flat input).
FlowField dense_flow(const Image& a, const Image& b, const FlowConfig& cfg = {});

Image warp_flow(const Image& b, const FlowField& flow,
                WarpInterp interp = WarpInterp::Bilinear);

/// Transform rescaling for the half-resolution packed domain: S·H·S^{-1} with
/// S = diag(1/2, 1/2, 1); flows are downsampled by 2 and halved.
Homography rescale_for_subframe(const Homography& h);
FlowField rescale_for_subframe(const FlowField& f);

double median_flow_magnitude(const FlowField& f);

struct AlignConfig {
  double tau = 1.5;
  int ransac_iters = 2000;
  uint64_t seed = 7;
  int margin = 8;  // crop per side, LR px (even)
  int max_corners = 400;
  int search_radius = 24;
  int patch_radius = 4;
  double min_zncc = 0.6;
  double min_coverage = 0.6;
  WarpInterp raw_interp = WarpInterp::Nearest;
  FlowConfig flow;
};

struct AlignedPair {
  Image lr_rgb, hr_rgb;
  RawBayerFrame lr_raw, hr_raw;
  Homography h;  // upsampled-LR coords -> original HR coords
  double residual_median = 0.0;
  double inlier_ratio = 0.0;
  double coverage = 0.0;
};

/// Coarse-to-fine: upsample LR to HR size, corner match, homography-warp the
/// HR frame, refine with dense flow, center-crop with even margins. Raw frames
/// ride along in the packed domain under the rescaled transforms.
AlignedPair align_pair(const Image& lr_rgb, const Image& hr_rgb, const RawBayerFrame& lr_raw,
                       const RawBayerFrame& hr_raw, int scale, const AlignConfig& cfg = {});

}  // namespace rawvsr

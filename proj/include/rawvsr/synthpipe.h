#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rawvsr/rawcore.h"

namespace rawvsr {

struct DegradationConfig {
  int scale = 4;  // 2, 3 or 4
  double blur_sigma = 1.0;
  double read_noise_sigma = 0.0;
  double shot_noise_gain = 0.0;
  std::array<double, 2> channel_gain_range{0.8, 1.25};
  int bit_depth = 12;
  BayerPhase phase = BayerPhase::RGGB;
  uint64_t seed = 0;

  void validate() const;
};

/// One training sample: a temporal window of degraded frames plus the clean
/// center frame at full resolution.
struct ClipSample {
  std::vector<RawBayerFrame> lr_raw;  // 2N+1 frames, digital numbers
  std::vector<Image> lr_rgb;          // 2N+1 sRGB frames
  Image hr_rgb;                       // center frame, sH x sW
  std::array<double, 3> applied_gains{1.0, 1.0, 1.0};
};

/// sRGB transfer curve, elementwise. Inputs are clamped to [0,1].
Image linearize(const Image& srgb);
Image delinearize(const Image& linear);
double linearize_value(double v);
double delinearize_value(double v);

/// CFA-subsample a linear RGB frame into a single-plane mosaic. The result
/// keeps linear values (normalized=true); quantize_raw emits counts.
RawBayerFrame mosaic(const Image& linear_rgb, BayerPhase phase);

/// round(clamp01(v) * (2^bit_depth - 1)) with black level 0.
RawBayerFrame quantize_raw(const RawBayerFrame& linear_mosaic, int bit_depth);

/// Full per-frame degradation. `gains` were sampled once per clip;
/// `noise_rng` is the frame's private stream. If lr_rgb_out is non-null it
/// receives the sRGB rendition of the post-gain LR linear image.
RawBayerFrame degrade_frame(const Image& hr_srgb, const DegradationConfig& cfg,
                            const std::array<double, 3>& gains, Rng& noise_rng,
                            Image* lr_rgb_out);

std::array<double, 3> sample_gains(const DegradationConfig& cfg);

/// Degrades the centered 2N+1 window of the clip. Frame noise streams are
/// keyed by absolute frame index, so windows of the same clip agree.
ClipSample degrade_clip(const std::vector<Image>& hr_clip, const DegradationConfig& cfg,
                        int n_neighbors);

/// Deterministic moving test scene: a sinusoid mixture plus a few Gaussian
/// blobs under global subpixel translation.
std::vector<Image> procedural_clip(int frames, int height, int width, uint64_t seed);

struct ClipInfo {
  std::string id;
  int scale = 0;
  std::string split;  // "train" or "val"
  uint64_t seed = 0;
  int frames = 0;
  int hr_height = 0;
  int hr_width = 0;
  std::array<double, 3> gains{1.0, 1.0, 1.0};
};

struct DatasetManifest {
  int bit_depth = 12;
  BayerPhase phase = BayerPhase::RGGB;
  std::vector<int> scales;
  std::vector<ClipInfo> clips;

  std::vector<ClipInfo> clips_for(int scale, const std::string& split) const;
};

struct DatasetSpec {
  std::string src_dir;  // directory of clip subdirectories of PNGs; empty = procedural
  int clips = 3;        // procedural source only
  int frames_per_clip = 9;
  int hr_size = 192;
  std::vector<int> scales{4};
  int val_clips = 1;  // trailing clips become the validation split
  DegradationConfig degrade;  // .scale/.seed are overridden per clip
  uint64_t seed = 1234;
  bool force = false;
};

/// Writes `<out>/<s>x/<clip>/{lr_raw,lr_rgb,hr_rgb}/NNNN.png` for every frame
/// plus `<out>/manifest.json`. Refuses a non-empty out_dir unless spec.force.
DatasetManifest make_dataset(const std::string& out_dir, const DatasetSpec& spec);

DatasetManifest load_manifest(const std::string& root);

struct LoadedClip {
  ClipInfo info;
  std::vector<RawBayerFrame> lr_raw;
  std::vector<Image> lr_rgb;
  std::vector<Image> hr_rgb;
};

LoadedClip load_clip(const std::string& root, const ClipInfo& info);

}  // namespace rawvsr

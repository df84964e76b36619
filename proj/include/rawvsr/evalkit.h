#pragma once

#include <string>
#include <vector>

#include "rawvsr/model.h"
#include "rawvsr/synthpipe.h"

namespace rawvsr {

struct PsnrResult {
  double db = 0;
  bool infinite = false;  // identical inputs (MSE == 0)
};

/// PSNR for range-[0,1] images: 10*log10(1/MSE) over all channels.
PsnrResult psnr(const Image& a, const Image& b);

/// Gaussian-window SSIM (11 taps, sigma 1.5, K1 0.01, K2 0.03, range 1),
/// averaged over channels.
double ssim(const Image& a, const Image& b);

enum class CorrectionMode { Gains, Matrix, None };

struct FrameMetrics {
  int frame = 0;
  double psnr_db = 0;
  double ssim = 0;
  bool psnr_infinite = false;
};

struct ClipMetrics {
  std::string clip_id;
  double psnr_db = 0;  // mean over frames; +inf if any frame is exact
  double ssim = 0;
  std::vector<FrameMetrics> frames;
};

struct EvalConfig {
  std::string data_root;
  std::string split = "val";
  int scale = 4;
  CorrectionMode correction = CorrectionMode::Gains;
  int max_frames = 0;  // evaluate at most this many center frames (0 = all)
};

/// Full-frame metrics against the ground truth: run the model (or, with a
/// null model, bicubic upsampling of the LR RGB), fit the requested color
/// correction against the ground truth, apply it, clamp, then score.
ClipMetrics evaluate_clip(Model<float>* model, const LoadedClip& clip,
                          const EvalConfig& cfg);

std::vector<ClipMetrics> evaluate(Model<float>* model, const EvalConfig& cfg);

struct ModelCost {
  size_t params = 0;
  double flops_g = 0;  // multiply-accumulates, in units of 1e9
};

/// Parameter count plus forward cost extrapolated to a 160x360 mosaic (the
/// cost of a proxy-size forward scales exactly, every op being linear in
/// pixel count).
ModelCost count_params_flops(const ModelConfig& cfg);

/// 16-hex-digit FNV-1a of the serialized config.
std::string config_hash(const ModelConfig& cfg);

// --------------------------------------------------------------------------
// Ablations

std::vector<std::string> ablation_variant_ids();

/// Model structure for a variant. Single-branch variants are width-matched:
/// channels/recon blocks grow until the parameter count lands within 5% of
/// the two-branch baseline.
ModelConfig variant_model_config(const std::string& id, const ModelConfig& base);

/// Correction applied at evaluation time for a variant.
CorrectionMode variant_correction(const std::string& id);

/// Whether the variant also trains without the gain-corrected loss.
bool variant_trains_color_corrected(const std::string& id);

struct AblationRow {
  std::string clip, variant;
  double psnr_db = 0;
  double ssim = 0;
  double params_m = 0;
  double flops_g = 0;
  uint64_t seed = 0;
  std::string config_hash;
};

struct AblationConfig {
  std::string data_root;
  std::string out_dir;
  ModelConfig base;
  std::vector<std::string> variants;  // empty = all
  int64_t steps = 0;                  // per-variant training steps, 0 = none
  double lr = 1e-4;
  int patch = 32;
  uint64_t seed = 7;  // shared across variants
  int eval_max_frames = 0;
};

/// Builds (optionally trains) every requested variant with the shared seed,
/// evaluates the validation split, and writes report.json + report.csv.
std::vector<AblationRow> run_ablation(const AblationConfig& cfg);

void write_report(const std::string& out_dir, const std::vector<AblationRow>& rows);

}  // namespace rawvsr

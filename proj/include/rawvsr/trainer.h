#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rawvsr/model.h"

namespace rawvsr {

struct TrainConfig {
  ModelConfig model;
  std::string data_root;
  std::string out_dir;
  int64_t steps = 1000;
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int patch = 64;            // mosaic-domain patch edge (HR side = patch * scale)
  int subsample_stride = 3;  // temporal subsampling of clip frames
  int64_t checkpoint_every = 500;
  int64_t log_every = 10;
  uint64_t seed = 7;
  bool color_correct_loss = true;  // fit per-channel gains before the loss
  std::string resume;              // checkpoint to continue from

  void validate() const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
};

struct TrainResult {
  int64_t steps = 0;
  double final_loss = 0;
  std::string checkpoint;
  std::string metrics;
};

/// Every stride-th frame index: 150 frames at stride 3 yields 50 indices,
/// 9 yields {0, 3, 6}.
std::vector<int> subsample_indices(int frames, int stride);

/// Uniformly sampled patch origin restricted to even coordinates so crops
/// stay phase-aligned.
std::pair<int, int> sample_patch_origin(Rng& rng, int height, int width, int patch);

/// Runs (or resumes) training; writes metrics.jsonl, config.json and
/// checkpoints under cfg.out_dir. Aborts with an error on non-finite loss.
TrainResult train(const TrainConfig& cfg);

}  // namespace rawvsr

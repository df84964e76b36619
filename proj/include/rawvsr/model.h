#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rawvsr/nn/module.h"
#include "rawvsr/rawcore.h"

namespace rawvsr {

template <typename T>
using Tensor = nn::Tensor<T>;

enum class AlignMode { CoShared, Separate, None };
enum class FusionMode { SKF, Concat };
enum class Branches { Both, BayerOnly, SubframeOnly };

const char* to_string(AlignMode m);
const char* to_string(FusionMode m);
const char* to_string(Branches b);
AlignMode align_mode_from_string(const std::string& s);
FusionMode fusion_mode_from_string(const std::string& s);
Branches branches_from_string(const std::string& s);

struct ModelConfig {
  int scale = 4;
  int n_neighbors = 2;   // temporal window is 2N+1 frames
  int channels = 64;
  int levels = 3;        // alignment pyramid depth
  int deform_groups = 8;
  int extract_blocks = 5;
  int recon_blocks = 10;
  int skf_reduction = 4;
  AlignMode align = AlignMode::CoShared;
  FusionMode fusion = FusionMode::SKF;
  Branches branches = Branches::Both;
  bool interaction = true;
  uint64_t init_seed = 0x52415743;

  int frames() const { return 2 * n_neighbors + 1; }
  /// Input mosaics must have H and W divisible by this.
  int min_multiple() const { return std::max(1 << levels, 8); }
  void validate() const;

  std::string to_json_string() const;
  static ModelConfig from_json_string(const std::string& text);
};

/// Upsampling stage factors whose product is `s` (each stage is a conv +
/// pixel shuffle by that factor).
std::vector<int> factor_stages(int s);

/// Offset/mask maps recorded during alignment, [neighbor][level]; index
/// `levels` holds the cascade stage. Offsets are the raw per-tap maps fed to
/// the deformable convs.
template <typename T>
struct CoAlignTrace {
  std::vector<std::vector<Tensor<T>>> sub_offsets, sub_masks;
  std::vector<std::vector<Tensor<T>>> bayer_offsets, bayer_masks;
  Tensor<T> fusion_weights;  // [2, C, 1, 1] SKF gates (empty otherwise)
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const;
  nn::ParamStore<T>& params();
  const nn::ParamStore<T>& params() const;

  /// mosaics: [2N+1, 1, H, W] normalized raw frames; packed: [2N+1, 4, H/2,
  /// W/2] the same frames packed. Returns the linear-RGB estimate
  /// [1, 3, s*H, s*W] (unclamped).
  nn::Var<T> forward(const Tensor<T>& mosaics, const Tensor<T>& packed,
                     CoAlignTrace<T>* trace = nullptr);

  /// Convenience path: normalizes, packs, runs without autograd. `clamp`
  /// gives a displayable [0,1] image; evaluators fitting a color correction
  /// should correct first and clamp afterwards.
  Image infer(const std::vector<RawBayerFrame>& window, bool clamp = true);

  /// Deformable-conv weights per level (index `levels` = cascade stage);
  /// null when that branch has no alignment. Lets callers check weight
  /// sharing across branches by pointer identity.
  nn::Var<T> sub_dconv_weight(int level) const;
  nn::Var<T> bayer_dconv_weight(int level) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CheckpointInfo {
  ModelConfig config;
  int64_t step = 0;
  bool has_adam = false;
  double lr = 0, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t adam_t = 0;
  bool has_rng = false;
  std::array<uint64_t, 4> rng_state{};
};

/// Binary checkpoint: magic, JSON header, float32 parameter payload
/// (followed by Adam moments when present).
template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, int64_t step,
                     nn::Adam<T>* adam = nullptr, const Rng* rng = nullptr);

CheckpointInfo read_checkpoint_info(const std::string& path);

/// Restores parameters (and Adam state when both sides have it) into an
/// already-constructed model with a matching config.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, Model<T>& model,
                               nn::Adam<T>* adam = nullptr);

}  // namespace rawvsr

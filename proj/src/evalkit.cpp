#include "rawvsr/evalkit.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "rawvsr/losses.h"
#include "rawvsr/trainer.h"

namespace rawvsr {

using nlohmann::ordered_json;

PsnrResult psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  const double mse = acc / double(a.data.size());
  PsnrResult r;
  if (mse == 0.0) {
    r.infinite = true;
    r.db = std::numeric_limits<double>::infinity();
  } else {
    r.db = 10.0 * std::log10(1.0 / mse);
  }
  return r;
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim shape mismatch");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, sigma = 1.5;

  Image mu_a = gaussian_blur(a, sigma);
  Image mu_b = gaussian_blur(b, sigma);
  Image aa = a, bb = b, ab = a;
  for (size_t i = 0; i < a.data.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  aa = gaussian_blur(aa, sigma);
  bb = gaussian_blur(bb, sigma);
  ab = gaussian_blur(ab, sigma);

  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double ma = mu_a.data[i], mb = mu_b.data[i];
    const double va = double(aa.data[i]) - ma * ma;
    const double vb = double(bb.data[i]) - mb * mb;
    const double cov = double(ab.data[i]) - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / double(a.data.size());
}

namespace {

Image correct_and_clamp(const Image& sr, const Image& gt, CorrectionMode mode) {
  switch (mode) {
    case CorrectionMode::Gains:
      return clamp01(apply_color_correction(sr, fit_gains(sr, gt)));
    case CorrectionMode::Matrix:
      return clamp01(apply_ccm(sr, fit_ccm(sr, gt)));
    case CorrectionMode::None:
      return clamp01(sr);
  }
  return clamp01(sr);
}

}  // namespace

ClipMetrics evaluate_clip(Model<float>* model, const LoadedClip& clip,
                          const EvalConfig& cfg) {
  const int frames = int(clip.hr_rgb.size());
  const int N = model ? model->config().n_neighbors : 0;
  ClipMetrics cm;
  cm.clip_id = clip.info.id;
  if (frames < 2 * N + 1) throw ShapeError("clip shorter than the temporal window");

  int done = 0;
  double acc_psnr = 0, acc_ssim = 0;
  bool any_inf = false;
  for (int t = N; t + N < frames; ++t) {
    if (cfg.max_frames > 0 && done >= cfg.max_frames) break;
    const Image& gt = clip.hr_rgb[t];
    Image sr;
    if (model) {
      std::vector<RawBayerFrame> window(clip.lr_raw.begin() + (t - N),
                                        clip.lr_raw.begin() + (t + N + 1));
      sr = model->infer(window);
    } else {
      sr = resize_bicubic(clip.lr_rgb[t], gt.height, gt.width);
    }
    sr = correct_and_clamp(sr, gt, cfg.correction);

    FrameMetrics fm;
    fm.frame = t;
    const PsnrResult pr = psnr(sr, gt);
    fm.psnr_db = pr.db;
    fm.psnr_infinite = pr.infinite;
    fm.ssim = ssim(sr, gt);
    cm.frames.push_back(fm);
    any_inf |= pr.infinite;
    if (!pr.infinite) acc_psnr += pr.db;
    acc_ssim += fm.ssim;
    ++done;
  }
  if (done == 0) throw ShapeError("no evaluable frames in clip " + clip.info.id);
  cm.psnr_db = any_inf ? std::numeric_limits<double>::infinity() : acc_psnr / done;
  cm.ssim = acc_ssim / done;
  return cm;
}

std::vector<ClipMetrics> evaluate(Model<float>* model, const EvalConfig& cfg) {
  const DatasetManifest man = load_manifest(cfg.data_root);
  const auto infos = man.clips_for(cfg.scale, cfg.split);
  if (infos.empty())
    throw ConfigError("no clips for split '" + cfg.split + "' at scale " +
                      std::to_string(cfg.scale));
  std::vector<ClipMetrics> out;
  for (const auto& info : infos)
    out.push_back(evaluate_clip(model, load_clip(cfg.data_root, info), cfg));
  return out;
}

ModelCost count_params_flops(const ModelConfig& cfg) {
  Model<float> m(cfg);
  ModelCost cost;
  cost.params = m.params().count_scalars();

  const int mult = cfg.min_multiple();
  const int ph = 4 * mult, pw = 9 * mult;  // 32x72 at the default depth
  Tensor<float> mos(cfg.frames(), 1, ph, pw);
  Tensor<float> pk(cfg.frames(), 4, ph / 2, pw / 2);
  nn::NoGradGuard ng;
  nn::flops_reset();
  m.forward(mos, pk);
  const double area_scale = (160.0 * 360.0) / (double(ph) * pw);
  cost.flops_g = double(nn::flops_get()) * area_scale / 1e9;
  return cost;
}

std::string config_hash(const ModelConfig& cfg) {
  const std::string s = cfg.to_json_string();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<std::string> ablation_variant_ids() {
  return {"full",          "sep_align",     "no_align",
          "no_interaction", "concat_fusion", "no_color_corr",
          "matrix_color_corr", "bayer_only", "subframe_only"};
}

namespace {

/// Grows a single-branch config until its parameter count is within 5% of
/// `target`. Channels move in deform-group strides (coarse), recon blocks
/// fill in the remainder (fine).
ModelConfig width_match(ModelConfig cand, size_t target) {
  auto count = [](const ModelConfig& c) {
    return Model<float>(c).params().count_scalars();
  };
  const int step = std::max(cand.deform_groups, cand.skf_reduction);
  while (true) {
    ModelConfig wider = cand;
    wider.channels += step;
    if (count(wider) > target) break;
    cand = wider;
  }
  ModelConfig best = cand;
  size_t best_err = std::max(count(cand), target) - std::min(count(cand), target);
  for (int extra = 1; extra <= 24; ++extra) {
    ModelConfig c = cand;
    c.recon_blocks += extra;
    const size_t n = count(c);
    const size_t err = std::max(n, target) - std::min(n, target);
    if (err < best_err) {
      best = c;
      best_err = err;
    }
    if (n > target) break;
  }
  return best;
}

}  // namespace

ModelConfig variant_model_config(const std::string& id, const ModelConfig& base) {
  ModelConfig c = base;
  if (id == "full" || id == "no_color_corr" || id == "matrix_color_corr") return c;
  if (id == "sep_align") {
    c.align = AlignMode::Separate;
    return c;
  }
  if (id == "no_align") {
    c.align = AlignMode::None;
    return c;
  }
  if (id == "no_interaction") {
    c.interaction = false;
    return c;
  }
  if (id == "concat_fusion") {
    c.fusion = FusionMode::Concat;
    return c;
  }
  if (id == "bayer_only" || id == "subframe_only") {
    const size_t target = Model<float>(base).params().count_scalars();
    c.branches = id == "bayer_only" ? Branches::BayerOnly : Branches::SubframeOnly;
    return width_match(c, target);
  }
  throw ConfigError("unknown ablation variant: " + id);
}

CorrectionMode variant_correction(const std::string& id) {
  if (id == "no_color_corr") return CorrectionMode::None;
  if (id == "matrix_color_corr") return CorrectionMode::Matrix;
  return CorrectionMode::Gains;
}

bool variant_trains_color_corrected(const std::string& id) {
  return id != "no_color_corr";
}

std::vector<AblationRow> run_ablation(const AblationConfig& cfg) {
  std::vector<std::string> ids = cfg.variants;
  if (ids.empty()) ids = ablation_variant_ids();
  std::filesystem::create_directories(cfg.out_dir);

  std::vector<AblationRow> rows;
  for (const auto& id : ids) {
    const ModelConfig mc = variant_model_config(id, cfg.base);
    const ModelCost cost = count_params_flops(mc);
    const std::string hash = config_hash(mc);

    Model<float> model(mc);
    if (cfg.steps > 0) {
      TrainConfig tc;
      tc.model = mc;
      tc.data_root = cfg.data_root;
      tc.out_dir = cfg.out_dir + "/" + id;
      tc.steps = cfg.steps;
      tc.lr = cfg.lr;
      tc.patch = cfg.patch;
      tc.seed = cfg.seed;
      tc.checkpoint_every = cfg.steps;
      tc.color_correct_loss = variant_trains_color_corrected(id);
      const TrainResult tr = train(tc);
      load_checkpoint(tr.checkpoint, model);
    }

    EvalConfig ec;
    ec.data_root = cfg.data_root;
    ec.scale = mc.scale;
    ec.correction = variant_correction(id);
    ec.max_frames = cfg.eval_max_frames;
    for (const auto& cm : evaluate(&model, ec)) {
      AblationRow row;
      row.clip = cm.clip_id;
      row.variant = id;
      row.psnr_db = cm.psnr_db;
      row.ssim = cm.ssim;
      row.params_m = double(cost.params) / 1e6;
      row.flops_g = cost.flops_g;
      row.seed = cfg.seed;
      row.config_hash = hash;
      rows.push_back(row);
    }
  }
  write_report(cfg.out_dir, rows);
  return rows;
}

void write_report(const std::string& out_dir, const std::vector<AblationRow>& rows) {
  std::filesystem::create_directories(out_dir);
  ordered_json j;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"clip", r.clip},
                         {"variant", r.variant},
                         {"psnr_db", std::isfinite(r.psnr_db) ? ordered_json(r.psnr_db)
                                                              : ordered_json("inf")},
                         {"ssim", r.ssim},
                         {"params_m", r.params_m},
                         {"flops_g", r.flops_g},
                         {"seed", r.seed},
                         {"config_hash", r.config_hash}});
  }
  std::ofstream jf(out_dir + "/report.json");
  if (!jf) throw IoError("cannot write report.json in " + out_dir);
  jf << j.dump(2) << "\n";

  std::ofstream cf(out_dir + "/report.csv");
  if (!cf) throw IoError("cannot write report.csv in " + out_dir);
  cf << "clip,variant,psnr_db,ssim,params_m,flops_g,seed,config_hash\n";
  char buf[256];
  for (const auto& r : rows) {
    if (std::isfinite(r.psnr_db)) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.5f,%.4f,%.2f,%llu,%s\n",
                    r.clip.c_str(), r.variant.c_str(), r.psnr_db, r.ssim, r.params_m,
                    r.flops_g, static_cast<unsigned long long>(r.seed),
                    r.config_hash.c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%s,%s,inf,%.5f,%.4f,%.2f,%llu,%s\n",
                    r.clip.c_str(), r.variant.c_str(), r.ssim, r.params_m, r.flops_g,
                    static_cast<unsigned long long>(r.seed), r.config_hash.c_str());
    }
    cf << buf;
  }
}

}  // namespace rawvsr

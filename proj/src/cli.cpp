#include "rawvsr/cli.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rawvsr/alignkit.h"
#include "rawvsr/evalkit.h"
#include "rawvsr/pngio.h"
#include "rawvsr/synthpipe.h"
#include "rawvsr/trainer.h"

extern "C" void openblas_set_num_threads(int);

namespace rawvsr::cli {

using nlohmann::ordered_json;

namespace {

void set_deterministic() { openblas_set_num_threads(1); }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

std::string data_root_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("RAWVSR_DATA_ROOT"); env && *env) return env;
  throw ConfigError("no data root: pass --data or set RAWVSR_DATA_ROOT");
}

BayerPhase phase_flag(const std::string& s) {
  try {
    return phase_from_string(s);
  } catch (const MetadataError& e) {
    throw ConfigError(e.what());
  }
}

ordered_json spec_to_json(const DatasetSpec& s) {
  ordered_json d;
  d["blur_sigma"] = s.degrade.blur_sigma;
  d["read_noise_sigma"] = s.degrade.read_noise_sigma;
  d["shot_noise_gain"] = s.degrade.shot_noise_gain;
  d["channel_gain_range"] = s.degrade.channel_gain_range;
  d["bit_depth"] = s.degrade.bit_depth;
  d["phase"] = to_string(s.degrade.phase);
  ordered_json j;
  j["src_dir"] = s.src_dir;
  j["clips"] = s.clips;
  j["frames_per_clip"] = s.frames_per_clip;
  j["hr_size"] = s.hr_size;
  j["scales"] = s.scales;
  j["val_clips"] = s.val_clips;
  j["seed"] = s.seed;
  j["degrade"] = d;
  return j;
}

DatasetSpec spec_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad dataset config json: ") + e.what());
  }
  DatasetSpec s;
  s.src_dir = j.value("src_dir", s.src_dir);
  s.clips = j.value("clips", s.clips);
  s.frames_per_clip = j.value("frames_per_clip", s.frames_per_clip);
  s.hr_size = j.value("hr_size", s.hr_size);
  if (j.contains("scales")) s.scales = j["scales"].get<std::vector<int>>();
  s.val_clips = j.value("val_clips", s.val_clips);
  s.seed = j.value("seed", s.seed);
  if (j.contains("degrade")) {
    const auto& d = j["degrade"];
    s.degrade.blur_sigma = d.value("blur_sigma", s.degrade.blur_sigma);
    s.degrade.read_noise_sigma =
        d.value("read_noise_sigma", s.degrade.read_noise_sigma);
    s.degrade.shot_noise_gain = d.value("shot_noise_gain", s.degrade.shot_noise_gain);
    if (d.contains("channel_gain_range"))
      s.degrade.channel_gain_range =
          d["channel_gain_range"].get<std::array<double, 2>>();
    s.degrade.bit_depth = d.value("bit_depth", s.degrade.bit_depth);
    if (d.contains("phase"))
      s.degrade.phase = phase_flag(d["phase"].get<std::string>());
  }
  return s;
}

ordered_json homography_json(const Homography& h) {
  ordered_json a = ordered_json::array();
  for (double v : h.m) a.push_back(v);
  return a;
}

CorrectionMode correction_from_string(const std::string& s) {
  if (s == "gains") return CorrectionMode::Gains;
  if (s == "matrix") return CorrectionMode::Matrix;
  if (s == "none") return CorrectionMode::None;
  throw ConfigError("unknown correction mode: " + s);
}

}  // namespace

int run(const std::vector<std::string>& argv) {
  CLI::App app{"raw-domain video super-resolution toolkit", "rawvsr"};
  app.require_subcommand(1);

  // -- synth -----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "render a synthetic raw dataset");
  struct {
    std::string out, config, src, phase;
    int scale = 0, clips = 0, frames = 0, size = 0, bit_depth = 0;
    uint64_t seed = 0;
    double blur = -1, read_noise = -1, shot_noise = -1;
    bool force = false;
  } sy;
  synth->add_option("--out", sy.out, "dataset directory")->required();
  synth->add_option("--config", sy.config, "dataset spec json");
  synth->add_option("--src", sy.src, "source clip directory (default: procedural)");
  synth->add_option("--scale", sy.scale, "single downscale factor");
  synth->add_option("--clips", sy.clips, "number of clips");
  synth->add_option("--frames", sy.frames, "frames per clip");
  synth->add_option("--size", sy.size, "square HR frame size");
  synth->add_option("--bit-depth", sy.bit_depth, "raw bit depth");
  synth->add_option("--phase", sy.phase, "Bayer phase (RGGB/BGGR/GRBG/GBRG)");
  synth->add_option("--blur-sigma", sy.blur, "degradation blur sigma");
  synth->add_option("--read-noise", sy.read_noise, "read noise sigma");
  synth->add_option("--shot-noise", sy.shot_noise, "shot noise gain");
  auto* sy_seed = synth->add_option("--seed", sy.seed, "dataset seed");
  synth->add_flag("--force", sy.force, "overwrite a non-empty directory");

  // -- align -----------------------------------------------------------------
  auto* align = app.add_subcommand("align", "register an LR/HR frame pair");
  struct {
    std::string lr, hr, lr_raw, hr_raw, out;
    int scale = 4, margin = 8;
    double tau = 1.5;
    uint64_t seed = 7;
  } al;
  align->add_option("--lr", al.lr, "LR RGB png")->required();
  align->add_option("--hr", al.hr, "HR RGB png")->required();
  align->add_option("--lr-raw", al.lr_raw, "LR raw png (with sidecar)");
  align->add_option("--hr-raw", al.hr_raw, "HR raw png (with sidecar)");
  align->add_option("--out", al.out, "output directory")->required();
  align->add_option("--scale", al.scale, "HR/LR scale factor");
  align->add_option("--margin", al.margin, "crop margin, LR px");
  align->add_option("--tau", al.tau, "RANSAC inlier threshold, px");
  align->add_option("--seed", al.seed, "RANSAC seed");

  // -- train -----------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model");
  struct {
    std::string config, data, out, resume;
    int64_t steps = -1;
    double lr = -1;
    int patch = 0, scale = 0, stride = 0;
    int64_t log_every = 0, ckpt_every = 0;
    uint64_t seed = 0;
    bool no_color = false, deterministic = false;
  } t;
  tr->add_option("--config", t.config, "train config json");
  tr->add_option("--data", t.data, "dataset root (or RAWVSR_DATA_ROOT)");
  tr->add_option("--out", t.out, "run directory");
  tr->add_option("--steps", t.steps, "total optimization steps");
  tr->add_option("--lr", t.lr, "learning rate");
  tr->add_option("--patch", t.patch, "mosaic patch size");
  tr->add_option("--scale", t.scale, "model scale factor");
  tr->add_option("--stride", t.stride, "temporal subsample stride");
  tr->add_option("--log-every", t.log_every, "metrics cadence");
  tr->add_option("--ckpt-every", t.ckpt_every, "checkpoint cadence");
  auto* t_seed = tr->add_option("--seed", t.seed, "training seed");
  tr->add_option("--resume", t.resume, "checkpoint to resume from");
  tr->add_flag("--no-color-corr", t.no_color, "train without gain-corrected loss");
  tr->add_flag("--deterministic", t.deterministic, "single-threaded BLAS");

  // -- eval ------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "score a checkpoint (or bicubic baseline)");
  struct {
    std::string data, ckpt, out, split = "val", correction = "gains";
    int scale = 0, max_frames = 0;
    bool deterministic = false;
  } e;
  ev->add_option("--data", e.data, "dataset root (or RAWVSR_DATA_ROOT)");
  ev->add_option("--ckpt", e.ckpt, "checkpoint (omit for bicubic baseline)");
  ev->add_option("--out", e.out, "output directory")->required();
  ev->add_option("--split", e.split, "dataset split");
  ev->add_option("--scale", e.scale, "scale (baseline mode)");
  ev->add_option("--correction", e.correction, "gains|matrix|none");
  ev->add_option("--max-frames", e.max_frames, "cap frames per clip");
  ev->add_flag("--deterministic", e.deterministic, "single-threaded BLAS");

  // -- infer -----------------------------------------------------------------
  auto* in = app.add_subcommand("infer", "super-resolve one temporal window");
  struct {
    std::string ckpt, out;
    std::vector<std::string> frames;
    bool deterministic = false;
  } nf;
  in->add_option("--ckpt", nf.ckpt, "checkpoint")->required();
  in->add_option("--out", nf.out, "output png")->required();
  in->add_option("frames", nf.frames, "raw frame pngs (2N+1, center = target)")
      ->required()
      ->expected(-1);
  in->add_flag("--deterministic", nf.deterministic, "single-threaded BLAS");

  // -- ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "train/evaluate model variants");
  struct {
    std::string data, out, config;
    std::vector<std::string> variants;
    int64_t steps = 0;
    double lr = 1e-4;
    int patch = 32, scale = 0, max_frames = 0;
    uint64_t seed = 7;
    bool deterministic = false;
  } a;
  ab->add_option("--data", a.data, "dataset root (or RAWVSR_DATA_ROOT)");
  ab->add_option("--out", a.out, "report directory")->required();
  ab->add_option("--config", a.config, "base model config json");
  ab->add_option("--variant", a.variants, "variant id (repeatable; default all)");
  ab->add_option("--steps", a.steps, "training steps per variant (0 = untrained)");
  ab->add_option("--lr", a.lr, "learning rate");
  ab->add_option("--patch", a.patch, "mosaic patch size");
  ab->add_option("--scale", a.scale, "model scale factor");
  ab->add_option("--max-frames", a.max_frames, "cap evaluation frames per clip");
  ab->add_option("--seed", a.seed, "shared variant seed");
  ab->add_flag("--deterministic", a.deterministic, "single-threaded BLAS");

  std::vector<const char*> cargs;
  cargs.reserve(argv.size());
  for (const auto& s : argv) cargs.push_back(s.c_str());
  try {
    app.parse(int(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      DatasetSpec spec;
      if (!sy.config.empty()) spec = spec_from_json(read_file(sy.config));
      if (!sy.src.empty()) spec.src_dir = sy.src;
      if (sy.scale > 0) spec.scales = {sy.scale};
      if (sy.clips > 0) spec.clips = sy.clips;
      if (sy.frames > 0) spec.frames_per_clip = sy.frames;
      if (sy.size > 0) spec.hr_size = sy.size;
      if (sy.bit_depth > 0) spec.degrade.bit_depth = sy.bit_depth;
      if (!sy.phase.empty()) spec.degrade.phase = phase_flag(sy.phase);
      if (sy.blur >= 0) spec.degrade.blur_sigma = sy.blur;
      if (sy.read_noise >= 0) spec.degrade.read_noise_sigma = sy.read_noise;
      if (sy.shot_noise >= 0) spec.degrade.shot_noise_gain = sy.shot_noise;
      if (sy_seed->count()) spec.seed = sy.seed;
      spec.force = sy.force;
      const DatasetManifest man = make_dataset(sy.out, spec);
      write_file(sy.out + "/synth_config.json", spec_to_json(spec).dump(2) + "\n");
      std::cout << "wrote " << man.clips.size() << " clips to " << sy.out << "\n";
      return 0;
    }

    if (align->parsed()) {
      if (al.lr_raw.empty() != al.hr_raw.empty())
        throw ConfigError("--lr-raw and --hr-raw must be given together");
      const Image lr_rgb = read_png_rgb8(al.lr);
      const Image hr_rgb = read_png_rgb8(al.hr);
      RawBayerFrame lr_raw, hr_raw;
      if (!al.lr_raw.empty()) {
        lr_raw = read_raw_frame(al.lr_raw);
        hr_raw = read_raw_frame(al.hr_raw);
      } else {
        // No raw planes provided: mosaic the RGB frames so the raw path
        // still produces aligned mosaics.
        lr_raw = quantize_raw(mosaic(linearize(lr_rgb), BayerPhase::RGGB), 12);
        hr_raw = quantize_raw(mosaic(linearize(hr_rgb), BayerPhase::RGGB), 12);
      }
      AlignConfig cfg;
      cfg.tau = al.tau;
      cfg.margin = al.margin;
      cfg.seed = al.seed;
      const AlignedPair pair = align_pair(lr_rgb, hr_rgb, lr_raw, hr_raw, al.scale, cfg);
      std::filesystem::create_directories(al.out);
      write_png_rgb8(al.out + "/aligned_lr.png", pair.lr_rgb);
      write_png_rgb8(al.out + "/aligned_hr.png", pair.hr_rgb);
      write_raw_frame(al.out + "/aligned_lr_raw.png", pair.lr_raw);
      write_raw_frame(al.out + "/aligned_hr_raw.png", pair.hr_raw);
      ordered_json j;
      j["homography"] = homography_json(pair.h);
      j["residual_median_px"] = pair.residual_median;
      j["inlier_ratio"] = pair.inlier_ratio;
      j["coverage"] = pair.coverage;
      write_file(al.out + "/align.json", j.dump(2) + "\n");
      std::cout << "aligned pair: residual " << pair.residual_median << " px, inliers "
                << pair.inlier_ratio << "\n";
      return 0;
    }

    if (tr->parsed()) {
      if (t.deterministic) set_deterministic();
      TrainConfig tc;
      if (!t.config.empty()) tc = TrainConfig::from_json_string(read_file(t.config));
      if (!t.data.empty() || tc.data_root.empty())
        tc.data_root = data_root_or_env(t.data);
      if (!t.out.empty()) tc.out_dir = t.out;
      if (tc.out_dir.empty()) throw ConfigError("no run directory: pass --out");
      if (t.steps >= 0) tc.steps = t.steps;
      if (t.lr >= 0) tc.lr = t.lr;
      if (t.patch > 0) tc.patch = t.patch;
      if (t.scale > 0) tc.model.scale = t.scale;
      if (t.stride > 0) tc.subsample_stride = t.stride;
      if (t.log_every > 0) tc.log_every = t.log_every;
      if (t.ckpt_every > 0) tc.checkpoint_every = t.ckpt_every;
      if (t_seed->count()) tc.seed = t.seed;
      if (!t.resume.empty()) tc.resume = t.resume;
      if (t.no_color) tc.color_correct_loss = false;
      const TrainResult r = train(tc);
      std::cout << "trained " << r.steps << " steps, final loss " << r.final_loss
                << ", checkpoint " << r.checkpoint << "\n";
      return 0;
    }

    if (ev->parsed()) {
      if (e.deterministic) set_deterministic();
      EvalConfig ec;
      ec.data_root = data_root_or_env(e.data);
      ec.split = e.split;
      ec.correction = correction_from_string(e.correction);
      ec.max_frames = e.max_frames;
      std::optional<Model<float>> model;
      if (!e.ckpt.empty()) {
        const CheckpointInfo info = read_checkpoint_info(e.ckpt);
        if (e.scale > 0 && e.scale != info.config.scale)
          throw ConfigError("--scale conflicts with the checkpoint scale");
        model.emplace(info.config);
        load_checkpoint(e.ckpt, *model);
        ec.scale = info.config.scale;
      } else {
        ec.scale = e.scale > 0 ? e.scale : 4;
      }
      const auto res = evaluate(model ? &*model : nullptr, ec);
      std::filesystem::create_directories(e.out);
      ordered_json cfgj;
      cfgj["data_root"] = ec.data_root;
      cfgj["split"] = ec.split;
      cfgj["scale"] = ec.scale;
      cfgj["correction"] = e.correction;
      cfgj["checkpoint"] = e.ckpt;
      cfgj["max_frames"] = ec.max_frames;
      write_file(e.out + "/eval_config.json", cfgj.dump(2) + "\n");
      ordered_json j;
      j["split"] = ec.split;
      j["scale"] = ec.scale;
      j["correction"] = e.correction;
      j["checkpoint"] = e.ckpt;
      j["clips"] = ordered_json::array();
      for (const auto& cm : res) {
        ordered_json cj;
        cj["clip"] = cm.clip_id;
        cj["psnr_db"] =
            std::isfinite(cm.psnr_db) ? ordered_json(cm.psnr_db) : ordered_json("inf");
        cj["ssim"] = cm.ssim;
        j["clips"].push_back(cj);
        std::cout << cm.clip_id << ": psnr " << cm.psnr_db << " dB, ssim " << cm.ssim
                  << "\n";
      }
      write_file(e.out + "/eval.json", j.dump(2) + "\n");
      return 0;
    }

    if (in->parsed()) {
      if (nf.deterministic) set_deterministic();
      const CheckpointInfo info = read_checkpoint_info(nf.ckpt);
      Model<float> model(info.config);
      load_checkpoint(nf.ckpt, model);
      if (int(nf.frames.size()) != info.config.frames())
        throw ConfigError("expected " + std::to_string(info.config.frames()) +
                          " input frames, got " + std::to_string(nf.frames.size()));
      std::vector<RawBayerFrame> window;
      for (const auto& p : nf.frames) window.push_back(read_raw_frame(p));
      const Image sr = model.infer(window);
      write_png_rgb8(nf.out, sr);
      std::cout << "wrote " << nf.out << " (" << sr.width << "x" << sr.height << ")\n";
      return 0;
    }

    if (ab->parsed()) {
      if (a.deterministic) set_deterministic();
      AblationConfig ac;
      ac.data_root = data_root_or_env(a.data);
      ac.out_dir = a.out;
      if (!a.config.empty())
        ac.base = ModelConfig::from_json_string(read_file(a.config));
      if (a.scale > 0) ac.base.scale = a.scale;
      ac.variants = a.variants;
      ac.steps = a.steps;
      ac.lr = a.lr;
      ac.patch = a.patch;
      ac.seed = a.seed;
      ac.eval_max_frames = a.max_frames;
      const auto rows = run_ablation(ac);
      write_file(a.out + "/ablate_config.json", ac.base.to_json_string() + "\n");
      std::cout << "wrote " << rows.size() << " rows to " << a.out << "/report.csv\n";
      return 0;
    }
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const EstimationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace rawvsr::cli

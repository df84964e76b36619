#include "rawvsr/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "rawvsr/losses.h"
#include "rawvsr/synthpipe.h"

namespace rawvsr {

using nlohmann::ordered_json;

namespace {

constexpr uint64_t kTrainTag = 0x7472616e;

std::string step_name(int64_t step) {
  char b[40];
  std::snprintf(b, sizeof b, "ckpt_%06lld.ckpt", static_cast<long long>(step));
  return b;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (data_root.empty() || out_dir.empty())
    throw ConfigError("data_root and out_dir are required");
  if (steps < 1) throw ConfigError("steps must be positive");
  if (lr < 0) throw ConfigError("lr must be non-negative");
  const int mult = model.min_multiple();
  if (patch < mult || patch % mult != 0)
    throw ConfigError("patch must be a positive multiple of " + std::to_string(mult));
  if (subsample_stride < 1) throw ConfigError("subsample_stride must be >= 1");
  if (checkpoint_every < 1 || log_every < 1)
    throw ConfigError("checkpoint_every and log_every must be >= 1");
}

std::string TrainConfig::to_json_string() const {
  ordered_json j;
  j["model"] = ordered_json::parse(model.to_json_string());
  j["data_root"] = data_root;
  j["out_dir"] = out_dir;
  j["steps"] = steps;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["patch"] = patch;
  j["subsample_stride"] = subsample_stride;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["seed"] = seed;
  j["color_correct_loss"] = color_correct_loss;
  j["resume"] = resume;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json_string(j["model"].dump());
  c.data_root = j.value("data_root", c.data_root);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.patch = j.value("patch", c.patch);
  c.subsample_stride = j.value("subsample_stride", c.subsample_stride);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.seed = j.value("seed", c.seed);
  c.color_correct_loss = j.value("color_correct_loss", c.color_correct_loss);
  c.resume = j.value("resume", c.resume);
  return c;
}

std::vector<int> subsample_indices(int frames, int stride) {
  if (frames < 0 || stride < 1) throw ConfigError("bad subsample arguments");
  std::vector<int> out;
  for (int i = 0; i < frames; i += stride) out.push_back(i);
  return out;
}

std::pair<int, int> sample_patch_origin(Rng& rng, int height, int width, int patch) {
  if (patch > height || patch > width || patch % 2 != 0 || height % 2 != 0 ||
      width % 2 != 0)
    throw ShapeError("patch sampling needs even dims with patch <= frame");
  const int x0 = 2 * rng.uniform_int(0, (width - patch) / 2);
  const int y0 = 2 * rng.uniform_int(0, (height - patch) / 2);
  return {x0, y0};
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream echo(cfg.out_dir + "/config.json");
    if (!echo) throw IoError("cannot write to " + cfg.out_dir);
    echo << cfg.to_json_string() << "\n";
  }

  const DatasetManifest man = load_manifest(cfg.data_root);
  const auto infos = man.clips_for(cfg.model.scale, "train");
  if (infos.empty())
    throw ConfigError("no training clips at scale " + std::to_string(cfg.model.scale));
  const int K = cfg.model.frames();
  std::vector<LoadedClip> clips;
  std::vector<std::vector<int>> windows;
  for (const auto& info : infos) {
    clips.push_back(load_clip(cfg.data_root, info));
    auto idx = subsample_indices(info.frames, cfg.subsample_stride);
    if (int(idx.size()) < K) {
      idx = subsample_indices(info.frames, 1);
    }
    if (int(idx.size()) < K)
      throw ConfigError("clip " + info.id + " is shorter than the temporal window");
    windows.push_back(std::move(idx));
  }

  Model<float> model(cfg.model);
  nn::Adam<float> adam(cfg.lr, cfg.beta1, cfg.beta2);
  Rng rng = Rng::derive(cfg.seed, {kTrainTag});
  int64_t start = 0;
  bool resumed = false;
  if (!cfg.resume.empty()) {
    const auto info = load_checkpoint(cfg.resume, model, &adam);
    start = info.step;
    if (info.has_rng) rng.set_state(info.rng_state);
    resumed = true;
  }

  const std::string metrics_path = cfg.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path, resumed ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + metrics_path);

  const int s = cfg.model.scale, N = cfg.model.n_neighbors, p = cfg.patch;
  const size_t plane = size_t(p) * s * p * s;
  const auto t0 = std::chrono::steady_clock::now();
  double last_loss = 0;
  std::string last_ckpt;

  for (int64_t step = start; step < cfg.steps; ++step) {
    const int ci = rng.uniform_int(0, int(clips.size()) - 1);
    const auto& clip = clips[ci];
    const auto& idx = windows[ci];
    const int w0 = rng.uniform_int(0, int(idx.size()) - K);
    const int H = clip.lr_raw[0].height(), W = clip.lr_raw[0].width();
    const auto [x0, y0] = sample_patch_origin(rng, H, W, p);

    Tensor<float> mos(K, 1, p, p), pk(K, 4, p / 2, p / 2);
    for (int j = 0; j < K; ++j) {
      RawBayerFrame f = crop_phase_safe(clip.lr_raw[idx[w0 + j]], x0, y0, p, p);
      f = normalize_raw(f);
      std::copy(f.data.data.begin(), f.data.data.end(), mos.chan(j, 0));
      const PackedRawFrame pr = pack_bayer(f);
      for (int c = 0; c < 4; ++c)
        std::copy(pr.planes.plane(c), pr.planes.plane(c) + pr.planes.plane_size(),
                  pk.chan(j, c));
    }
    const Image hr = crop(clip.hr_rgb[idx[w0 + N]], x0 * s, y0 * s, p * s, p * s);
    Tensor<float> target = nn::from_image<float>(hr);

    model.params().zero_grads();
    auto out = model.forward(mos, pk);

    // Gains are fitted outside the graph; the loss sees them as constants.
    ColorGains g;
    for (int c = 0; c < 3; ++c)
      g.rgb[c] = fit_channel_gain({out->val.chan(0, c), plane},
                                  {target.chan(0, c), plane});
    double loss_corr = 0, loss_unc = 0;
    for (int c = 0; c < 3; ++c) {
      const float* pv = out->val.chan(0, c);
      const float* tv = target.chan(0, c);
      for (size_t i = 0; i < plane; ++i) {
        double d = double(pv[i]) - double(tv[i]);
        loss_unc += std::sqrt(d * d + 1e-6);
        d = g.rgb[c] * pv[i] - double(tv[i]);
        loss_corr += std::sqrt(d * d + 1e-6);
      }
    }
    loss_unc /= double(3 * plane);
    loss_corr /= double(3 * plane);

    nn::Var<float> loss;
    if (cfg.color_correct_loss) {
      Tensor<float> gt(1, 3, 1, 1);
      for (int c = 0; c < 3; ++c) gt.v[c] = float(g.rgb[c]);
      loss = nn::charbonnier_loss(nn::mul(out, nn::make_const(std::move(gt))), target);
    } else {
      loss = nn::charbonnier_loss(out, target);
    }
    last_loss = loss->val.v[0];
    if (!std::isfinite(last_loss))
      throw NumericError("non-finite loss at step " + std::to_string(step + 1));
    nn::backward(loss);
    adam.step(model.params().entries());

    const int64_t done = step + 1;
    if (done % cfg.log_every == 0 || done == cfg.steps) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const ordered_json line{{"step", done},
                              {"loss", last_loss},
                              {"loss_corrected", loss_corr},
                              {"loss_uncorrected", loss_unc},
                              {"lr", adam.lr()},
                              {"wallclock_s", wall}};
      metrics << line.dump() << "\n";
      metrics.flush();
    }
    if (done % cfg.checkpoint_every == 0 || done == cfg.steps) {
      last_ckpt = cfg.out_dir + "/" + step_name(done);
      save_checkpoint(last_ckpt, model, done, &adam, &rng);
      save_checkpoint(cfg.out_dir + "/last.ckpt", model, done, &adam, &rng);
    }
  }

  if (last_ckpt.empty()) {
    // Resume target was already complete; still leave a usable checkpoint.
    last_ckpt = cfg.out_dir + "/last.ckpt";
    save_checkpoint(last_ckpt, model, std::max(start, cfg.steps), &adam, &rng);
  }

  TrainResult res;
  res.steps = cfg.steps;
  res.final_loss = last_loss;
  res.checkpoint = last_ckpt;
  res.metrics = metrics_path;
  return res;
}

}  // namespace rawvsr

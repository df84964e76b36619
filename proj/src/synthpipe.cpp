#include "rawvsr/synthpipe.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rawvsr/pngio.h"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rawvsr {

namespace {
// Rng stream tags.
constexpr uint64_t kGainTag = 0x6761696eu;   // per-clip gains
constexpr uint64_t kNoiseTag = 0x6e6f6973u;  // per-frame noise
constexpr uint64_t kClipTag = 0x636c6970u;   // clip seeds in make_dataset
constexpr uint64_t kSceneTag = 0x7363656eu;  // procedural scene params

std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.png", idx);
  return buf;
}
}  // namespace

void DegradationConfig::validate() const {
  if (scale != 2 && scale != 3 && scale != 4)
    throw ConfigError("scale must be 2, 3 or 4");
  if (blur_sigma < 0 || read_noise_sigma < 0 || shot_noise_gain < 0)
    throw ConfigError("blur/noise parameters must be non-negative");
  if (!(channel_gain_range[0] > 0) || channel_gain_range[0] > channel_gain_range[1])
    throw ConfigError("channel_gain_range must satisfy 0 < lo <= hi");
  if (bit_depth < 8 || bit_depth > 16) throw ConfigError("bit_depth must be in [8,16]");
}

double linearize_value(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double delinearize_value(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

Image linearize(const Image& srgb) {
  Image out = srgb;
  for (auto& v : out.data) v = float(linearize_value(v));
  return out;
}

Image delinearize(const Image& linear) {
  Image out = linear;
  for (auto& v : out.data) v = float(delinearize_value(v));
  return out;
}

RawBayerFrame mosaic(const Image& linear_rgb, BayerPhase phase) {
  if (linear_rgb.channels != 3) throw ShapeError("mosaic expects 3 channels");
  if (!is_even(linear_rgb.height) || !is_even(linear_rgb.width))
    throw ShapeError("mosaic expects even dimensions");
  // Color of each 2x2 tile position: sites are (R, G1, G2, B).
  const auto sites = phase_sites(phase);
  int tile[2][2];
  const int colors[4] = {0, 1, 1, 2};
  for (int k = 0; k < 4; ++k) tile[sites[k][0]][sites[k][1]] = colors[k];

  RawBayerFrame f;
  f.data = Image(1, linear_rgb.height, linear_rgb.width);
  f.phase = phase;
  f.black_level = 0.f;
  f.white_level = 1.f;
  f.normalized = true;
  for (int y = 0; y < linear_rgb.height; ++y)
    for (int x = 0; x < linear_rgb.width; ++x)
      f.data.at(0, y, x) = linear_rgb.at(tile[y & 1][x & 1], y, x);
  return f;
}

RawBayerFrame quantize_raw(const RawBayerFrame& linear_mosaic, int bit_depth) {
  if (!linear_mosaic.normalized) throw MetadataError("quantize_raw expects normalized input");
  const double white = double((1u << bit_depth) - 1u);
  RawBayerFrame out = linear_mosaic;
  for (auto& v : out.data.data)
    v = float(std::lround(std::clamp(double(v), 0.0, 1.0) * white));
  out.bit_depth = bit_depth;
  out.black_level = 0.f;
  out.white_level = float(white);
  out.normalized = false;
  return out;
}

std::array<double, 3> sample_gains(const DegradationConfig& cfg) {
  Rng g = Rng::derive(cfg.seed, {kGainTag});
  std::array<double, 3> b;
  for (int c = 0; c < 3; ++c) b[c] = g.uniform(cfg.channel_gain_range[0], cfg.channel_gain_range[1]);
  return b;
}

RawBayerFrame degrade_frame(const Image& hr_srgb, const DegradationConfig& cfg,
                            const std::array<double, 3>& gains, Rng& noise_rng,
                            Image* lr_rgb_out) {
  if (hr_srgb.channels != 3) throw ShapeError("degrade_frame expects 3 channels");
  const int s = cfg.scale;
  if (hr_srgb.height % (2 * s) || hr_srgb.width % (2 * s))
    throw ShapeError("HR dims must be divisible by 2*scale");

  Image lin = linearize(hr_srgb);
  lin = gaussian_blur(lin, cfg.blur_sigma);
  Image lr = resize_bicubic(lin, hr_srgb.height / s, hr_srgb.width / s);
  for (int c = 0; c < 3; ++c) {
    float* p = lr.plane(c);
    for (size_t i = 0; i < lr.plane_size(); ++i) p[i] = float(p[i] * gains[c]);
  }
  if (lr_rgb_out) *lr_rgb_out = delinearize(lr);

  RawBayerFrame mos = mosaic(lr, cfg.phase);
  if (cfg.read_noise_sigma > 0 || cfg.shot_noise_gain > 0) {
    const double r2 = cfg.read_noise_sigma * cfg.read_noise_sigma;
    for (auto& v : mos.data.data) {
      const double var = r2 + cfg.shot_noise_gain * std::max(0.0, double(v));
      v = float(v + noise_rng.normal() * std::sqrt(var));
    }
  }
  return quantize_raw(mos, cfg.bit_depth);
}

ClipSample degrade_clip(const std::vector<Image>& hr_clip, const DegradationConfig& cfg,
                        int n_neighbors) {
  cfg.validate();
  if (n_neighbors < 0) throw ConfigError("n_neighbors must be >= 0");
  const int win = 2 * n_neighbors + 1;
  if (int(hr_clip.size()) < win) throw ShapeError("clip shorter than 2N+1 frames");
  const int s = cfg.scale;
  const int div = 8 * s;  // 2^3 * s keeps the LR pyramid-compatible
  for (const Image& f : hr_clip) {
    if (f.channels != 3 || !f.same_shape(hr_clip.front()))
      throw ShapeError("clip frames must be consistent 3-channel images");
    if (f.height % div || f.width % div)
      throw ShapeError("HR dims must be divisible by 8*scale");
  }

  ClipSample out;
  out.applied_gains = sample_gains(cfg);
  const int center = (int(hr_clip.size()) - 1) / 2;
  for (int i = center - n_neighbors; i <= center + n_neighbors; ++i) {
    Rng noise = Rng::derive(cfg.seed, {kNoiseTag, uint64_t(i)});
    Image lr_rgb;
    out.lr_raw.push_back(degrade_frame(hr_clip[i], cfg, out.applied_gains, noise, &lr_rgb));
    out.lr_rgb.push_back(std::move(lr_rgb));
  }
  out.hr_rgb = hr_clip[center];
  return out;
}

std::vector<Image> procedural_clip(int frames, int height, int width, uint64_t seed) {
  if (frames < 1 || height < 8 || width < 8)
    throw ConfigError("procedural_clip needs frames >= 1 and dims >= 8");
  Rng rng = Rng::derive(seed, {kSceneTag});

  struct Wave {
    double kx, ky, phase, amp;
    double w[3];
  };
  struct Blob {
    double cx, cy, inv2s2, amp;
    double w[3];
  };
  const int n_waves = 10, n_blobs = 4;
  std::vector<Wave> waves(n_waves);
  double amp_sum = 0;
  for (auto& wv : waves) {
    const double wavelength = std::exp(rng.uniform(std::log(6.0), std::log(56.0)));
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double k = 2.0 * M_PI / wavelength;
    wv.kx = k * std::cos(theta);
    wv.ky = k * std::sin(theta);
    wv.phase = rng.uniform(0.0, 2.0 * M_PI);
    wv.amp = rng.uniform(0.3, 1.0);
    amp_sum += wv.amp;
    for (double& c : wv.w) c = rng.uniform(0.4, 1.0);
  }
  for (auto& wv : waves) wv.amp *= 0.38 / amp_sum;
  std::vector<Blob> blobs(n_blobs);
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.15, 0.85) * width;
    b.cy = rng.uniform(0.15, 0.85) * height;
    const double sg = rng.uniform(0.02, 0.07) * std::min(width, height);
    b.inv2s2 = 1.0 / (2.0 * sg * sg);
    b.amp = rng.uniform(0.12, 0.22) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (double& c : b.w) c = rng.uniform(0.4, 1.0);
  }
  // Global subpixel drift, px/frame; rigid scene so homography alignment holds.
  const double vx = rng.uniform(0.3, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double vy = rng.uniform(0.3, 1.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);

  std::vector<Image> clip;
  clip.reserve(frames);
  for (int t = 0; t < frames; ++t) {
    Image im(3, height, width);
    const double ox = vx * t, oy = vy * t;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double px = x - ox, py = y - oy;
        double v[3] = {0.52, 0.5, 0.48};
        for (const auto& wv : waves) {
          const double s = std::sin(wv.kx * px + wv.ky * py + wv.phase) * wv.amp;
          for (int c = 0; c < 3; ++c) v[c] += s * wv.w[c];
        }
        for (const auto& b : blobs) {
          const double dx = px - b.cx, dy = py - b.cy;
          const double g = b.amp * std::exp(-(dx * dx + dy * dy) * b.inv2s2);
          for (int c = 0; c < 3; ++c) v[c] += g * b.w[c];
        }
        for (int c = 0; c < 3; ++c)
          im.at(c, y, x) = float(std::clamp(v[c], 0.02, 0.98));
      }
    }
    clip.push_back(std::move(im));
  }
  return clip;
}

std::vector<ClipInfo> DatasetManifest::clips_for(int scale, const std::string& split) const {
  std::vector<ClipInfo> out;
  for (const auto& c : clips)
    if (c.scale == scale && (split.empty() || c.split == split)) out.push_back(c);
  return out;
}

namespace {

std::vector<std::vector<Image>> read_source_clips(const std::string& src_dir) {
  std::vector<fs::path> clip_dirs;
  for (const auto& e : fs::directory_iterator(src_dir))
    if (e.is_directory()) clip_dirs.push_back(e.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());
  if (clip_dirs.empty()) throw IoError("no clip directories under " + src_dir);

  std::vector<std::vector<Image>> clips;
  for (const auto& d : clip_dirs) {
    std::vector<fs::path> pngs;
    for (const auto& e : fs::directory_iterator(d))
      if (e.path().extension() == ".png") pngs.push_back(e.path());
    std::sort(pngs.begin(), pngs.end());
    if (pngs.empty()) throw IoError("no PNG frames in " + d.string());
    std::vector<Image> frames;
    for (const auto& p : pngs) frames.push_back(read_png_rgb8(p.string()));
    clips.push_back(std::move(frames));
  }
  return clips;
}

Image center_crop_multiple(const Image& im, int div) {
  const int h = im.height / div * div, w = im.width / div * div;
  if (h == 0 || w == 0) throw ShapeError("frame too small for requested scale");
  const int y0 = (im.height - h) / 2 & ~1, x0 = (im.width - w) / 2 & ~1;
  return crop(im, x0, y0, w, h);
}

json gains_json(const std::array<double, 3>& g) { return json::array({g[0], g[1], g[2]}); }

}  // namespace

DatasetManifest make_dataset(const std::string& out_dir, const DatasetSpec& spec) {
  spec.degrade.validate();
  for (int s : spec.scales)
    if (s != 2 && s != 3 && s != 4) throw ConfigError("scales must be drawn from {2,3,4}");
  if (spec.scales.empty()) throw ConfigError("at least one scale required");

  fs::path out(out_dir);
  if (fs::exists(out) && !fs::is_empty(out) && !spec.force)
    throw IoError("output directory is not empty (use force): " + out_dir);
  fs::create_directories(out);

  std::vector<std::vector<Image>> sources;
  if (spec.src_dir.empty()) {
    if (spec.clips < 1) throw ConfigError("need at least one clip");
    for (int i = 0; i < spec.clips; ++i) {
      const uint64_t cs = Rng::derive(spec.seed, {kSceneTag, uint64_t(i)}).next_u64();
      sources.push_back(procedural_clip(spec.frames_per_clip, spec.hr_size, spec.hr_size, cs));
    }
  } else {
    sources = read_source_clips(spec.src_dir);
  }

  DatasetManifest man;
  man.bit_depth = spec.degrade.bit_depth;
  man.phase = spec.degrade.phase;
  man.scales = spec.scales;

  const int n_clips = int(sources.size());
  for (int s : spec.scales) {
    const int div = 8 * s;
    for (int ci = 0; ci < n_clips; ++ci) {
      DegradationConfig cfg = spec.degrade;
      cfg.scale = s;
      cfg.seed = Rng::derive(spec.seed, {kClipTag, uint64_t(s), uint64_t(ci)}).next_u64();
      const auto gains = sample_gains(cfg);

      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "clip_%03d", ci);
      const fs::path clip_dir = out / (std::to_string(s) + "x") / idbuf;
      fs::create_directories(clip_dir / "lr_raw");
      fs::create_directories(clip_dir / "lr_rgb");
      fs::create_directories(clip_dir / "hr_rgb");

      ClipInfo info;
      info.id = idbuf;
      info.scale = s;
      info.split = ci >= n_clips - spec.val_clips ? "val" : "train";
      info.seed = cfg.seed;
      info.frames = int(sources[ci].size());
      info.gains = gains;
      for (int fi = 0; fi < int(sources[ci].size()); ++fi) {
        const Image hr = center_crop_multiple(sources[ci][fi], div);
        info.hr_height = hr.height;
        info.hr_width = hr.width;
        Rng noise = Rng::derive(cfg.seed, {kNoiseTag, uint64_t(fi)});
        Image lr_rgb;
        RawBayerFrame raw = degrade_frame(hr, cfg, gains, noise, &lr_rgb);
        write_raw_frame((clip_dir / "lr_raw" / frame_name(fi)).string(), raw);
        write_png_rgb8((clip_dir / "lr_rgb" / frame_name(fi)).string(), lr_rgb);
        write_png_rgb8((clip_dir / "hr_rgb" / frame_name(fi)).string(), hr);
      }
      man.clips.push_back(std::move(info));
    }
  }

  json j;
  j["version"] = 1;
  j["bit_depth"] = man.bit_depth;
  j["phase"] = to_string(man.phase);
  j["scales"] = man.scales;
  j["clips"] = json::array();
  for (const auto& c : man.clips) {
    j["clips"].push_back({{"id", c.id},
                          {"scale", c.scale},
                          {"split", c.split},
                          {"seed", c.seed},
                          {"frames", c.frames},
                          {"hr_height", c.hr_height},
                          {"hr_width", c.hr_width},
                          {"gains", gains_json(c.gains)}});
  }
  std::ofstream f(out / "manifest.json");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("failed to write manifest");
  return man;
}

DatasetManifest load_manifest(const std::string& root) {
  std::ifstream f(fs::path(root) / "manifest.json");
  if (!f) throw IoError("missing manifest.json under " + root);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
  DatasetManifest man;
  man.bit_depth = j.at("bit_depth").get<int>();
  man.phase = phase_from_string(j.at("phase").get<std::string>());
  man.scales = j.at("scales").get<std::vector<int>>();
  for (const auto& cj : j.at("clips")) {
    ClipInfo c;
    c.id = cj.at("id").get<std::string>();
    c.scale = cj.at("scale").get<int>();
    c.split = cj.at("split").get<std::string>();
    c.seed = cj.at("seed").get<uint64_t>();
    c.frames = cj.at("frames").get<int>();
    c.hr_height = cj.at("hr_height").get<int>();
    c.hr_width = cj.at("hr_width").get<int>();
    auto g = cj.at("gains");
    for (int i = 0; i < 3; ++i) c.gains[i] = g.at(i).get<double>();
    man.clips.push_back(std::move(c));
  }
  return man;
}

LoadedClip load_clip(const std::string& root, const ClipInfo& info) {
  LoadedClip out;
  out.info = info;
  const fs::path dir = fs::path(root) / (std::to_string(info.scale) + "x") / info.id;
  for (int fi = 0; fi < info.frames; ++fi) {
    out.lr_raw.push_back(read_raw_frame((dir / "lr_raw" / frame_name(fi)).string()));
    out.lr_rgb.push_back(read_png_rgb8((dir / "lr_rgb" / frame_name(fi)).string()));
    out.hr_rgb.push_back(read_png_rgb8((dir / "hr_rgb" / frame_name(fi)).string()));
  }
  return out;
}

}  // namespace rawvsr

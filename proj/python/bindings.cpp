#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>

#include "rawvsr/alignkit.h"
#include "rawvsr/evalkit.h"
#include "rawvsr/rawcore.h"
#include "rawvsr/synthpipe.h"
#include "rawvsr/trainer.h"

namespace py = pybind11;
using namespace rawvsr;

namespace {

// Channel-last numpy interop: (H, W) or (H, W, C) float arrays.
Image image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected a (H, W[, C]) array");
  const int h = int(a.shape(0)), w = int(a.shape(1));
  const int c = a.ndim() == 3 ? int(a.shape(2)) : 1;
  Image im(c, h, w);
  const float* src = a.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) im.at(ch, y, x) = src[(size_t(y) * w + x) * c + ch];
  return im;
}

py::array image_to_array(const Image& im) {
  if (im.channels == 1) {
    py::array_t<float> a({im.height, im.width});
    std::copy(im.data.begin(), im.data.end(), a.mutable_data());
    return a;
  }
  py::array_t<float> a({im.height, im.width, im.channels});
  float* dst = a.mutable_data();
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c)
        dst[(size_t(y) * im.width + x) * im.channels + c] = im.at(c, y, x);
  return a;
}

Homography homography_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != 9) throw py::value_error("homography needs 9 elements");
  Homography h;
  std::copy(a.data(), a.data() + 9, h.m.begin());
  h.normalize();
  return h;
}

py::array homography_to_array(const Homography& h) {
  py::array_t<double> a({3, 3});
  std::copy(h.m.begin(), h.m.end(), a.mutable_data());
  return a;
}

Correspondences pairs_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape(1) != 2 || b.shape(1) != 2 ||
      a.shape(0) != b.shape(0))
    throw py::value_error("expected matching (N, 2) point arrays");
  Correspondences c;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    c.a.push_back({a.at(i, 0), a.at(i, 1)});
    c.b.push_back({b.at(i, 0), b.at(i, 1)});
  }
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "raw-domain video super-resolution core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<RawBayerFrame>(m, "RawFrame")
      .def(py::init([](py::array_t<float, py::array::c_style | py::array::forcecast> data,
                       const std::string& phase, int bit_depth, float black_level,
                       float white_level, bool normalized) {
             if (data.ndim() != 2) throw py::value_error("mosaic must be 2-D");
             RawBayerFrame f;
             f.data = image_from_array(data);
             f.phase = phase_from_string(phase);
             f.bit_depth = bit_depth;
             f.black_level = black_level;
             f.white_level = white_level;
             f.normalized = normalized;
             f.validate();
             return f;
           }),
           py::arg("data"), py::arg("phase") = "RGGB", py::arg("bit_depth") = 16,
           py::arg("black_level") = 0.f, py::arg("white_level") = 65535.f,
           py::arg("normalized") = false)
      .def_property_readonly("data", [](const RawBayerFrame& f) { return image_to_array(f.data); })
      .def_property_readonly("phase", [](const RawBayerFrame& f) { return to_string(f.phase); })
      .def_readonly("bit_depth", &RawBayerFrame::bit_depth)
      .def_readonly("black_level", &RawBayerFrame::black_level)
      .def_readonly("white_level", &RawBayerFrame::white_level)
      .def_readonly("normalized", &RawBayerFrame::normalized)
      .def_property_readonly("shape", [](const RawBayerFrame& f) {
        return py::make_tuple(f.height(), f.width());
      });

  m.def("normalize_raw", [](const RawBayerFrame& f) { return normalize_raw(f); });
  m.def(
      "pack_bayer",
      [](const RawBayerFrame& f) {
        const PackedRawFrame p = pack_bayer(f);
        return image_to_array(p.planes);  // (H/2, W/2, 4), order R, G1, G2, B
      },
      py::arg("frame"));
  m.def(
      "unpack_bayer",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> planes,
         const RawBayerFrame& like) {
        PackedRawFrame p;
        p.planes = image_from_array(planes);
        if (p.planes.channels != 4) throw py::value_error("expected a (H, W, 4) array");
        p.phase = like.phase;
        p.bit_depth = like.bit_depth;
        p.black_level = like.black_level;
        p.white_level = like.white_level;
        p.normalized = like.normalized;
        return unpack_bayer(p);
      },
      py::arg("planes"), py::arg("like"));
  m.def("crop_phase_safe", [](const RawBayerFrame& f, int x0, int y0, int w, int h) {
    return crop_phase_safe(f, x0, y0, w, h);
  });

  m.def("linearize", [](py::array_t<float, py::array::c_style | py::array::forcecast> a) {
    return image_to_array(linearize(image_from_array(a)));
  });
  m.def("delinearize", [](py::array_t<float, py::array::c_style | py::array::forcecast> a) {
    return image_to_array(delinearize(image_from_array(a)));
  });
  m.def(
      "mosaic",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> rgb,
         const std::string& phase) {
        return mosaic(image_from_array(rgb), phase_from_string(phase));
      },
      py::arg("linear_rgb"), py::arg("phase") = "RGGB");
  m.def("quantize_raw", &quantize_raw, py::arg("frame"), py::arg("bit_depth"));
  m.def(
      "procedural_clip",
      [](int frames, int height, int width, uint64_t seed) {
        py::list out;
        for (const Image& f : procedural_clip(frames, height, width, seed))
          out.append(image_to_array(f));
        return out;
      },
      py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("seed") = 0);
  m.def(
      "resize_bicubic",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> a, int out_h, int out_w) {
        return image_to_array(resize_bicubic(image_from_array(a), out_h, out_w));
      },
      py::arg("image"), py::arg("out_h"), py::arg("out_w"));

  m.def(
      "estimate_homography",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
         py::array_t<double, py::array::c_style | py::array::forcecast> b, double tau, int iters,
         uint64_t seed) {
        const HomographyFit fit = estimate_homography(pairs_from_arrays(a, b), tau, iters, seed);
        py::dict d;
        d["h"] = homography_to_array(fit.h);
        d["inliers"] = py::cast(std::vector<bool>(fit.inliers.begin(), fit.inliers.end()));
        d["inlier_ratio"] = fit.inlier_ratio;
        return d;
      },
      py::arg("points_a"), py::arg("points_b"), py::arg("tau") = 1.5, py::arg("iters") = 2000,
      py::arg("seed") = 7);
  m.def(
      "warp_homography",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> img,
         py::array_t<double, py::array::c_style | py::array::forcecast> h, int out_h, int out_w) {
        return image_to_array(
            warp_homography(image_from_array(img), homography_from_array(h), out_h, out_w));
      },
      py::arg("image"), py::arg("h"), py::arg("out_h"), py::arg("out_w"));

  m.def("psnr", [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
                   py::array_t<float, py::array::c_style | py::array::forcecast> b) {
    const PsnrResult r = psnr(image_from_array(a), image_from_array(b));
    return r.infinite ? std::numeric_limits<double>::infinity() : r.db;
  });
  m.def("ssim", [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
                   py::array_t<float, py::array::c_style | py::array::forcecast> b) {
    return ssim(image_from_array(a), image_from_array(b));
  });

  m.def(
      "count_params_flops",
      [](const std::string& config_json) {
        const ModelConfig cfg =
            config_json.empty() ? ModelConfig{} : ModelConfig::from_json_string(config_json);
        const ModelCost cost = count_params_flops(cfg);
        return py::make_tuple(cost.params, cost.flops_g);
      },
      py::arg("config_json") = "");

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](const std::string& config_json) {
             const ModelConfig cfg =
                 config_json.empty() ? ModelConfig{} : ModelConfig::from_json_string(config_json);
             return Model<float>(cfg);
           }),
           py::arg("config_json") = "")
      .def_static("load",
                  [](const std::string& path) {
                    const CheckpointInfo info = read_checkpoint_info(path);
                    auto m = std::make_unique<Model<float>>(info.config);
                    load_checkpoint(path, *m);
                    return m;
                  })
      .def("save", [](Model<float>& self, const std::string& path) {
        save_checkpoint(path, self, 0);
      })
      .def_property_readonly("config_json",
                             [](const Model<float>& self) { return self.config().to_json_string(); })
      .def_property_readonly("frames",
                             [](const Model<float>& self) { return self.config().frames(); })
      .def("infer", [](Model<float>& self, const std::vector<RawBayerFrame>& window) {
        return image_to_array(self.infer(window));
      });

  m.def(
      "train",
      [](const std::string& config_json) {
        const TrainResult r = train(TrainConfig::from_json_string(config_json));
        py::dict d;
        d["steps"] = r.steps;
        d["final_loss"] = r.final_loss;
        d["checkpoint"] = r.checkpoint;
        d["metrics"] = r.metrics;
        return d;
      },
      py::arg("config_json"));

  m.def(
      "synth_dataset",
      [](const std::string& out_dir, int clips, int frames, int hr_size, int scale,
         uint64_t seed, bool force) {
        DatasetSpec spec;
        spec.clips = clips;
        spec.frames_per_clip = frames;
        spec.hr_size = hr_size;
        spec.scales = {scale};
        spec.seed = seed;
        spec.force = force;
        const DatasetManifest man = make_dataset(out_dir, spec);
        return man.clips.size();
      },
      py::arg("out_dir"), py::arg("clips") = 2, py::arg("frames") = 7,
      py::arg("hr_size") = 96, py::arg("scale") = 4, py::arg("seed") = 1234,
      py::arg("force") = false);
}

#include "rawvsr/losses.h"

#include <Eigen/Dense>
#include <cmath>

namespace rawvsr {

double fit_channel_gain(std::span<const float> lr, std::span<const float> gt,
                        bool* degenerate) {
  if (lr.size() != gt.size() || lr.empty())
    throw ShapeError("gain fit needs equal-length, non-empty channels");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < lr.size(); ++i) {
    num += double(lr[i]) * gt[i];
    den += double(lr[i]) * lr[i];
  }
  if (degenerate) *degenerate = den == 0.0;
  return num / (den + 1e-8);
}

ColorGains fit_gains(const Image& lr_rgb, const Image& gt_down, bool* degenerate) {
  if (!lr_rgb.same_shape(gt_down) || lr_rgb.channels != 3)
    throw ShapeError("gain fit needs matching 3-channel frames");
  ColorGains g;
  bool any_degenerate = false;
  for (int c = 0; c < 3; ++c) {
    bool d = false;
    g.rgb[c] = fit_channel_gain({lr_rgb.plane(c), lr_rgb.plane_size()},
                                {gt_down.plane(c), gt_down.plane_size()}, &d);
    any_degenerate |= d;
  }
  if (degenerate) *degenerate = any_degenerate;
  return g;
}

Image apply_color_correction(const Image& rgb, const ColorGains& gains) {
  if (rgb.channels != 3) throw ShapeError("color correction expects 3 channels");
  Image out = rgb;
  for (int c = 0; c < 3; ++c) {
    float* p = out.plane(c);
    for (size_t i = 0; i < out.plane_size(); ++i) p[i] = float(p[i] * gains.rgb[c]);
  }
  return out;
}

ColorMatrix fit_ccm(const Image& lr_rgb, const Image& gt_down, bool* degenerate) {
  if (!lr_rgb.same_shape(gt_down) || lr_rgb.channels != 3)
    throw ShapeError("ccm fit needs matching 3-channel frames");
  const size_t n = lr_rgb.plane_size();
  if (n < 3) throw ShapeError("ccm fit needs at least 3 pixels");

  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d atb = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    Eigen::Vector3d a(lr_rgb.plane(0)[i], lr_rgb.plane(1)[i], lr_rgb.plane(2)[i]);
    Eigen::Vector3d b(gt_down.plane(0)[i], gt_down.plane(1)[i], gt_down.plane(2)[i]);
    ata += a * a.transpose();
    atb += a * b.transpose();
  }

  Eigen::Matrix3d mt;  // solves ata * mt = atb, M = mt^T
  const bool rank_ok = std::abs(ata.determinant()) > 1e-12 * std::max(1.0, ata.norm());
  if (rank_ok) {
    mt = ata.ldlt().solve(atb);
  } else {
    mt = ata.completeOrthogonalDecomposition().pseudoInverse() * atb;
  }
  if (degenerate) *degenerate = !rank_ok;

  ColorMatrix m;
  Eigen::Matrix3d M = mt.transpose();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m.m[r * 3 + c] = M(r, c);
  return m;
}

Image apply_ccm(const Image& rgb, const ColorMatrix& m) {
  if (rgb.channels != 3) throw ShapeError("ccm expects 3 channels");
  Image out(3, rgb.height, rgb.width);
  for (size_t i = 0; i < rgb.plane_size(); ++i) {
    const double r = rgb.plane(0)[i], g = rgb.plane(1)[i], b = rgb.plane(2)[i];
    for (int c = 0; c < 3; ++c)
      out.plane(c)[i] = float(m.m[c * 3] * r + m.m[c * 3 + 1] * g + m.m[c * 3 + 2] * b);
  }
  return out;
}

double charbonnier(std::span<const float> pred, std::span<const float> target, double eps) {
  if (pred.size() != target.size() || pred.empty())
    throw ShapeError("charbonnier needs equal non-empty shapes");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - target[i];
    acc += std::sqrt(d * d + eps);
  }
  return acc / double(pred.size());
}

double charbonnier(const Image& pred, const Image& target, double eps) {
  if (!pred.same_shape(target)) throw ShapeError("charbonnier needs equal shapes");
  return charbonnier(std::span<const float>(pred.data),
                     std::span<const float>(target.data), eps);
}

}  // namespace rawvsr

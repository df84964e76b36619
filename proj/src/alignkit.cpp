#include "rawvsr/alignkit.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace rawvsr {

namespace {

using Mat3 = Eigen::Matrix3d;

Mat3 to_eigen(const Homography& h) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = h.m[r * 3 + c];
  return m;
}

Homography from_eigen(const Mat3& m) {
  Homography h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h.m[r * 3 + c] = m(r, c);
  h.normalize();
  return h;
}

}  // namespace

Homography Homography::translation(double dx, double dy) {
  Homography h;
  h.m = {1, 0, dx, 0, 1, dy, 0, 0, 1};
  return h;
}

std::array<double, 2> Homography::apply(double x, double y) const {
  const double w = m[6] * x + m[7] * y + m[8];
  return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

double Homography::det() const { return to_eigen(*this).determinant(); }

Homography Homography::inverse() const {
  const Mat3 e = to_eigen(*this);
  if (std::abs(e.determinant()) < 1e-12) throw EstimationError("singular homography");
  return from_eigen(Mat3(e.inverse()));
}

Homography Homography::compose(const Homography& rhs) const {
  return from_eigen(Mat3(to_eigen(*this) * to_eigen(rhs)));
}

void Homography::normalize() {
  if (std::abs(m[8]) < 1e-12) throw EstimationError("homography has vanishing scale");
  for (double& v : m) v /= m[8];
  m[8] = 1.0;
}

// ---------------------------------------------------------------------------
// Corners and matching

std::vector<std::array<double, 2>> harris_corners(const Image& gray_in, int max_corners,
                                                  double quality, double min_distance) {
  const Image gray = gray_in.channels == 1 ? gray_in : to_gray(gray_in);
  const int h = gray.height, w = gray.width;
  if (h < 16 || w < 16) return {};

  Image prods(3, h, w);  // Ixx, Iyy, Ixy from Sobel gradients
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      auto g = [&](int yy, int xx) { return gray.at(0, yy, xx); };
      const double ix = (g(y - 1, x + 1) + 2 * g(y, x + 1) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y, x - 1) + g(y + 1, x - 1));
      const double iy = (g(y + 1, x - 1) + 2 * g(y + 1, x) + g(y + 1, x + 1)) -
                        (g(y - 1, x - 1) + 2 * g(y - 1, x) + g(y - 1, x + 1));
      prods.at(0, y, x) = float(ix * ix);
      prods.at(1, y, x) = float(iy * iy);
      prods.at(2, y, x) = float(ix * iy);
    }
  }
  prods = gaussian_blur(prods, 1.5);

  Image resp(1, h, w);
  double max_r = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double xx = prods.at(0, y, x), yy = prods.at(1, y, x), xy = prods.at(2, y, x);
      const double r = xx * yy - xy * xy - 0.04 * (xx + yy) * (xx + yy);
      resp.at(0, y, x) = float(r);
      max_r = std::max(max_r, r);
    }
  }
  if (max_r <= 0.0) return {};
  const double thresh = quality * max_r;

  struct Cand {
    double r;
    int x, y;
  };
  std::vector<Cand> cands;
  const int border = 8;
  for (int y = border; y < h - border; ++y) {
    for (int x = border; x < w - border; ++x) {
      const double r = resp.at(0, y, x);
      if (r < thresh) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dy && !dx) continue;
          if (resp.at(0, y + dy, x + dx) > r) {
            peak = false;
            break;
          }
        }
      if (peak) cands.push_back({r, x, y});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.r != b.r) return a.r > b.r;
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });

  std::vector<std::array<double, 2>> out;
  const double min_d2 = min_distance * min_distance;
  for (const auto& c : cands) {
    bool ok = true;
    for (const auto& p : out) {
      const double dx = p[0] - c.x, dy = p[1] - c.y;
      if (dx * dx + dy * dy < min_d2) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    out.push_back({double(c.x), double(c.y)});
    if (int(out.size()) >= max_corners) break;
  }
  return out;
}

namespace {

inline float at_clamped(const Image& im, int y, int x) {
  return im.at(0, std::clamp(y, 0, im.height - 1), std::clamp(x, 0, im.width - 1));
}

double zncc(const Image& a, int ax, int ay, const Image& b, int bx, int by, int pr) {
  const int n = (2 * pr + 1) * (2 * pr + 1);
  double sa = 0, sb = 0;
  for (int dy = -pr; dy <= pr; ++dy)
    for (int dx = -pr; dx <= pr; ++dx) {
      sa += at_clamped(a, ay + dy, ax + dx);
      sb += at_clamped(b, by + dy, bx + dx);
    }
  const double ma = sa / n, mb = sb / n;
  double num = 0, va = 0, vb = 0;
  for (int dy = -pr; dy <= pr; ++dy)
    for (int dx = -pr; dx <= pr; ++dx) {
      const double da = at_clamped(a, ay + dy, ax + dx) - ma;
      const double db = at_clamped(b, by + dy, bx + dx) - mb;
      num += da * db;
      va += da * da;
      vb += db * db;
    }
  if (va < 1e-12 || vb < 1e-12) return -1.0;
  return num / std::sqrt(va * vb);
}

// Single-axis parabolic peak offset from three samples, clamped to [-1/2, 1/2].
double parabola(double cm, double c0, double cp) {
  const double denom = cm - 2 * c0 + cp;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
}

}  // namespace

Correspondences match_corners(const Image& gray_a, const Image& gray_b,
                              const std::vector<std::array<double, 2>>& corners_a,
                              int search_radius, int patch_radius, double min_zncc) {
  if (!gray_a.same_shape(gray_b)) throw ShapeError("match_corners expects equal sizes");
  const Image& a = gray_a;
  const Image& b = gray_b;
  const int sr = search_radius, side = 2 * sr + 1;

  Correspondences out;
  std::vector<double> score(size_t(side) * side);
  for (const auto& c : corners_a) {
    const int ax = int(std::lround(c[0])), ay = int(std::lround(c[1]));
    double best = -2.0;
    int bdx = 0, bdy = 0;
    for (int dy = -sr; dy <= sr; ++dy)
      for (int dx = -sr; dx <= sr; ++dx) {
        const double s = zncc(a, ax, ay, b, ax + dx, ay + dy, patch_radius);
        score[size_t(dy + sr) * side + (dx + sr)] = s;
        if (s > best) {
          best = s;
          bdx = dx;
          bdy = dy;
        }
      }
    if (best < min_zncc) continue;
    auto sc = [&](int dy, int dx) { return score[size_t(dy + sr) * side + (dx + sr)]; };
    double ox = 0, oy = 0;  // maximize, so negate for the parabola form
    if (bdx > -sr && bdx < sr) ox = parabola(-sc(bdy, bdx - 1), -best, -sc(bdy, bdx + 1));
    if (bdy > -sr && bdy < sr) oy = parabola(-sc(bdy - 1, bdx), -best, -sc(bdy + 1, bdx));
    out.a.push_back({double(ax), double(ay)});
    out.b.push_back({ax + bdx + ox, ay + bdy + oy});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Homography estimation

namespace {

Homography dlt_fit(const std::vector<std::array<double, 2>>& pa,
                   const std::vector<std::array<double, 2>>& pb) {
  const int n = int(pa.size());
  auto normalizer = [](const std::vector<std::array<double, 2>>& p) {
    double cx = 0, cy = 0;
    for (const auto& q : p) {
      cx += q[0];
      cy += q[1];
    }
    cx /= p.size();
    cy /= p.size();
    double d = 0;
    for (const auto& q : p) d += std::hypot(q[0] - cx, q[1] - cy);
    d /= p.size();
    if (d < 1e-9) throw EstimationError("coincident points");
    const double s = std::sqrt(2.0) / d;
    Mat3 t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
  };
  const Mat3 ta = normalizer(pa), tb = normalizer(pb);

  Eigen::MatrixXd A(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d qa = ta * Eigen::Vector3d(pa[i][0], pa[i][1], 1.0);
    const Eigen::Vector3d qb = tb * Eigen::Vector3d(pb[i][0], pb[i][1], 1.0);
    const double x = qa.x(), y = qa.y(), u = qb.x(), v = qb.y();
    A.row(2 * i) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    A.row(2 * i + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Mat3 hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  return from_eigen(Mat3(tb.inverse() * hn * ta));
}

bool degenerate_quad(const std::vector<std::array<double, 2>>& p) {
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k) {
        const double ax = p[j][0] - p[i][0], ay = p[j][1] - p[i][1];
        const double bx = p[k][0] - p[i][0], by = p[k][1] - p[i][1];
        if (std::abs(ax * by - ay * bx) < 1e-6) return true;
      }
  return false;
}

double reproj_err(const Homography& h, const std::array<double, 2>& a,
                  const std::array<double, 2>& b) {
  const auto p = h.apply(a[0], a[1]);
  return std::hypot(p[0] - b[0], p[1] - b[1]);
}

}  // namespace

HomographyFit estimate_homography(const Correspondences& pairs, double tau, int iters,
                                  uint64_t seed) {
  const int n = int(pairs.size());
  if (n < 4 || pairs.b.size() != pairs.a.size())
    throw EstimationError("homography needs >= 4 correspondences");

  Rng rng(seed);
  int best_count = -1;
  double best_err = 0.0;
  std::vector<uint8_t> best_mask;
  bool any_model = false;

  for (int it = 0; it < iters; ++it) {
    int idx[4];
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = int(rng.uniform_int(0, n - 1));
        fresh = true;
        for (int j = 0; j < k; ++j) fresh &= idx[j] != idx[k];
      } while (!fresh);
    }
    std::vector<std::array<double, 2>> sa, sb;
    for (int k = 0; k < 4; ++k) {
      sa.push_back(pairs.a[idx[k]]);
      sb.push_back(pairs.b[idx[k]]);
    }
    if (degenerate_quad(sa) || degenerate_quad(sb)) continue;

    Homography h;
    try {
      h = dlt_fit(sa, sb);
    } catch (const EstimationError&) {
      continue;
    }
    any_model = true;
    int count = 0;
    double err_sum = 0.0;
    std::vector<uint8_t> mask(n, 0);
    for (int i = 0; i < n; ++i) {
      const double e = reproj_err(h, pairs.a[i], pairs.b[i]);
      if (e <= tau) {
        mask[i] = 1;
        ++count;
        err_sum += e;
      }
    }
    if (count > best_count || (count == best_count && err_sum < best_err)) {
      best_count = count;
      best_err = err_sum;
      best_mask = std::move(mask);
    }
  }
  if (!any_model || best_count < 4)
    throw EstimationError("no homography consensus (degenerate correspondences)");

  // All-inlier refit, then a final consistent inlier mask.
  HomographyFit fit;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<std::array<double, 2>> ia, ib;
    for (int i = 0; i < n; ++i)
      if (best_mask[i]) {
        ia.push_back(pairs.a[i]);
        ib.push_back(pairs.b[i]);
      }
    if (int(ia.size()) < 4) throw EstimationError("consensus collapsed during refit");
    fit.h = dlt_fit(ia, ib);
    int count = 0;
    for (int i = 0; i < n; ++i) {
      best_mask[i] = reproj_err(fit.h, pairs.a[i], pairs.b[i]) <= tau;
      count += best_mask[i];
    }
    best_count = count;
  }
  fit.inliers = best_mask;
  fit.inlier_ratio = double(best_count) / n;
  if (best_count < 4) throw EstimationError("consensus collapsed during refit");
  return fit;
}

// ---------------------------------------------------------------------------
// Warping

Image warp_homography(const Image& img, const Homography& h, int out_h, int out_w,
                      Image* validity, WarpInterp interp) {
  const Homography hinv = h.inverse();
  Image out(img.channels, out_h, out_w);
  if (validity) *validity = Image(1, out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto q = hinv.apply(x, y);
      bool ok;
      if (interp == WarpInterp::Nearest) {
        const long xi = std::lround(q[0]), yi = std::lround(q[1]);
        ok = xi >= 0 && xi < img.width && yi >= 0 && yi < img.height;
        if (ok)
          for (int c = 0; c < img.channels; ++c)
            out.at(c, y, x) = img.at(c, int(yi), int(xi));
      } else {
        ok = q[0] >= 0.0 && q[0] <= img.width - 1 && q[1] >= 0.0 && q[1] <= img.height - 1;
        if (ok)
          for (int c = 0; c < img.channels; ++c)
            out.at(c, y, x) = sample_bilinear(img.plane(c), img.height, img.width, q[1], q[0]);
      }
      if (validity) validity->at(0, y, x) = ok ? 1.f : 0.f;
    }
  }
  return out;
}

namespace {

// Bilinear field resize with center alignment (for flow pyramids).
void resize_field(const std::vector<float>& src, int sh, int sw, std::vector<float>& dst,
                  int dh, int dw) {
  dst.resize(size_t(dh) * dw);
  const double sy = double(sh) / dh, sx = double(sw) / dw;
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x)
      dst[size_t(y) * dw + x] =
          sample_bilinear(src.data(), sh, sw, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
}

void box3(std::vector<float>& f, int h, int w) {
  std::vector<float> tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          s += f[size_t(std::clamp(y + dy, 0, h - 1)) * w + std::clamp(x + dx, 0, w - 1)];
      tmp[size_t(y) * w + x] = float(s / 9.0);
    }
  f.swap(tmp);
}

double sad(const Image& a, int ax, int ay, const Image& b, int bx, int by, int pr) {
  double s = 0;
  for (int dy = -pr; dy <= pr; ++dy)
    for (int dx = -pr; dx <= pr; ++dx)
      s += std::abs(double(at_clamped(a, ay + dy, ax + dx)) - at_clamped(b, by + dy, bx + dx));
  return s;
}

}  // namespace

FlowField dense_flow(const Image& a_in, const Image& b_in, const FlowConfig& cfg) {
  if (a_in.height != b_in.height || a_in.width != b_in.width)
    throw ShapeError("dense_flow expects equal sizes");
  const Image a0 = a_in.channels == 1 ? a_in : to_gray(a_in);
  const Image b0 = b_in.channels == 1 ? b_in : to_gray(b_in);

  int levels = cfg.levels;
  if (levels <= 0) {
    levels = 1;
    while (levels < 4 && std::min(a0.height, a0.width) >> levels >= 16) ++levels;
  }
  std::vector<Image> pa{a0}, pb{b0};
  for (int l = 1; l < levels; ++l) {
    const Image& pr = pa.back();
    if (std::min(pr.height, pr.width) / 2 < 8) break;
    pa.push_back(resize_bicubic(pa.back(), pa.back().height / 2, pa.back().width / 2));
    pb.push_back(resize_bicubic(pb.back(), pb.back().height / 2, pb.back().width / 2));
  }
  levels = int(pa.size());

  const int r = cfg.search_radius, side = 2 * r + 1;
  FlowField flow(pa.back().height, pa.back().width);
  std::vector<double> cost(size_t(side) * side);

  for (int l = levels - 1; l >= 0; --l) {
    const Image& a = pa[l];
    const Image& b = pb[l];
    if (l != levels - 1) {
      FlowField up(a.height, a.width);
      resize_field(flow.dx, flow.height, flow.width, up.dx, a.height, a.width);
      resize_field(flow.dy, flow.height, flow.width, up.dy, a.height, a.width);
      for (auto& v : up.dx) v *= 2.f;
      for (auto& v : up.dy) v *= 2.f;
      flow = std::move(up);
    }
    FlowField next(a.height, a.width);
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        const int ix = int(std::lround(flow.u(y, x))), iy = int(std::lround(flow.v(y, x)));
        double best = 1e300;
        int bdx = 0, bdy = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double c = sad(a, x, y, b, x + ix + dx, y + iy + dy, cfg.patch_radius);
            cost[size_t(dy + r) * side + (dx + r)] = c;
            const long td = long(ix + dx) * (ix + dx) + long(iy + dy) * (iy + dy);
            const long bd = long(ix + bdx) * (ix + bdx) + long(iy + bdy) * (iy + bdy);
            if (c < best - 1e-12 || (std::abs(c - best) <= 1e-12 && td < bd)) {
              best = c;
              bdx = dx;
              bdy = dy;
            }
          }
        auto cc = [&](int dy, int dx) { return cost[size_t(dy + r) * side + (dx + r)]; };
        double ox = 0, oy = 0;
        // An exact match (SAD 0) is already the minimum; a parabola fit through
        // asymmetric neighbours would pull it off-grid.
        if (best > 0) {
          if (bdx > -r && bdx < r) ox = parabola(cc(bdy, bdx - 1), best, cc(bdy, bdx + 1));
          if (bdy > -r && bdy < r) oy = parabola(cc(bdy - 1, bdx), best, cc(bdy + 1, bdx));
        }
        next.u(y, x) = float(ix + bdx + ox);
        next.v(y, x) = float(iy + bdy + oy);
      }
    }
    if (cfg.smooth) {
      box3(next.dx, a.height, a.width);
      box3(next.dy, a.height, a.width);
    }
    flow = std::move(next);
  }
  return flow;
}

Image warp_flow(const Image& b, const FlowField& flow, WarpInterp interp) {
  if (b.height != flow.height || b.width != flow.width)
    throw ShapeError("warp_flow expects matching sizes");
  Image out(b.channels, b.height, b.width);
  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const double qx = x + flow.u(y, x), qy = y + flow.v(y, x);
      if (interp == WarpInterp::Nearest) {
        const int xi = std::clamp(int(std::lround(qx)), 0, b.width - 1);
        const int yi = std::clamp(int(std::lround(qy)), 0, b.height - 1);
        for (int c = 0; c < b.channels; ++c) out.at(c, y, x) = b.at(c, yi, xi);
      } else {
        for (int c = 0; c < b.channels; ++c)
          out.at(c, y, x) = sample_bilinear(b.plane(c), b.height, b.width, qy, qx);
      }
    }
  return out;
}

Homography rescale_for_subframe(const Homography& h) {
  // S·H·S^{-1} written out so the power-of-two scaling stays exact.
  Homography out;
  out.m = {h.m[0],     h.m[1],     0.5 * h.m[2], h.m[3],     h.m[4],
           0.5 * h.m[5], 2.0 * h.m[6], 2.0 * h.m[7], h.m[8]};
  return out;
}

FlowField rescale_for_subframe(const FlowField& f) {
  FlowField out(f.height / 2, f.width / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double fy = 2.0 * y + 0.5, fx = 2.0 * x + 0.5;
      out.u(y, x) = 0.5f * sample_bilinear(f.dx.data(), f.height, f.width, fy, fx);
      out.v(y, x) = 0.5f * sample_bilinear(f.dy.data(), f.height, f.width, fy, fx);
    }
  return out;
}

double median_flow_magnitude(const FlowField& f) {
  if (f.dx.empty()) return 0.0;
  std::vector<double> mags(f.dx.size());
  for (size_t i = 0; i < mags.size(); ++i) mags[i] = std::hypot(f.dx[i], f.dy[i]);
  const size_t mid = mags.size() / 2;
  std::nth_element(mags.begin(), mags.begin() + mid, mags.end());
  return mags[mid];
}

// ---------------------------------------------------------------------------

AlignedPair align_pair(const Image& lr_rgb, const Image& hr_rgb, const RawBayerFrame& lr_raw,
                       const RawBayerFrame& hr_raw, int scale, const AlignConfig& cfg) {
  if (lr_rgb.channels != 3 || hr_rgb.channels != 3)
    throw ShapeError("align_pair expects 3-channel sRGB frames");
  if (hr_rgb.height != scale * lr_rgb.height || hr_rgb.width != scale * lr_rgb.width)
    throw ShapeError("HR/LR sizes inconsistent with scale");
  if (lr_raw.height() != lr_rgb.height || lr_raw.width() != lr_rgb.width ||
      hr_raw.height() != hr_rgb.height || hr_raw.width() != hr_rgb.width)
    throw ShapeError("raw frames must match their sRGB frames");
  if (cfg.margin <= 0 || !is_even(cfg.margin)) throw ConfigError("margin must be positive and even");
  if (lr_rgb.height <= 2 * cfg.margin || lr_rgb.width <= 2 * cfg.margin)
    throw ShapeError("margin leaves no pixels");

  const int hh = hr_rgb.height, hw = hr_rgb.width;
  const Image up = resize_bicubic(lr_rgb, hh, hw);
  const Image ga = to_gray(up);
  const Image gb = to_gray(hr_rgb);

  const auto corners = harris_corners(ga, cfg.max_corners);
  const Correspondences pairs =
      match_corners(ga, gb, corners, cfg.search_radius, cfg.patch_radius, cfg.min_zncc);
  if (pairs.size() < 8) throw EstimationError("too few corner matches for alignment");
  const HomographyFit fit = estimate_homography(pairs, cfg.tau, cfg.ransac_iters, cfg.seed);

  const Homography h_ba = fit.h.inverse();  // warp map: HR -> upsampled-LR frame
  Image validity;
  Image warped = warp_homography(hr_rgb, h_ba, hh, hw, &validity);
  const FlowField flow = dense_flow(ga, to_gray(warped), cfg.flow);
  Image refined = warp_flow(warped, flow);
  validity = warp_flow(validity, flow, WarpInterp::Nearest);

  const int lm = cfg.margin, hm = cfg.margin * scale;
  const int lw = lr_rgb.width - 2 * lm, lh = lr_rgb.height - 2 * lm;

  AlignedPair out;
  out.h = fit.h;
  out.inlier_ratio = fit.inlier_ratio;
  out.lr_rgb = crop(lr_rgb, lm, lm, lw, lh);
  out.hr_rgb = crop(refined, hm, hm, lw * scale, lh * scale);
  out.lr_raw = crop_phase_safe(lr_raw, lm, lm, lw, lh);

  // Verification flow on the cropped interior.
  const FlowField vf = dense_flow(crop(ga, hm, hm, lw * scale, lh * scale), out.hr_rgb, cfg.flow);
  out.residual_median = median_flow_magnitude(vf);

  const Image vcrop = crop(validity, hm, hm, lw * scale, lh * scale);
  double cov = 0;
  for (float v : vcrop.data) cov += v;
  out.coverage = cov / double(vcrop.numel());
  if (out.coverage < cfg.min_coverage)
    throw EstimationError("insufficient overlap after alignment");

  // Raw frames follow the same transforms in the packed half-resolution domain.
  PackedRawFrame packed = pack_bayer(hr_raw);
  const Homography hs = rescale_for_subframe(h_ba);
  Image planes = warp_homography(packed.planes, hs, packed.height(), packed.width(), nullptr,
                                 cfg.raw_interp);
  planes = warp_flow(planes, rescale_for_subframe(flow), cfg.raw_interp);
  packed.planes = crop(planes, hm / 2, hm / 2, lw * scale / 2, lh * scale / 2);
  out.hr_raw = unpack_bayer(packed);
  return out;
}

}  // namespace rawvsr

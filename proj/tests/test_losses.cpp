#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rawvsr/losses.h"

using namespace rawvsr;

namespace {
double sse(std::span<const float> lr, std::span<const float> gt, double a) {
  double s = 0;
  for (size_t i = 0; i < lr.size(); ++i) {
    const double d = a * lr[i] - gt[i];
    s += d * d;
  }
  return s;
}
}  // namespace

TEST_CASE("gain fit closed form: proportional data") {
  const std::vector<float> lr{1.f, 2.f, 3.f}, gt{2.f, 4.f, 6.f};
  CHECK(fit_channel_gain(lr, gt) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("gain fit closed form: asymmetric data") {
  // sum(lr*gt) / sum(lr^2) = (0 + 2) / 2 = 1.
  const std::vector<float> lr{1.f, 1.f}, gt{0.f, 2.f};
  CHECK(fit_channel_gain(lr, gt) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gain fit scales inversely with the input") {
  Rng rng(5);
  std::vector<float> lr(64), gt(64), lr2(64);
  for (size_t i = 0; i < lr.size(); ++i) {
    lr[i] = float(rng.uniform(0.05, 1.0));
    gt[i] = float(rng.uniform(0.05, 1.0));
    lr2[i] = 2.f * lr[i];
  }
  const double a = fit_channel_gain(lr, gt);
  const double a2 = fit_channel_gain(lr2, gt);
  CHECK(a2 == doctest::Approx(a / 2.0).epsilon(1e-9));
}

TEST_CASE("fitted gain minimizes the squared error") {
  Rng rng(6);
  std::vector<float> lr(128), gt(128);
  for (size_t i = 0; i < lr.size(); ++i) {
    lr[i] = float(rng.uniform(0.05, 1.0));
    gt[i] = float(rng.uniform(0.05, 1.0));
  }
  const double a = fit_channel_gain(lr, gt);
  const double best = sse(lr, gt, a);
  for (double d : {-0.05, -0.01, 0.01, 0.05}) CHECK(sse(lr, gt, a + d) > best);
}

TEST_CASE("all-zero input is flagged degenerate") {
  const std::vector<float> lr(16, 0.f), gt(16, 0.5f);
  bool degenerate = false;
  CHECK(fit_channel_gain(lr, gt, &degenerate) == doctest::Approx(0.0));
  CHECK(degenerate);
}

TEST_CASE("per-channel gains fit independently") {
  Image lr(3, 4, 4), gt(3, 4, 4);
  Rng rng(7);
  const double beta[3] = {0.8, 1.0, 1.25};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const float v = float(rng.uniform(0.1, 0.9));
        gt.at(c, y, x) = v;
        lr.at(c, y, x) = float(v * beta[c]);
      }
  const ColorGains g = fit_gains(lr, gt);
  for (int c = 0; c < 3; ++c) CHECK(g.rgb[c] == doctest::Approx(1.0 / beta[c]).epsilon(1e-5));

  const Image corrected = apply_color_correction(lr, g);
  for (size_t i = 0; i < gt.data.size(); ++i)
    CHECK(corrected.data[i] == doctest::Approx(gt.data[i]).epsilon(1e-5));
}

TEST_CASE("ccm fit recovers a known mixing matrix") {
  const ColorMatrix truth{{0.9, 0.1, 0.0, 0.05, 0.85, 0.1, 0.0, 0.2, 0.8}};
  Rng rng(8);
  Image gt(3, 6, 6);
  for (auto& v : gt.data) v = float(rng.uniform(0.05, 0.95));
  // lr = T^-1 would need an inverse; instead fit the forward map gt -> mixed.
  Image mixed = apply_ccm(gt, truth);
  const ColorMatrix fit = fit_ccm(gt, mixed);
  for (int i = 0; i < 9; ++i) CHECK(fit.m[i] == doctest::Approx(truth.m[i]).epsilon(1e-4));

  bool degenerate = true;
  const ColorMatrix ident = fit_ccm(gt, gt, &degenerate);
  CHECK(!degenerate);
  for (int i = 0; i < 9; ++i)
    CHECK(ident.m[i] == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0).epsilon(2e-5));
}

TEST_CASE("ccm beats per-channel gains on cross-channel casts") {
  const ColorMatrix cast{{1.0, 0.15, 0.0, 0.0, 1.0, 0.15, 0.15, 0.0, 1.0}};
  Rng rng(9);
  Image gt(3, 8, 8);
  for (auto& v : gt.data) v = float(rng.uniform(0.05, 0.95));
  const Image lr = apply_ccm(gt, cast);

  const Image by_gain = apply_color_correction(lr, fit_gains(lr, gt));
  const Image by_ccm = apply_ccm(lr, fit_ccm(lr, gt));
  double e_gain = 0, e_ccm = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    e_gain += std::pow(double(by_gain.data[i]) - gt.data[i], 2);
    e_ccm += std::pow(double(by_ccm.data[i]) - gt.data[i], 2);
  }
  CHECK(e_ccm < e_gain * 0.1);
}

TEST_CASE("charbonnier oracle values") {
  const std::vector<float> a{0.5f, 0.5f}, b{0.5f, 0.5f};
  // Zero difference: sqrt(eps) with eps = 1e-6 is exactly 1e-3.
  CHECK(charbonnier(a, b) == doctest::Approx(1e-3).epsilon(1e-12));

  const std::vector<float> p{3.f, 4.f}, q{0.f, 0.f};
  CHECK(charbonnier(p, q) == doctest::Approx(3.5).epsilon(1e-6));

  Image x(1, 1, 2), y(1, 1, 2);
  x.data = {1.f, 0.f};
  y.data = {0.f, 0.f};
  CHECK(charbonnier(x, y) == doctest::Approx(0.5 * (std::sqrt(1.0 + 1e-6) + 1e-3)).epsilon(1e-9));
}

TEST_CASE("charbonnier approaches L1 for large errors") {
  const std::vector<float> p{10.f}, q{0.f};
  CHECK(charbonnier(p, q) == doctest::Approx(10.0).epsilon(1e-7));
}

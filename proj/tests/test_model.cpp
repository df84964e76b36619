#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "rawvsr/model.h"

using namespace rawvsr;
using nn::Var;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int scale = 2, int n_neighbors = 1) {
  ModelConfig c;
  c.scale = scale;
  c.n_neighbors = n_neighbors;
  c.channels = 16;
  c.levels = 2;
  c.deform_groups = 2;
  c.extract_blocks = 1;
  c.recon_blocks = 1;
  c.skf_reduction = 4;
  return c;
}

/// Consistent mosaic/packed window tensors built through the packing path.
std::pair<Tensor<float>, Tensor<float>> window_tensors(Rng& rng, int k, int h, int w) {
  Tensor<float> mos(k, 1, h, w), pk(k, 4, h / 2, w / 2);
  for (int i = 0; i < k; ++i) {
    RawBayerFrame f;
    f.data = Image(1, h, w);
    f.black_level = 0.f;
    f.white_level = 1.f;
    f.normalized = true;
    for (auto& v : f.data.data) v = float(rng.uniform());
    std::copy(f.data.data.begin(), f.data.data.end(), mos.chan(i, 0));
    const PackedRawFrame p = pack_bayer(f);
    for (int c = 0; c < 4; ++c)
      std::copy(p.planes.plane(c), p.planes.plane(c) + p.planes.plane_size(), pk.chan(i, c));
  }
  return {mos, pk};
}

RawBayerFrame random_counts_frame(Rng& rng, int h, int w) {
  RawBayerFrame f;
  f.data = Image(1, h, w);
  f.bit_depth = 12;
  f.black_level = 0.f;
  f.white_level = 4095.f;
  for (auto& v : f.data.data) v = float(rng.uniform_int(0, 4095));
  return f;
}

fs::path scratch(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "rawvsr_test_model";
  fs::create_directories(p);
  return p / leaf;
}

}  // namespace

TEST_CASE("config validation catches bad values") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  ModelConfig c = tiny_config();
  c.scale = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.deform_groups = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.skf_reduction = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.levels = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.n_neighbors = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json round trips") {
  ModelConfig c = tiny_config(3, 2);
  c.align = AlignMode::Separate;
  c.fusion = FusionMode::Concat;
  c.branches = Branches::BayerOnly;
  c.interaction = false;
  c.init_seed = 77;
  const ModelConfig back = ModelConfig::from_json_string(c.to_json_string());
  CHECK(back.scale == 3);
  CHECK(back.n_neighbors == 2);
  CHECK(back.channels == c.channels);
  CHECK(back.align == AlignMode::Separate);
  CHECK(back.fusion == FusionMode::Concat);
  CHECK(back.branches == Branches::BayerOnly);
  CHECK(back.interaction == false);
  CHECK(back.init_seed == 77);
  CHECK(back.to_json_string() == c.to_json_string());
}

TEST_CASE("upsampling factorizes per scale") {
  CHECK(factor_stages(2) == std::vector<int>{2});
  CHECK(factor_stages(3) == std::vector<int>{3});
  CHECK(factor_stages(4) == std::vector<int>{2, 2});
  CHECK(factor_stages(6) == std::vector<int>{2, 3});
  CHECK(factor_stages(8) == std::vector<int>{2, 2, 2});
}

TEST_CASE("forward produces scaled RGB for each magnification") {
  Rng rng(31);
  const struct {
    int scale, size, expect;
  } cases[] = {{2, 64, 128}, {3, 48, 144}, {4, 32, 128}};
  for (const auto& cs : cases) {
    Model<float> m(tiny_config(cs.scale));
    auto [mos, pk] = window_tensors(rng, 3, cs.size, cs.size);
    const Var<float> out = m.forward(mos, pk);
    CHECK(out->val.shape() == std::array<int, 4>{1, 3, cs.expect, cs.expect});
    for (float v : out->val.v) CHECK(std::isfinite(v));
  }
}

TEST_CASE("forward accepts a seven-frame window") {
  Rng rng(32);
  Model<float> m(tiny_config(2, 3));
  CHECK(m.config().frames() == 7);
  auto [mos, pk] = window_tensors(rng, 7, 16, 24);
  CHECK(m.forward(mos, pk)->val.shape() == std::array<int, 4>{1, 3, 32, 48});
}

TEST_CASE("forward rejects inconsistent windows") {
  Rng rng(33);
  Model<float> m(tiny_config());
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  const Tensor<float> short_mos(2, 1, 16, 16);
  CHECK_THROWS_AS(m.forward(short_mos, pk), ShapeError);
  const Tensor<float> odd(3, 1, 18, 18);  // not a multiple of 8
  CHECK_THROWS_AS(m.forward(odd, pk), ShapeError);
  const Tensor<float> bad_pk(3, 4, 4, 4);
  CHECK_THROWS_AS(m.forward(mos, bad_pk), ShapeError);
}

TEST_CASE("forward is deterministic and seed-sensitive") {
  Rng rng(34);
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  Model<float> a(tiny_config()), b(tiny_config());
  const auto ya = a.forward(mos, pk), yb = b.forward(mos, pk);
  for (size_t i = 0; i < ya->val.v.size(); ++i) CHECK(ya->val.v[i] == yb->val.v[i]);

  ModelConfig other = tiny_config();
  other.init_seed = 999;
  Model<float> c(other);
  const auto yc = c.forward(mos, pk);
  bool same = true;
  for (size_t i = 0; i < ya->val.v.size(); ++i) same &= ya->val.v[i] == yc->val.v[i];
  CHECK(!same);
}

TEST_CASE("co-alignment transfers sub-frame offsets to the Bayer branch") {
  Rng rng(35);
  ModelConfig cfg = tiny_config();
  cfg.levels = 3;
  Model<float> m(cfg);
  auto [mos, pk] = window_tensors(rng, 3, 32, 32);
  CoAlignTrace<float> trace;
  m.forward(mos, pk, &trace);
  REQUIRE(trace.sub_offsets.size() == 3);    // 2N+1 neighbor slots
  REQUIRE(trace.bayer_offsets.size() == 3);
  for (size_t i = 0; i < trace.sub_offsets.size(); ++i) {
    REQUIRE(trace.sub_offsets[i].size() == size_t(cfg.levels) + 1);  // + cascade
    for (size_t l = 0; l < trace.sub_offsets[i].size(); ++l) {
      const Tensor<float>& so = trace.sub_offsets[i][l];
      const Tensor<float>& bo = trace.bayer_offsets[i][l];
      CHECK(bo.h == 2 * so.h);
      CHECK(bo.w == 2 * so.w);
      const Var<float> expect =
          nn::scale(nn::upsample_bilinear(nn::make_const(so), 2), 2.f);
      REQUIRE(expect->val.same_shape(bo));
      float max_diff = 0;
      for (size_t j = 0; j < bo.v.size(); ++j)
        max_diff = std::max(max_diff, std::abs(bo.v[j] - expect->val.v[j]));
      CHECK(max_diff == 0.f);

      const Tensor<float>& sm = trace.sub_masks[i][l];
      const Tensor<float>& bm = trace.bayer_masks[i][l];
      const Var<float> expect_m = nn::upsample_bilinear(nn::make_const(sm), 2);
      REQUIRE(expect_m->val.same_shape(bm));
      float mask_diff = 0;
      for (size_t j = 0; j < bm.v.size(); ++j)
        mask_diff = std::max(mask_diff, std::abs(bm.v[j] - expect_m->val.v[j]));
      CHECK(mask_diff == 0.f);
    }
  }
}

TEST_CASE("shared alignment reuses one set of deformable kernels") {
  ModelConfig cfg = tiny_config();
  Model<float> shared(cfg);
  for (int l = 0; l <= cfg.levels; ++l) {
    REQUIRE(shared.sub_dconv_weight(l) != nullptr);
    CHECK(shared.sub_dconv_weight(l).get() == shared.bayer_dconv_weight(l).get());
  }

  cfg.align = AlignMode::Separate;
  Model<float> separate(cfg);
  for (int l = 0; l <= cfg.levels; ++l) {
    REQUIRE(separate.sub_dconv_weight(l) != nullptr);
    REQUIRE(separate.bayer_dconv_weight(l) != nullptr);
    CHECK(separate.sub_dconv_weight(l).get() != separate.bayer_dconv_weight(l).get());
  }

  cfg.align = AlignMode::CoShared;
  cfg.branches = Branches::SubframeOnly;
  Model<float> sub_only(cfg);
  CHECK(sub_only.sub_dconv_weight(0) != nullptr);
  CHECK(sub_only.bayer_dconv_weight(0) == nullptr);
}

TEST_CASE("masks start at identity modulation") {
  Rng rng(36);
  Model<float> m(tiny_config());
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  CoAlignTrace<float> trace;
  m.forward(mos, pk, &trace);
  // Zero-initialized mask heads under 2*sigmoid give exactly 1 everywhere,
  // and offset heads give exactly 0.
  for (const auto& per_level : trace.sub_masks)
    for (const auto& t : per_level)
      for (float v : t.v) CHECK(v == 1.f);
  for (const auto& per_level : trace.sub_offsets)
    for (const auto& t : per_level)
      for (float v : t.v) CHECK(v == 0.f);
}

TEST_CASE("fusion gates are a convex combination") {
  Rng rng(37);
  ModelConfig cfg = tiny_config();
  Model<float> m(cfg);
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  CoAlignTrace<float> trace;
  m.forward(mos, pk, &trace);
  REQUIRE(trace.fusion_weights.shape() ==
          std::array<int, 4>{2, cfg.channels, 1, 1});
  // Zero-initialized excitations: both branches weighted exactly 0.5.
  for (float v : trace.fusion_weights.v) CHECK(v == 0.5f);

  // Randomize the excitation layers; the gates must still sum to one.
  for (const char* name : {"skf.excite_b.w", "skf.excite_s.w", "skf.excite_b.b", "skf.excite_s.b"}) {
    auto p = m.params().find(name);
    REQUIRE(p != nullptr);
    for (auto& v : p->val.v) v = float(rng.uniform(-1.0, 1.0));
  }
  CoAlignTrace<float> t2;
  m.forward(mos, pk, &t2);
  bool any_off_half = false;
  for (int c = 0; c < cfg.channels; ++c) {
    const float wb = t2.fusion_weights.at(0, c, 0, 0);
    const float ws = t2.fusion_weights.at(1, c, 0, 0);
    CHECK(wb + ws == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(wb >= 0.f);
    CHECK(ws >= 0.f);
    any_off_half |= std::abs(wb - 0.5f) > 1e-3f;
  }
  CHECK(any_off_half);
}

TEST_CASE("architecture switches change the computation") {
  Rng rng(38);
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  const auto run = [&](ModelConfig cfg) {
    Model<float> m(cfg);
    return m.forward(mos, pk)->val;
  };
  const Tensor<float> base = run(tiny_config());
  ModelConfig c1 = tiny_config();
  c1.interaction = false;
  ModelConfig c2 = tiny_config();
  c2.fusion = FusionMode::Concat;
  ModelConfig c3 = tiny_config();
  c3.align = AlignMode::None;
  for (const ModelConfig& cfg : {c1, c2, c3}) {
    const Tensor<float> other = run(cfg);
    REQUIRE(other.same_shape(base));
    bool same = true;
    for (size_t i = 0; i < base.v.size(); ++i) same &= base.v[i] == other.v[i];
    CHECK(!same);
  }
}

TEST_CASE("single-branch models run end to end") {
  Rng rng(39);
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  ModelConfig cfg = tiny_config();
  cfg.branches = Branches::BayerOnly;
  CHECK(Model<float>(cfg).forward(mos, pk)->val.shape() ==
        std::array<int, 4>{1, 3, 32, 32});
  cfg.branches = Branches::SubframeOnly;
  CHECK(Model<float>(cfg).forward(mos, pk)->val.shape() ==
        std::array<int, 4>{1, 3, 32, 32});
}

TEST_CASE("infer clamps and sizes the output") {
  Rng rng(40);
  Model<float> m(tiny_config(2));
  std::vector<RawBayerFrame> window;
  for (int i = 0; i < 3; ++i) window.push_back(random_counts_frame(rng, 16, 24));
  const Image sr = m.infer(window);
  CHECK(sr.channels == 3);
  CHECK(sr.height == 32);
  CHECK(sr.width == 48);
  for (float v : sr.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  window.pop_back();
  CHECK_THROWS_AS(m.infer(window), ShapeError);
}

TEST_CASE("checkpoints round trip bitwise") {
  Rng rng(41);
  const ModelConfig cfg = tiny_config();
  Model<float> m(cfg);
  const auto path = scratch("model.ckpt").string();
  save_checkpoint(path, m, 42);

  const CheckpointInfo info = read_checkpoint_info(path);
  CHECK(info.step == 42);
  CHECK(info.config.to_json_string() == cfg.to_json_string());
  CHECK(!info.has_adam);

  ModelConfig other = cfg;
  other.init_seed = 123;  // same shapes, different values
  Model<float> loaded(other);
  load_checkpoint(path, loaded);
  auto [mos, pk] = window_tensors(rng, 3, 16, 16);
  const auto ya = m.forward(mos, pk), yb = loaded.forward(mos, pk);
  for (size_t i = 0; i < ya->val.v.size(); ++i) CHECK(ya->val.v[i] == yb->val.v[i]);

  ModelConfig mismatched = cfg;
  mismatched.channels = 24;
  Model<float> wrong(mismatched);
  CHECK_THROWS_AS(load_checkpoint(path, wrong), ConfigError);

  CHECK_THROWS_AS(read_checkpoint_info(scratch("absent.ckpt").string()), IoError);
}

TEST_CASE("adam state rides along in checkpoints") {
  Rng rng(42);
  const ModelConfig cfg = tiny_config();
  Model<float> m(cfg);
  nn::Adam<float> adam(5e-4);
  adam.ensure_state(m.params().entries());
  adam.set_t(17);
  for (auto& t : adam.m_state())
    for (auto& v : t.v) v = float(rng.uniform(-0.1, 0.1));
  const Rng rstate(99);
  const auto path = scratch("adam.ckpt").string();
  save_checkpoint(path, m, 17, &adam, &rstate);

  const CheckpointInfo info = read_checkpoint_info(path);
  CHECK(info.has_adam);
  CHECK(info.lr == 5e-4);
  CHECK(info.adam_t == 17);
  CHECK(info.has_rng);
  CHECK(info.rng_state == rstate.state());

  Model<float> m2(cfg);
  nn::Adam<float> adam2(1e-3);
  load_checkpoint(path, m2, &adam2);
  CHECK(adam2.t() == 17);
  REQUIRE(adam2.m_state().size() == adam.m_state().size());
  for (size_t i = 0; i < adam.m_state().size(); ++i)
    for (size_t j = 0; j < adam.m_state()[i].v.size(); ++j)
      CHECK(adam2.m_state()[i].v[j] == adam.m_state()[i].v[j]);
}

TEST_CASE("default capacity lands in the published window") {
  const ModelConfig cfg;
  Model<float> m(cfg);
  const double params_m = double(m.params().count_scalars()) / 1e6;
  CHECK(params_m > 4.8 * 0.75);
  CHECK(params_m < 4.8 * 1.25);
}

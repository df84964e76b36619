#include "rawvsr/model.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rawvsr {

using nlohmann::ordered_json;

const char* to_string(AlignMode m) {
  switch (m) {
    case AlignMode::CoShared: return "co_shared";
    case AlignMode::Separate: return "separate";
    case AlignMode::None: return "none";
  }
  return "?";
}
const char* to_string(FusionMode m) {
  return m == FusionMode::SKF ? "skf" : "concat";
}
const char* to_string(Branches b) {
  switch (b) {
    case Branches::Both: return "both";
    case Branches::BayerOnly: return "bayer_only";
    case Branches::SubframeOnly: return "subframe_only";
  }
  return "?";
}

AlignMode align_mode_from_string(const std::string& s) {
  if (s == "co_shared") return AlignMode::CoShared;
  if (s == "separate") return AlignMode::Separate;
  if (s == "none") return AlignMode::None;
  throw ConfigError("unknown align mode: " + s);
}
FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "skf") return FusionMode::SKF;
  if (s == "concat") return FusionMode::Concat;
  throw ConfigError("unknown fusion mode: " + s);
}
Branches branches_from_string(const std::string& s) {
  if (s == "both") return Branches::Both;
  if (s == "bayer_only") return Branches::BayerOnly;
  if (s == "subframe_only") return Branches::SubframeOnly;
  throw ConfigError("unknown branches: " + s);
}

void ModelConfig::validate() const {
  if (scale != 2 && scale != 3 && scale != 4)
    throw ConfigError("scale must be 2, 3 or 4");
  if (n_neighbors < 1 || n_neighbors > 10)
    throw ConfigError("n_neighbors out of range");
  if (channels < 8 || channels > 512) throw ConfigError("channels out of range");
  if (levels < 2 || levels > 5) throw ConfigError("levels must be in [2, 5]");
  if (deform_groups < 1 || channels % deform_groups != 0)
    throw ConfigError("channels must be divisible by deform_groups");
  if (skf_reduction < 1 || channels % skf_reduction != 0)
    throw ConfigError("channels must be divisible by skf_reduction");
  if (extract_blocks < 1 || extract_blocks > 40)
    throw ConfigError("extract_blocks out of range");
  if (recon_blocks < 1 || recon_blocks > 80)
    throw ConfigError("recon_blocks out of range");
}

std::string ModelConfig::to_json_string() const {
  ordered_json j;
  j["scale"] = scale;
  j["n_neighbors"] = n_neighbors;
  j["channels"] = channels;
  j["levels"] = levels;
  j["deform_groups"] = deform_groups;
  j["extract_blocks"] = extract_blocks;
  j["recon_blocks"] = recon_blocks;
  j["skf_reduction"] = skf_reduction;
  j["align"] = to_string(align);
  j["fusion"] = to_string(fusion);
  j["branches"] = to_string(branches);
  j["interaction"] = interaction;
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad model config json: ") + e.what());
  }
  ModelConfig c;
  c.scale = j.value("scale", c.scale);
  c.n_neighbors = j.value("n_neighbors", c.n_neighbors);
  c.channels = j.value("channels", c.channels);
  c.levels = j.value("levels", c.levels);
  c.deform_groups = j.value("deform_groups", c.deform_groups);
  c.extract_blocks = j.value("extract_blocks", c.extract_blocks);
  c.recon_blocks = j.value("recon_blocks", c.recon_blocks);
  c.skf_reduction = j.value("skf_reduction", c.skf_reduction);
  if (j.contains("align")) c.align = align_mode_from_string(j["align"]);
  if (j.contains("fusion")) c.fusion = fusion_mode_from_string(j["fusion"]);
  if (j.contains("branches")) c.branches = branches_from_string(j["branches"]);
  c.interaction = j.value("interaction", c.interaction);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

std::vector<int> factor_stages(int s) {
  if (s < 2) throw ConfigError("upsampling factor must be >= 2");
  std::vector<int> out;
  while (s > 1) {
    if (s % 2 == 0) {
      out.push_back(2);
      s /= 2;
    } else if (s % 3 == 0) {
      out.push_back(3);
      s /= 3;
    } else {
      throw ConfigError("upsampling factor must factor into 2s and 3s");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Model<T>::Impl {
  using V = nn::Var<T>;
  using C2 = nn::Conv2d<T>;

  ModelConfig cfg;
  nn::ParamStore<T> ps;

  bool has_bayer, has_sub, interact, do_skf;
  AlignMode align_eff;

  struct Extract {
    C2 first;
    std::vector<nn::ResBlock<T>> rbs;
    std::vector<C2> down, refine;
  };
  struct Heads {
    C2 off, mask;
  };
  struct Pred {
    std::vector<C2> a, b, c;
    C2 cas_a, cas_b;
  };
  struct AlignSet {
    bool own_pred = false;
    Pred pred;
    std::vector<Heads> heads;  // [levels + 1], last = cascade
    std::vector<V> dw, db;     // dconv weights, [levels + 1]
    std::vector<C2> merge;     // level-merge convs, [levels - 1]
  };
  struct Fuse {
    C2 q, k, v, ctx, emb, emb_ref, fuse1, s1, s2, s3, s4, s5, s6;
  };

  Extract ex_b, ex_s;
  AlignSet al_b, al_s;
  C2 inter_b2s, inter_s2b;
  Fuse fu_b, fu_s;
  C2 skf_up, skf_sq, skf_eb, skf_es, cat_fuse;
  std::vector<nn::ResBlock<T>> recon;
  std::vector<C2> up;
  std::vector<int> up_factors;
  C2 hr1, hr2, last, skip_a, skip_b;

  explicit Impl(const ModelConfig& c) : cfg(c), ps(c.init_seed) {
    cfg.validate();
    has_bayer = cfg.branches != Branches::SubframeOnly;
    has_sub = cfg.branches != Branches::BayerOnly;
    const bool both = has_bayer && has_sub;
    align_eff = cfg.align;
    if (!both && align_eff == AlignMode::CoShared) align_eff = AlignMode::Separate;
    interact = cfg.interaction && both;
    do_skf = cfg.fusion == FusionMode::SKF;

    const int C = cfg.channels;
    if (has_bayer) ex_b = make_extract("bayer", 1);
    if (has_sub) ex_s = make_extract("sub", 4);

    if (align_eff == AlignMode::CoShared) {
      make_align(al_s, "align.sub", "align.shared", nullptr);
      make_align(al_b, "align.bayer", "", &al_s);
    } else if (align_eff == AlignMode::Separate) {
      if (has_sub) make_align(al_s, "align.sub", "align.sub", nullptr);
      if (has_bayer) make_align(al_b, "align.bayer", "align.bayer", nullptr);
    }

    if (interact) {
      inter_b2s = C2(ps, "interact.b2s", C, C, 3, 2);
      inter_s2b = C2(ps, "interact.s2b", C, 4 * C, 3);
    }

    const int stack = cfg.frames() * (interact ? 2 : 1);
    if (has_bayer) fu_b = make_fuse("fuse.bayer", stack);
    if (has_sub) fu_s = make_fuse("fuse.sub", stack);

    if (both) {
      skf_up = C2(ps, "skf.up", C, 4 * C, 3);
      if (do_skf) {
        skf_sq = C2(ps, "skf.squeeze", C, C / cfg.skf_reduction, 1);
        skf_eb = C2(ps, "skf.excite_b", C / cfg.skf_reduction, C, 1, 1, -1,
                    nn::Init::Zero);
        skf_es = C2(ps, "skf.excite_s", C / cfg.skf_reduction, C, 1, 1, -1,
                    nn::Init::Zero);
      } else {
        cat_fuse = C2(ps, "skf.cat", 2 * C, C, 1);
      }
    }

    for (int i = 0; i < cfg.recon_blocks; ++i)
      recon.emplace_back(ps, "recon.rb" + std::to_string(i), C);
    const int base_factor = has_bayer ? cfg.scale : 2 * cfg.scale;
    up_factors = factor_stages(base_factor);
    for (size_t i = 0; i < up_factors.size(); ++i) {
      const int f = up_factors[i];
      up.emplace_back(ps, "recon.up" + std::to_string(i), C, C * f * f, 3);
    }
    hr1 = C2(ps, "recon.hr1", C, C, 3);
    hr2 = C2(ps, "recon.hr2", C, C, 3);
    last = C2(ps, "recon.last", C, 3, 3);
    const int s = cfg.scale;
    if (has_bayer) skip_a = C2(ps, "recon.skip_a", 1, 3 * s * s, 3);
    if (has_sub) skip_b = C2(ps, "recon.skip_b", 4, 3 * (2 * s) * (2 * s), 3);
  }

  Extract make_extract(const std::string& name, int cin) {
    const int C = cfg.channels;
    Extract ex;
    ex.first = C2(ps, name + ".first", cin, C, 3);
    for (int i = 0; i < cfg.extract_blocks; ++i)
      ex.rbs.emplace_back(ps, name + ".rb" + std::to_string(i), C);
    for (int l = 2; l <= cfg.levels; ++l) {
      ex.down.emplace_back(ps, name + ".l" + std::to_string(l) + ".down", C, C, 3, 2);
      ex.refine.emplace_back(ps, name + ".l" + std::to_string(l) + ".refine", C, C, 3);
    }
    return ex;
  }

  /// `dconv_prefix` names the deformable-conv weights; when `share` is given
  /// the set reuses its dconv weights instead (co-alignment) and carries only
  /// its own merge convs.
  void make_align(AlignSet& s, const std::string& name, const std::string& dconv_prefix,
                  const AlignSet* share) {
    const int C = cfg.channels, L = cfg.levels, KG = 9 * cfg.deform_groups;
    if (share) {
      s.dw = share->dw;
      s.db = share->db;
    } else {
      for (int l = 0; l <= L; ++l) {
        const std::string base =
            dconv_prefix + (l == L ? ".cas" : ".l" + std::to_string(l + 1));
        s.dw.push_back(ps.create(base + ".dconv.w", C, C, 3, 3, nn::Init::Kaiming));
        s.db.push_back(ps.create(base + ".dconv.b", 1, C, 1, 1, nn::Init::Zero));
      }
      s.own_pred = true;
      for (int l = 0; l < L; ++l) {
        const std::string base = name + ".l" + std::to_string(l + 1);
        s.pred.a.emplace_back(ps, base + ".o1", 2 * C, C, 3);
        if (l == L - 1) {
          s.pred.b.emplace_back(ps, base + ".o2", C, C, 3);
          s.pred.c.emplace_back();
        } else {
          s.pred.b.emplace_back(ps, base + ".o2", 2 * C, C, 3);
          s.pred.c.emplace_back(ps, base + ".o3", C, C, 3);
        }
        s.heads.push_back({C2(ps, base + ".off", C, 2 * KG, 3, 1, -1, nn::Init::Zero),
                           C2(ps, base + ".mask", C, KG, 3, 1, -1, nn::Init::Zero)});
      }
      s.pred.cas_a = C2(ps, name + ".cas.o1", 2 * C, C, 3);
      s.pred.cas_b = C2(ps, name + ".cas.o2", C, C, 3);
      s.heads.push_back(
          {C2(ps, name + ".cas.off", C, 2 * KG, 3, 1, -1, nn::Init::Zero),
           C2(ps, name + ".cas.mask", C, KG, 3, 1, -1, nn::Init::Zero)});
    }
    for (int l = 1; l < L; ++l)
      s.merge.emplace_back(ps, name + ".g" + std::to_string(l), 2 * C, C, 3);
  }

  Fuse make_fuse(const std::string& name, int stack) {
    const int C = cfg.channels;
    Fuse f;
    f.q = C2(ps, name + ".q", C, C, 1);
    f.k = C2(ps, name + ".k", C, C, 1);
    f.v = C2(ps, name + ".v", C, C, 1);
    f.ctx = C2(ps, name + ".ctx", C, C, 3);
    f.emb = C2(ps, name + ".emb", C, C, 3);
    f.emb_ref = C2(ps, name + ".emb_ref", C, C, 3);
    f.fuse1 = C2(ps, name + ".fuse1", stack * C, C, 3);
    f.s1 = C2(ps, name + ".s1", stack * C, C, 3);
    f.s2 = C2(ps, name + ".s2", 2 * C, C, 1);
    f.s3 = C2(ps, name + ".s3", C, C, 3);
    f.s4 = C2(ps, name + ".s4", C, C, 3);
    f.s5 = C2(ps, name + ".s5", C, C, 1);
    f.s6 = C2(ps, name + ".s6", C, C, 1);
    return f;
  }

  static V up2(const V& x) { return nn::upsample_bilinear(x, 2); }

  std::vector<V> pyramid(const Extract& ex, const V& x) {
    V f = nn::lrelu(ex.first(x));
    for (const auto& rb : ex.rbs) f = rb(f);
    std::vector<V> pyr{f};
    for (size_t l = 0; l < ex.down.size(); ++l) {
      f = nn::lrelu(ex.down[l](f));
      f = nn::lrelu(ex.refine[l](f));
      pyr.push_back(f);
    }
    return pyr;
  }

  struct OffsetMaps {
    std::vector<V> off, msk;  // [levels + 1], cascade last
  };

  /// Pyramid-cascading deformable alignment of neighbor `i` onto `ref`.
  /// Offsets/masks are predicted here when the set owns a predictor,
  /// otherwise taken from `maps_in` (transfer from the co-branch).
  V align_one(const AlignSet& s, const std::vector<V>& pyr, int i, int ref,
              OffsetMaps* maps_out, const OffsetMaps* maps_in) {
    const int L = cfg.levels, G = cfg.deform_groups;
    std::vector<V> off(L + 1), msk(L + 1);
    V o_next, a_next;
    for (int l = L - 1; l >= 0; --l) {
      V nbr = nn::slice_n(pyr[l], i, 1);
      if (maps_in) {
        off[l] = maps_in->off[l];
        msk[l] = maps_in->msk[l];
      } else {
        V ref_f = nn::slice_n(pyr[l], ref, 1);
        V o = nn::lrelu(s.pred.a[l](nn::concat_c<T>({nbr, ref_f})));
        if (l == L - 1) {
          o = nn::lrelu(s.pred.b[l](o));
        } else {
          o = nn::lrelu(
              s.pred.b[l](nn::concat_c<T>({o, nn::scale(up2(o_next), T(2))})));
          o = nn::lrelu(s.pred.c[l](o));
        }
        off[l] = s.heads[l].off(o);
        msk[l] = nn::scale(nn::sigmoid(s.heads[l].mask(o)), T(2));
        o_next = o;
      }
      V a = nn::lrelu(nn::deform_conv2d(nbr, off[l], msk[l], s.dw[l], s.db[l], G));
      if (l < L - 1) a = nn::lrelu(s.merge[l](nn::concat_c<T>({a, up2(a_next)})));
      a_next = a;
    }
    if (maps_in) {
      off[L] = maps_in->off[L];
      msk[L] = maps_in->msk[L];
    } else {
      V ref0 = nn::slice_n(pyr[0], ref, 1);
      V o = nn::lrelu(s.pred.cas_a(nn::concat_c<T>({a_next, ref0})));
      o = nn::lrelu(s.pred.cas_b(o));
      off[L] = s.heads[L].off(o);
      msk[L] = nn::scale(nn::sigmoid(s.heads[L].mask(o)), T(2));
    }
    V out = nn::lrelu(nn::deform_conv2d(a_next, off[L], msk[L], s.dw[L], s.db[L], G));
    if (maps_out) {
      maps_out->off = off;
      maps_out->msk = msk;
    }
    return out;
  }

  /// Temporal context attention followed by attention-weighted fusion of the
  /// stack down to one feature map.
  V fuse_branch(const Fuse& f, const V& stack, int ref) {
    const int C = cfg.channels;
    const int K = stack->val.n, h = stack->val.h, w = stack->val.w;

    V p = nn::avgpool(stack, 4);
    V q = f.q(nn::slice_n(p, ref, 1));
    V sim = nn::scale(nn::sum_c(nn::mul(f.k(p), q)), T(1.0 / std::sqrt(double(C))));
    V wts = nn::softmax_n(sim);
    V agg = nn::sum_n(nn::mul(f.v(p), wts));
    V st = nn::add(stack, f.ctx(nn::upsample_bilinear(agg, 4)));

    V er = f.emb_ref(nn::slice_n(st, ref, 1));
    V tw = nn::softmax_n(nn::sum_c(nn::mul(f.emb(st), er)));
    V flat = nn::reshape(nn::mul(st, tw), 1, K * C, h, w);
    V fused = nn::lrelu(f.fuse1(flat));

    V att = nn::lrelu(f.s1(flat));
    V att2 = nn::lrelu(
        f.s2(nn::concat_c<T>({nn::maxpool2(att), nn::avgpool(att, 2)})));
    att2 = nn::lrelu(f.s3(att2));
    V logits = f.s4(nn::upsample_bilinear(att2, 2));
    V add_map = f.s6(nn::lrelu(f.s5(logits)));
    return nn::add(nn::mul(fused, nn::scale(nn::sigmoid(logits), T(2))), add_map);
  }

  V forward(const Tensor<T>& mosaics, const Tensor<T>& packed, CoAlignTrace<T>* trace) {
    const int K = cfg.frames(), N = cfg.n_neighbors, L = cfg.levels;
    const int mult = cfg.min_multiple();
    if (mosaics.n != K || mosaics.c != 1)
      throw ShapeError("expected [" + std::to_string(K) + ",1,H,W] mosaics, got " +
                       mosaics.shape_str());
    if (mosaics.h % mult || mosaics.w % mult || mosaics.h < mult || mosaics.w < mult)
      throw ShapeError("mosaic dims must be positive multiples of " +
                       std::to_string(mult));
    if (packed.n != K || packed.c != 4 || packed.h * 2 != mosaics.h ||
        packed.w * 2 != mosaics.w)
      throw ShapeError("packed planes must be [K,4,H/2,W/2], got " +
                       packed.shape_str());

    V vm = nn::make_const(mosaics);
    V vp = nn::make_const(packed);
    std::vector<V> pb, psf;
    if (has_bayer) pb = pyramid(ex_b, vm);
    if (has_sub) psf = pyramid(ex_s, vp);

    if (trace) {
      trace->sub_offsets.assign(K, {});
      trace->sub_masks.assign(K, {});
      trace->bayer_offsets.assign(K, {});
      trace->bayer_masks.assign(K, {});
    }

    V stack_b, stack_s;
    if (align_eff == AlignMode::None) {
      if (has_bayer) stack_b = pb[0];
      if (has_sub) stack_s = psf[0];
    } else {
      std::vector<V> ab, as;
      for (int i = 0; i < K; ++i) {
        OffsetMaps ms, mb;
        if (align_eff == AlignMode::CoShared) {
          as.push_back(align_one(al_s, psf, i, N, &ms, nullptr));
          mb.off.resize(L + 1);
          mb.msk.resize(L + 1);
          for (int l = 0; l <= L; ++l) {
            mb.off[l] = nn::scale(up2(ms.off[l]), T(2));
            mb.msk[l] = up2(ms.msk[l]);
          }
          ab.push_back(align_one(al_b, pb, i, N, nullptr, &mb));
        } else {
          if (has_sub) as.push_back(align_one(al_s, psf, i, N, &ms, nullptr));
          if (has_bayer) ab.push_back(align_one(al_b, pb, i, N, &mb, nullptr));
        }
        if (trace) {
          for (int l = 0; l <= L && !ms.off.empty(); ++l) {
            trace->sub_offsets[i].push_back(ms.off[l]->val);
            trace->sub_masks[i].push_back(ms.msk[l]->val);
          }
          for (int l = 0; l <= L && !mb.off.empty(); ++l) {
            trace->bayer_offsets[i].push_back(mb.off[l]->val);
            trace->bayer_masks[i].push_back(mb.msk[l]->val);
          }
        }
      }
      if (has_bayer) stack_b = nn::concat_n(ab);
      if (has_sub) stack_s = nn::concat_n(as);
    }

    if (interact) {
      V to_s = nn::lrelu(inter_b2s(stack_b));
      V to_b = nn::lrelu(nn::pixel_shuffle(inter_s2b(stack_s), 2));
      stack_b = nn::concat_n<T>({stack_b, to_b});
      stack_s = nn::concat_n<T>({stack_s, to_s});
    }

    V fb, fs;
    if (has_bayer) fb = fuse_branch(fu_b, stack_b, N);
    if (has_sub) fs = fuse_branch(fu_s, stack_s, N);

    V base;
    if (has_bayer && has_sub) {
      V fsu = nn::lrelu(nn::pixel_shuffle(skf_up(fs), 2));
      if (do_skf) {
        V z = nn::gap(nn::add(fb, fsu));
        V sq = nn::relu(skf_sq(z));
        V w2 = nn::softmax_n(nn::concat_n<T>({skf_eb(sq), skf_es(sq)}));
        if (trace) trace->fusion_weights = w2->val;
        base = nn::add(nn::mul(fb, nn::slice_n(w2, 0, 1)),
                       nn::mul(fsu, nn::slice_n(w2, 1, 1)));
      } else {
        base = nn::lrelu(cat_fuse(nn::concat_c<T>({fb, fsu})));
      }
    } else {
      base = has_bayer ? fb : fs;
    }

    V r = base;
    for (const auto& rb : recon) r = rb(r);
    for (size_t i = 0; i < up.size(); ++i)
      r = nn::lrelu(nn::pixel_shuffle(up[i](r), up_factors[i]));
    r = nn::lrelu(hr1(r));
    r = nn::lrelu(hr2(r));
    r = last(r);
    if (has_bayer)
      r = nn::add(r, nn::pixel_shuffle(skip_a(nn::slice_n(vm, N, 1)), cfg.scale));
    if (has_sub)
      r = nn::add(r, nn::pixel_shuffle(skip_b(nn::slice_n(vp, N, 1)), 2 * cfg.scale));
    return r;
  }
};

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {}
template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
const ModelConfig& Model<T>::config() const {
  return impl_->cfg;
}
template <typename T>
nn::ParamStore<T>& Model<T>::params() {
  return impl_->ps;
}
template <typename T>
const nn::ParamStore<T>& Model<T>::params() const {
  return impl_->ps;
}

template <typename T>
nn::Var<T> Model<T>::forward(const Tensor<T>& mosaics, const Tensor<T>& packed,
                             CoAlignTrace<T>* trace) {
  return impl_->forward(mosaics, packed, trace);
}

template <typename T>
nn::Var<T> Model<T>::sub_dconv_weight(int level) const {
  const auto& dw = impl_->al_s.dw;
  if (level < 0 || size_t(level) >= dw.size()) return nullptr;
  return dw[level];
}
template <typename T>
nn::Var<T> Model<T>::bayer_dconv_weight(int level) const {
  const auto& dw = impl_->al_b.dw;
  if (level < 0 || size_t(level) >= dw.size()) return nullptr;
  return dw[level];
}

template <typename T>
Image Model<T>::infer(const std::vector<RawBayerFrame>& window, bool clamp) {
  const int K = impl_->cfg.frames();
  if (int(window.size()) != K)
    throw ShapeError("inference window must hold " + std::to_string(K) + " frames");
  const int H = window[0].height(), W = window[0].width();
  Tensor<T> mos(K, 1, H, W);
  Tensor<T> pk(K, 4, H / 2, W / 2);
  for (int i = 0; i < K; ++i) {
    RawBayerFrame f = window[i];
    if (f.height() != H || f.width() != W || f.phase != window[0].phase)
      throw ShapeError("inference window frames must share shape and phase");
    if (!f.normalized) f = normalize_raw(f);
    std::copy(f.data.data.begin(), f.data.data.end(), mos.chan(i, 0));
    PackedRawFrame p = pack_bayer(f);
    for (int c = 0; c < 4; ++c)
      std::copy(p.planes.plane(c), p.planes.plane(c) + p.planes.plane_size(),
                pk.chan(i, c));
  }
  nn::NoGradGuard ng;
  auto out = impl_->forward(mos, pk, nullptr);
  Tensor<float> outf = nn::cast<float>(out->val);
  Image im = nn::to_image(outf);
  return clamp ? clamp01(im) : im;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[] = "RAWVSRCK1\n";
constexpr size_t kMagicLen = 10;

void write_u64(std::ostream& out, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = char((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(buf[i]) << (8 * i);
  return v;
}

ordered_json read_header(std::istream& in, const std::string& path) {
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw IoError("not a checkpoint: " + path);
  const uint64_t len = read_u64(in);
  if (!in || len == 0 || len > (uint64_t(1) << 30))
    throw IoError("corrupt checkpoint header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), std::streamsize(len));
  if (!in) throw IoError("truncated checkpoint header: " + path);
  try {
    return ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint header json: " + std::string(e.what()));
  }
}

CheckpointInfo info_from_header(const ordered_json& hdr) {
  CheckpointInfo info;
  info.config = ModelConfig::from_json_string(hdr.at("config").dump());
  info.step = hdr.value("step", int64_t(0));
  if (hdr.contains("adam")) {
    info.has_adam = true;
    const auto& a = hdr["adam"];
    info.lr = a.value("lr", 0.0);
    info.beta1 = a.value("beta1", 0.9);
    info.beta2 = a.value("beta2", 0.999);
    info.eps = a.value("eps", 1e-8);
    info.adam_t = a.value("t", int64_t(0));
  }
  if (hdr.contains("rng")) {
    info.has_rng = true;
    for (int i = 0; i < 4; ++i) info.rng_state[i] = hdr["rng"][i].get<uint64_t>();
  }
  return info;
}

template <typename T>
void write_block(std::ostream& out, const Tensor<T>& t) {
  std::vector<float> buf(t.numel());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(t.v[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
}

template <typename T>
void read_block(std::istream& in, Tensor<T>& t, const std::string& path) {
  std::vector<float> buf(t.numel());
  in.read(reinterpret_cast<char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(float)));
  if (!in) throw IoError("truncated checkpoint payload: " + path);
  for (size_t i = 0; i < buf.size(); ++i) t.v[i] = T(buf[i]);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, int64_t step,
                     nn::Adam<T>* adam, const Rng* rng) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);

  const auto& entries = model.params().entries();
  ordered_json hdr;
  hdr["format"] = 1;
  hdr["config"] = ordered_json::parse(model.config().to_json_string());
  hdr["step"] = step;
  ordered_json plist = ordered_json::array();
  uint64_t off = 0;
  for (const auto& e : entries) {
    const auto& t = e.var->val;
    plist.push_back({{"name", e.name},
                     {"shape", {t.n, t.c, t.h, t.w}},
                     {"offset", off},
                     {"count", t.numel()}});
    off += t.numel();
  }
  hdr["params"] = std::move(plist);
  if (adam) {
    adam->ensure_state(entries);
    hdr["adam"] = {{"lr", adam->lr()},
                   {"beta1", adam->beta1()},
                   {"beta2", adam->beta2()},
                   {"eps", adam->eps()},
                   {"t", adam->t()}};
  }
  if (rng) {
    const auto st = rng->state();
    hdr["rng"] = {st[0], st[1], st[2], st[3]};
  }
  const std::string text = hdr.dump();
  out.write(kMagic, kMagicLen);
  write_u64(out, text.size());
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& e : entries) write_block(out, e.var->val);
  if (adam) {
    for (const auto& m : adam->m_state()) write_block(out, m);
    for (const auto& v : adam->v_state()) write_block(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return info_from_header(read_header(in, path));
}

template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, Model<T>& model,
                               nn::Adam<T>* adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  const ordered_json hdr = read_header(in, path);
  CheckpointInfo info = info_from_header(hdr);
  // init_seed only matters at construction; the payload overwrites every
  // parameter, so a differing seed is not a mismatch.
  ModelConfig a = info.config, b = model.config();
  a.init_seed = b.init_seed = 0;
  if (a.to_json_string() != b.to_json_string())
    throw ConfigError("checkpoint config does not match model config");

  const auto& entries = model.params().entries();
  const auto& plist = hdr.at("params");
  if (plist.size() != entries.size())
    throw IoError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& pj = plist[i];
    auto& t = entries[i].var->val;
    if (pj.at("name").get<std::string>() != entries[i].name ||
        pj.at("count").get<uint64_t>() != t.numel())
      throw IoError("checkpoint parameter mismatch at " + entries[i].name);
    read_block(in, t, path);
  }
  if (info.has_adam && adam) {
    adam->set_lr(info.lr);
    adam->set_t(info.adam_t);
    adam->ensure_state(entries);
    for (auto& m : adam->m_state()) read_block(in, m, path);
    for (auto& v : adam->v_state()) read_block(in, v, path);
  }
  return info;
}

#define RAWVSR_INSTANTIATE_MODEL(T)                                            \
  template class Model<T>;                                                     \
  template void save_checkpoint<T>(const std::string&, Model<T>&, int64_t,     \
                                   nn::Adam<T>*, const Rng*);                  \
  template CheckpointInfo load_checkpoint<T>(const std::string&, Model<T>&,    \
                                             nn::Adam<T>*);

RAWVSR_INSTANTIATE_MODEL(float)
RAWVSR_INSTANTIATE_MODEL(double)

}  // namespace rawvsr

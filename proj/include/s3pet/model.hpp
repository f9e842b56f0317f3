#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s3pet/decoder.hpp"
#include "s3pet/dkl.hpp"
#include "s3pet/dsmae.hpp"
#include "s3pet/objectives.hpp"

namespace s3pet {

struct ModelDims {
  int d = 64;
  int t_blocks = 4;
  int h = 4;
  int p = 8;
  int slice = 64;
  double keep_l = 0.15;
  double keep_s = 0.25;
};

inline void validate_dims(const ModelDims& m) {
  if (m.d <= 0 || m.d % 4 != 0) throw ConfigError("model: d must be a positive multiple of 4");
  if (m.h <= 0 || m.d % m.h != 0) throw ConfigError("model: d must divide by head count");
  if (m.t_blocks < 0) throw ConfigError("model: negative block count");
  if (m.p <= 0 || m.slice % m.p != 0) throw ConfigError("model: slice must divide by patch size");
  if (!(m.keep_l > 0 && m.keep_l <= 1 && m.keep_s > 0 && m.keep_s <= 1)) {
    throw ConfigError("model: keep ratios must lie in (0,1]");
  }
  if (!(m.keep_l < m.keep_s)) {
    throw ConfigError("model: LPET keep ratio must be below the SPET one");
  }
}

/// Ablation wiring, ordered as in the progressive study.
enum class Variant { baseline, dsmae, dsmae_dkd, full };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::dsmae: return "dsmae";
    case Variant::dsmae_dkd: return "dsmae_dkd";
    case Variant::full: return "full";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "dsmae") return Variant::dsmae;
  if (s == "dsmae_dkd") return Variant::dsmae_dkd;
  if (s == "full") return Variant::full;
  throw ConfigError("unknown variant: " + s);
}

inline bool has_dkd(Variant v) { return v == Variant::dsmae_dkd || v == Variant::full; }
inline bool has_dkl(Variant v) { return v == Variant::full; }

/// Patch embedding plus transformer encoder; the Stage-II view of a dose
/// encoder (no mask token, no reconstruction head).
template <typename T>
struct EncoderPack {
  PatchEmbed<T> embed;
  Encoder<T> encoder;

  void init(const ModelDims& dims, std::uint64_t seed) {
    Rng rng(seed);
    embed.init(dims.slice, dims.p, dims.d, rng);
    encoder = init_encoder<T>(rng.next_u64(), dims.d, dims.t_blocks, dims.h);
  }

  Mat<T> forward(const Mat<T>& patches, EncoderCache<T>& cache) const {
    return encoder.forward(embed.forward(patches), cache);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    embed.collect(join_name(prefix, "embed"), reg);
    encoder.collect(join_name(prefix, "encoder"), reg);
  }
};

template <typename T>
struct PairCache {
  Mat<T> x_l, x_s;
  Mat<T> patches_l, patches_s;
  EncoderCache<T> ec_l, ec_s;
  Mat<T> e_l, e_s;
  DecoupledTokens<T> dl, ds;
  Mat<T> s_pred;  // transfer output (full variant)
};

template <typename T>
struct Stage2Cache {
  std::vector<PairCache<T>> pairs;
  DecoderCache<T> dec_aux, dec_master;
  std::vector<Mat<T>> pred_l, pred_s;
  LossReport report;
};

/// Bilateral Stage-II network. The master branch reconstructs SPET from
/// LPET tokens, the auxiliary branch synthesizes LPET; DKD/DKL presence
/// depends on the ablation variant.
template <typename T>
struct Stage2Model {
  ModelDims dims;
  Variant variant = Variant::full;
  EncoderPack<T> enc_l, enc_s;
  Dkd<T> dkd;
  Linear<T> transfer_mod;
  DoseDecoder<T> dec_aux, dec_master;

  // Test seam: when set, the S branch projects its invariant tokens through
  // this layer instead of the shared one, so per-branch gradient
  // contributions of the shared projector can be measured in isolation.
  Linear<T>* inv_override_s = nullptr;

  void init(const ModelDims& m, Variant v, std::uint64_t seed) {
    validate_dims(m);
    dims = m;
    variant = v;
    enc_l.init(m, mix_seed(seed, 1));
    enc_s.init(m, mix_seed(seed, 2));
    if (has_dkd(v)) dkd.init(m.d, mix_seed(seed, 3));
    if (has_dkl(v)) {
      Rng rng(mix_seed(seed, 4));
      transfer_mod.init(m.d, m.d, rng);
    }
    dec_aux.init(m.d, mix_seed(seed, 5));
    dec_master.init(m.d, mix_seed(seed, 6));
  }

  void collect(ParamRegistry<T>& reg) {
    enc_l.collect("enc_L", reg);
    enc_s.collect("enc_S", reg);
    if (has_dkd(variant)) dkd.collect("dkd", reg);
    if (has_dkl(variant)) transfer_mod.collect("transfer", reg);
    dec_aux.collect("dec_aux", reg);
    dec_master.collect("dec_master", reg);
  }

  Mat<T> project_inv_s(const Mat<T>& e_s) const {
    return inv_override_s ? inv_override_s->forward(e_s) : dkd.inv.forward(e_s);
  }

  /// Whole-batch forward. When frozen_targets is set (gradient checking),
  /// the transfer loss uses those constants as its detached targets instead
  /// of the freshly computed swapped tokens.
  LossReport forward(const std::vector<std::pair<Mat<T>, Mat<T>>>& batch,
                     const LossWeights& w, bool train, bool update_running,
                     Stage2Cache<T>& cache,
                     const std::vector<Mat<T>>* frozen_targets = nullptr) {
    const std::size_t n = batch.size();
    if (n == 0) throw ConfigError("stage2 forward: empty batch");
    cache.pairs.assign(n, PairCache<T>());
    std::vector<FeatureMap<T>> fm_aux(n), fm_master(n);
    double align_acc = 0.0, transfer_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      PairCache<T>& pc = cache.pairs[i];
      pc.x_l = batch[i].first;
      pc.x_s = batch[i].second;
      pc.patches_l = patchify(pc.x_l, dims.p);
      pc.patches_s = patchify(pc.x_s, dims.p);
      pc.e_l = enc_l.forward(pc.patches_l, pc.ec_l);
      pc.e_s = enc_s.forward(pc.patches_s, pc.ec_s);
      if (has_dkd(variant)) {
        pc.dl = decouple(pc.e_l, 'L', dkd);
        pc.ds.dose = 'S';
        pc.ds.specific = dkd.spec_s.forward(pc.e_s);
        pc.ds.invariant = project_inv_s(pc.e_s);
        align_acc += double(alignment_loss(pc.dl.invariant, pc.ds.invariant));
      }
      if (has_dkl(variant)) {
        auto [l_swapped, s_swapped] = token_swap(pc.dl, pc.ds);
        pc.s_pred = transfer(pc.dl.specific, transfer_mod);
        const Mat<T>& target = frozen_targets ? (*frozen_targets)[i] : l_swapped.specific;
        transfer_acc += double(transfer_loss(target, pc.s_pred));
        fm_master[i] = fuse_tokens(pc.s_pred, l_swapped.invariant);
        fm_aux[i] = fuse_tokens(s_swapped.specific, s_swapped.invariant);
      } else if (has_dkd(variant)) {
        fm_master[i] = fuse_tokens(pc.dl.specific, pc.dl.invariant);
        fm_aux[i] = fuse_tokens(pc.ds.specific, pc.ds.invariant);
      } else {
        fm_master[i] = fuse_tokens(pc.e_l, pc.e_l);
        fm_aux[i] = fuse_tokens(pc.e_s, pc.e_s);
      }
    }
    cache.pred_l = dec_aux.forward(fm_aux, train, update_running, cache.dec_aux);
    cache.pred_s = dec_master.forward(fm_master, train, update_running, cache.dec_master);
    double rec_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      rec_acc += double(rec_loss(cache.pred_l[i], cache.pairs[i].x_l, cache.pred_s[i],
                                 cache.pairs[i].x_s, w.gamma));
    }
    cache.report = stage2_loss(align_acc / double(n), transfer_acc / double(n),
                               rec_acc / double(n), w);
    return cache.report;
  }

  /// Detached transfer targets of the last forward, for frozen re-evaluation.
  std::vector<Mat<T>> transfer_targets(const Stage2Cache<T>& cache) const {
    std::vector<Mat<T>> t;
    t.reserve(cache.pairs.size());
    for (const auto& pc : cache.pairs) t.push_back(pc.ds.specific);
    return t;
  }

  /// Accumulates gradients of cache.report.total into every module.
  void backward(Stage2Cache<T>& cache, const LossWeights& w) {
    const std::size_t n = cache.pairs.size();
    const T inv_n = T(1) / static_cast<T>(n);
    std::vector<Mat<T>> dpred_l(n), dpred_s(n);
    for (std::size_t i = 0; i < n; ++i) {
      dpred_l[i] = mean_abs_diff_backward(cache.pred_l[i], cache.pairs[i].x_l,
                                          static_cast<T>(w.lambda2) * inv_n);
      dpred_s[i] = mean_abs_diff_backward(cache.pred_s[i], cache.pairs[i].x_s,
                                          static_cast<T>(w.lambda2 * w.gamma) * inv_n);
    }
    std::vector<FeatureMap<T>> dfm_aux = dec_aux.backward(cache.dec_aux, dpred_l);
    std::vector<FeatureMap<T>> dfm_master = dec_master.backward(cache.dec_master, dpred_s);

    for (std::size_t i = 0; i < n; ++i) {
      PairCache<T>& pc = cache.pairs[i];
      auto [dm_spec, dm_inv] = unfuse_grad(dfm_master[i]);
      auto [da_spec, da_inv] = unfuse_grad(dfm_aux[i]);
      Mat<T> de_l, de_s;
      if (has_dkl(variant)) {
        // master consumed (s_pred, l_di); aux consumed (l_ds, s_di)
        Mat<T> ds_pred = dm_spec;
        ds_pred += transfer_loss_backward(pc.ds.specific, pc.s_pred,
                                          static_cast<T>(w.lambda1) * inv_n);
        Mat<T> dl_spec = transfer_mod.backward(pc.dl.specific, ds_pred);
        dl_spec += da_spec;
        Mat<T> dl_inv = dm_inv;
        Mat<T> ds_inv = da_inv;
        auto [g_l, g_s] = alignment_loss_backward(pc.dl.invariant, pc.ds.invariant, inv_n);
        dl_inv += g_l;
        ds_inv += g_s;
        de_l = dkd.spec_l.backward(pc.e_l, dl_spec);
        de_l += dkd.inv.backward(pc.e_l, dl_inv);
        // spec_S feeds only the detached transfer target: no gradient path
        de_s = inv_override_s ? inv_override_s->backward(pc.e_s, ds_inv)
                              : dkd.inv.backward(pc.e_s, ds_inv);
      } else if (has_dkd(variant)) {
        Mat<T> dl_spec = dm_spec, dl_inv = dm_inv;
        Mat<T> ds_spec = da_spec, ds_inv = da_inv;
        auto [g_l, g_s] = alignment_loss_backward(pc.dl.invariant, pc.ds.invariant, inv_n);
        dl_inv += g_l;
        ds_inv += g_s;
        de_l = dkd.spec_l.backward(pc.e_l, dl_spec);
        de_l += dkd.inv.backward(pc.e_l, dl_inv);
        de_s = dkd.spec_s.backward(pc.e_s, ds_spec);
        de_s += inv_override_s ? inv_override_s->backward(pc.e_s, ds_inv)
                               : dkd.inv.backward(pc.e_s, ds_inv);
      } else {
        de_l = dm_spec + dm_inv;
        de_s = da_spec + da_inv;
      }
      Mat<T> dtok_l = enc_l.encoder.backward(pc.ec_l, de_l);
      enc_l.embed.backward(pc.patches_l, dtok_l);
      Mat<T> dtok_s = enc_s.encoder.backward(pc.ec_s, de_s);
      enc_s.embed.backward(pc.patches_s, dtok_s);
    }
  }

  /// Eval-mode master-branch pass from an LPET slice alone.
  Mat<T> infer_slice(const Mat<T>& x_l) {
    Mat<T> patches = patchify(x_l, dims.p);
    EncoderCache<T> ec;
    Mat<T> e_l = enc_l.forward(patches, ec);
    FeatureMap<T> fm;
    if (has_dkl(variant)) {
      DecoupledTokens<T> dl = decouple(e_l, 'L', dkd);
      fm = fuse_tokens(transfer(dl.specific, transfer_mod), dl.invariant);
    } else if (has_dkd(variant)) {
      DecoupledTokens<T> dl = decouple(e_l, 'L', dkd);
      fm = fuse_tokens(dl.specific, dl.invariant);
    } else {
      fm = fuse_tokens(e_l, e_l);
    }
    return dec_master.decode(fm);
  }
};

}  // namespace s3pet

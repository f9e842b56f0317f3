#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3pet/encoder.hpp"
#include "s3pet/tokenizer.hpp"

namespace s3pet {

template <typename T>
struct MaeCache {
  Mat<T> patches;        // N x P*P
  MaskPlan plan;
  Mat<T> vis_patches;    // |vis| x P*P
  EncoderCache<T> enc;
  Mat<T> full_tokens;    // N x d after scatter/fill
  int height = 0, width = 0;
};

/// Dose-specific masked autoencoder: mask, encode visible tokens, fill the
/// masked positions with (mask token + positional embedding), linear head.
template <typename T>
struct Dsmae {
  PatchEmbed<T> embed;
  Encoder<T> encoder;
  Mat<T> mask_token, d_mask_token;  // d x 1
  Linear<T> head;                   // P*P x d
  char dose = 'S';
  double keep_ratio = 0.25;

  void init(int slice_size, int patch, int d, int t_blocks, int h, char dose_label,
            double keep, std::uint64_t seed) {
    Rng rng(mix_seed(seed, dose_label));
    embed.init(slice_size, patch, d, rng);
    encoder = init_encoder<T>(rng.next_u64(), d, t_blocks, h);
    mask_token.resize(d, 1);
    fill_trunc_normal(mask_token, rng);
    d_mask_token = Mat<T>::Zero(d, 1);
    head.init(patch * patch, d, rng);
    dose = dose_label;
    keep_ratio = keep;
  }

  Mat<T> mae_forward(const Mat<T>& slice, std::uint64_t seed, MaeCache<T>& c) const {
    const int H = static_cast<int>(slice.rows());
    const int W = static_cast<int>(slice.cols());
    c.height = H;
    c.width = W;
    c.patches = patchify(slice, embed.patch);
    const int n = static_cast<int>(c.patches.rows());
    c.plan = sample_mask(n, keep_ratio, seed);

    c.vis_patches.resize(static_cast<Eigen::Index>(c.plan.visible.size()), c.patches.cols());
    for (std::size_t i = 0; i < c.plan.visible.size(); ++i) {
      c.vis_patches.row(static_cast<Eigen::Index>(i)) = c.patches.row(c.plan.visible[i]);
    }
    Mat<T> vis_tokens = embed.forward_subset(c.patches, c.plan.visible);
    Mat<T> enc_out = encoder.forward(vis_tokens, c.enc);

    const int d = embed.dim();
    c.full_tokens.resize(n, d);
    for (std::size_t i = 0; i < c.plan.visible.size(); ++i) {
      c.full_tokens.row(c.plan.visible[i]) = enc_out.row(static_cast<Eigen::Index>(i));
    }
    for (int idx : c.plan.masked) {
      c.full_tokens.row(idx) = mask_token.col(0).transpose() + embed.pos.row(idx);
    }
    Mat<T> recon_patches = head.forward(c.full_tokens);
    Mat<T> recon = unpatchify(recon_patches, H, W, embed.patch);
    if (!recon.allFinite()) throw NumericError("mae_forward: non-finite reconstruction");
    return recon;
  }

  void mae_backward(const MaeCache<T>& c, const Mat<T>& drecon) {
    Mat<T> drecon_patches = patchify(drecon, embed.patch);
    Mat<T> dfull = head.backward(c.full_tokens, drecon_patches);
    Mat<T> denc(static_cast<Eigen::Index>(c.plan.visible.size()), dfull.cols());
    for (std::size_t i = 0; i < c.plan.visible.size(); ++i) {
      denc.row(static_cast<Eigen::Index>(i)) = dfull.row(c.plan.visible[i]);
    }
    for (int idx : c.plan.masked) {
      d_mask_token.col(0) += dfull.row(idx).transpose();
    }
    Mat<T> dvis_tokens = encoder.backward(c.enc, denc);
    embed.backward(c.vis_patches, dvis_tokens);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    embed.collect(join_name(prefix, "embed"), reg);
    encoder.collect(join_name(prefix, "encoder"), reg);
    reg.add(join_name(prefix, "mask_token"), mask_token, d_mask_token);
    head.collect(join_name(prefix, "head"), reg);
  }
};

/// Eq.-style Stage-I objective: mean absolute difference over the full image.
template <typename T>
T stage1_loss(const Mat<T>& recon, const Mat<T>& target) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols()) {
    throw ShapeError("stage1_loss: shape mismatch");
  }
  return (recon - target).cwiseAbs().mean();
}

/// d(stage1_loss)/d(recon), with sign(0) = 0.
template <typename T>
Mat<T> stage1_loss_backward(const Mat<T>& recon, const Mat<T>& target) {
  const T inv = T(1) / static_cast<T>(recon.size());
  return (recon - target).unaryExpr([inv](T v) {
    return v > T(0) ? inv : (v < T(0) ? -inv : T(0));
  });
}

}  // namespace s3pet

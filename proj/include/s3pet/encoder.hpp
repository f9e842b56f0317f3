#pragma once

#include <string>
#include <vector>

#include "s3pet/nn.hpp"

namespace s3pet {

template <typename T>
struct BlockCache {
  Mat<T> x0;                    // block input
  LayerNormCache<T> ln1;
  Mat<T> u1;                    // ln1 output
  Mat<T> q, k, v;
  std::vector<Mat<T>> attn;     // per head, n x n softmax rows
  Mat<T> attn_concat;           // n x d, pre output-projection
  Mat<T> x1;                    // after attention residual
  LayerNormCache<T> ln2;
  Mat<T> u2;                    // ln2 output
  Mat<T> z1;                    // ffn pre-activation
  Mat<T> hg;                    // gelu(z1)
};

template <typename T>
struct EncoderCache {
  std::vector<BlockCache<T>> blocks;
};

/// Pre-norm transformer block: x += MHSA(LN(x)); x += FFN(LN(x)).
template <typename T>
struct TransformerBlock {
  Linear<T> wq, wk, wv, wo;
  Linear<T> ffn1, ffn2;
  LayerNorm<T> ln1, ln2;
  int heads = 1;

  void init(int d, int h, Rng& rng) {
    heads = h;
    wq.init(d, d, rng);
    wk.init(d, d, rng);
    wv.init(d, d, rng);
    wo.init(d, d, rng);
    ffn1.init(4 * d, d, rng);
    ffn2.init(d, 4 * d, rng);
    ln1.init(d);
    ln2.init(d);
  }

  Mat<T> forward(const Mat<T>& x, BlockCache<T>& c) const {
    const int d = static_cast<int>(x.cols());
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.x0 = x;
    c.u1 = ln1.forward(x, c.ln1);
    c.q = wq.forward(c.u1);
    c.k = wk.forward(c.u1);
    c.v = wv.forward(c.u1);
    c.attn.assign(heads, Mat<T>());
    c.attn_concat.resize(x.rows(), d);
    for (int i = 0; i < heads; ++i) {
      const auto qi = c.q.middleCols(i * dh, dh);
      const auto ki = c.k.middleCols(i * dh, dh);
      const auto vi = c.v.middleCols(i * dh, dh);
      Mat<T> scores = qi * ki.transpose() * scale;
      c.attn[i] = softmax_rows(scores);
      c.attn_concat.middleCols(i * dh, dh) = c.attn[i] * vi;
    }
    c.x1 = x + wo.forward(c.attn_concat);
    c.u2 = ln2.forward(c.x1, c.ln2);
    c.z1 = ffn1.forward(c.u2);
    c.hg = gelu(c.z1);
    return c.x1 + ffn2.forward(c.hg);
  }

  Mat<T> backward(const BlockCache<T>& c, const Mat<T>& dout) {
    const int d = static_cast<int>(dout.cols());
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    // FFN sublayer
    Mat<T> dhg = ffn2.backward(c.hg, dout);
    Mat<T> dz1 = dhg.array() * gelu_grad(c.z1).array();
    Mat<T> du2 = ffn1.backward(c.u2, dz1);
    Mat<T> dx1 = dout + ln2.backward(c.ln2, du2);

    // attention sublayer
    Mat<T> dconcat = wo.backward(c.attn_concat, dx1);
    Mat<T> dq = Mat<T>::Zero(dout.rows(), d);
    Mat<T> dk = Mat<T>::Zero(dout.rows(), d);
    Mat<T> dv = Mat<T>::Zero(dout.rows(), d);
    for (int i = 0; i < heads; ++i) {
      const auto ki = c.k.middleCols(i * dh, dh);
      const auto qi = c.q.middleCols(i * dh, dh);
      const auto vi = c.v.middleCols(i * dh, dh);
      const auto doi = dconcat.middleCols(i * dh, dh);
      Mat<T> da = doi * vi.transpose();
      dv.middleCols(i * dh, dh) = c.attn[i].transpose() * doi;
      Mat<T> ds = softmax_rows_backward(c.attn[i], da);
      dq.middleCols(i * dh, dh) = ds * ki * scale;
      dk.middleCols(i * dh, dh) = ds.transpose() * qi * scale;
    }
    Mat<T> du1 = wq.backward(c.u1, dq);
    du1 += wk.backward(c.u1, dk);
    du1 += wv.backward(c.u1, dv);
    return dx1 + ln1.backward(c.ln1, du1);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    ln1.collect(join_name(prefix, "ln1"), reg);
    wq.collect(join_name(prefix, "wq"), reg);
    wk.collect(join_name(prefix, "wk"), reg);
    wv.collect(join_name(prefix, "wv"), reg);
    wo.collect(join_name(prefix, "wo"), reg);
    ln2.collect(join_name(prefix, "ln2"), reg);
    ffn1.collect(join_name(prefix, "ffn1"), reg);
    ffn2.collect(join_name(prefix, "ffn2"), reg);
  }
};

/// Stack of T pre-norm transformer blocks; T = 0 is the identity.
template <typename T>
struct Encoder {
  std::vector<TransformerBlock<T>> blocks;
  int dim = 0;
  int heads = 1;

  Mat<T> forward(const Mat<T>& x, EncoderCache<T>& cache) const {
    if (x.cols() != dim) {
      throw ShapeError("encoder: token dim " + std::to_string(x.cols()) +
                       " != " + std::to_string(dim));
    }
    cache.blocks.resize(blocks.size());
    Mat<T> h = x;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      h = blocks[i].forward(h, cache.blocks[i]);
      if (!h.allFinite()) {
        throw NumericError("encoder: non-finite values after block " + std::to_string(i));
      }
    }
    return h;
  }

  Mat<T> backward(const EncoderCache<T>& cache, const Mat<T>& dout) {
    Mat<T> g = dout;
    for (std::size_t i = blocks.size(); i-- > 0;) {
      g = blocks[i].backward(cache.blocks[i], g);
    }
    return g;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].collect(join_name(prefix, "blk" + std::to_string(i)), reg);
    }
  }
};

/// Truncated-normal weights (std 0.02), zero biases, unit LN gains.
template <typename T>
Encoder<T> init_encoder(std::uint64_t seed, int d, int t_blocks, int h) {
  if (h <= 0 || d % h != 0) {
    throw ConfigError("init_encoder: d must be divisible by head count");
  }
  if (t_blocks < 0) throw ConfigError("init_encoder: negative block count");
  Rng rng(seed);
  Encoder<T> enc;
  enc.dim = d;
  enc.heads = h;
  enc.blocks.resize(t_blocks);
  for (auto& b : enc.blocks) b.init(d, h, rng);
  return enc;
}

}  // namespace s3pet

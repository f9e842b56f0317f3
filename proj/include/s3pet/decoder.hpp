#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "s3pet/nn.hpp"

namespace s3pet {

/// Channels-first 2D feature map; data row c holds channel c's pixels in
/// row-major spatial order.
template <typename T>
struct FeatureMap {
  int channels = 0, h = 0, w = 0;
  Mat<T> data;  // channels x (h*w)
};

/// Concatenate the two token streams along the embedding axis and reshape
/// to a 2d-channel sqrt(N) x sqrt(N) map in row-major tile order.
template <typename T>
FeatureMap<T> fuse_tokens(const Mat<T>& specific, const Mat<T>& invariant) {
  if (specific.rows() != invariant.rows() || specific.cols() != invariant.cols()) {
    throw ShapeError("fuse_tokens: stream shape mismatch");
  }
  const int n = static_cast<int>(specific.rows());
  const int side = static_cast<int>(std::lround(std::sqrt(double(n))));
  if (side * side != n) {
    throw ShapeError("fuse_tokens: token count is not a perfect square");
  }
  const int d = static_cast<int>(specific.cols());
  FeatureMap<T> f;
  f.channels = 2 * d;
  f.h = side;
  f.w = side;
  f.data.resize(2 * d, n);
  f.data.topRows(d) = specific.transpose();
  f.data.bottomRows(d) = invariant.transpose();
  return f;
}

/// Inverse of fuse_tokens for gradients.
template <typename T>
std::pair<Mat<T>, Mat<T>> unfuse_grad(const FeatureMap<T>& df) {
  const int d = df.channels / 2;
  return {df.data.topRows(d).transpose(), df.data.bottomRows(d).transpose()};
}

/// 3x3 convolution, stride 1, zero padding 1, no bias (batch norm follows).
template <typename T>
struct Conv3x3 {
  Mat<T> K, dK;  // cout x (cin*9)
  int cin = 0, cout = 0;

  void init(int cout_, int cin_, Rng& rng) {
    cin = cin_;
    cout = cout_;
    K.resize(cout, cin * 9);
    fill_trunc_normal(K, rng);
    dK = Mat<T>::Zero(cout, cin * 9);
  }

  static Mat<T> im2col(const FeatureMap<T>& in) {
    Mat<T> cols = Mat<T>::Zero(in.channels * 9, in.h * in.w);
    for (int c = 0; c < in.channels; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int row = c * 9 + ky * 3 + kx;
          for (int y = 0; y < in.h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= in.h) continue;
            for (int x = 0; x < in.w; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= in.w) continue;
              cols(row, y * in.w + x) = in.data(c, sy * in.w + sx);
            }
          }
        }
      }
    }
    return cols;
  }

  static Mat<T> col2im(const Mat<T>& dcols, int channels, int h, int w) {
    Mat<T> din = Mat<T>::Zero(channels, h * w);
    for (int c = 0; c < channels; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int row = c * 9 + ky * 3 + kx;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= w) continue;
              din(c, sy * w + sx) += dcols(row, y * w + x);
            }
          }
        }
      }
    }
    return din;
  }

  FeatureMap<T> forward(const FeatureMap<T>& in, Mat<T>& cols_cache) const {
    if (in.channels != cin) {
      throw ShapeError("conv3x3: expected " + std::to_string(cin) + " channels, got " +
                       std::to_string(in.channels));
    }
    cols_cache = im2col(in);
    FeatureMap<T> out;
    out.channels = cout;
    out.h = in.h;
    out.w = in.w;
    out.data.noalias() = K * cols_cache;
    return out;
  }

  // Accumulates dK, returns gradient w.r.t. the conv input.
  FeatureMap<T> backward(const Mat<T>& cols_cache, const FeatureMap<T>& dout) {
    dK.noalias() += dout.data * cols_cache.transpose();
    Mat<T> dcols = K.transpose() * dout.data;
    FeatureMap<T> din;
    din.channels = cin;
    din.h = dout.h;
    din.w = dout.w;
    din.data = col2im(dcols, cin, dout.h, dout.w);
    return din;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(join_name(prefix, "K"), K, dK);
  }
};

template <typename T>
struct BatchNormCache {
  std::vector<Mat<T>> xhat;  // per item, C x HW
  Mat<T> rstd;               // C x 1
  bool train = false;
};

/// Per-channel batch normalization over (batch x spatial); running stats
/// updated with momentum 0.1 in train mode, eval mode uses them directly.
template <typename T>
struct BatchNorm {
  Mat<T> gamma, beta, dgamma, dbeta;   // C x 1
  Mat<T> running_mean, running_var;    // C x 1 buffers
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  void init(int c) {
    gamma = Mat<T>::Ones(c, 1);
    beta = Mat<T>::Zero(c, 1);
    dgamma = Mat<T>::Zero(c, 1);
    dbeta = Mat<T>::Zero(c, 1);
    running_mean = Mat<T>::Zero(c, 1);
    running_var = Mat<T>::Ones(c, 1);
  }

  void forward_train(std::vector<FeatureMap<T>>& xs, bool update_running,
                     BatchNormCache<T>& cache) {
    const int c = static_cast<int>(gamma.rows());
    const Eigen::Index hw = xs.front().data.cols();
    const T m_total = static_cast<T>(xs.size() * hw);
    Vec<T> mean = Vec<T>::Zero(c), var = Vec<T>::Zero(c);
    for (const auto& x : xs) mean += x.data.rowwise().sum();
    mean /= m_total;
    for (const auto& x : xs) {
      var += (x.data.colwise() - mean).array().square().matrix().rowwise().sum();
    }
    var /= m_total;
    cache.train = true;
    cache.rstd = (var.array() + static_cast<T>(kEps)).rsqrt().matrix();
    cache.xhat.clear();
    cache.xhat.reserve(xs.size());
    for (auto& x : xs) {
      Mat<T> xhat = (x.data.colwise() - mean).array().colwise() * cache.rstd.col(0).array();
      x.data = (xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
      cache.xhat.push_back(std::move(xhat));
    }
    if (update_running) {
      const T mom = static_cast<T>(kMomentum);
      running_mean = (T(1) - mom) * running_mean + mom * mean;
      running_var = (T(1) - mom) * running_var.col(0) + mom * var;
    }
  }

  void forward_eval(std::vector<FeatureMap<T>>& xs) const {
    Vec<T> rstd = (running_var.col(0).array() + static_cast<T>(kEps)).rsqrt();
    for (auto& x : xs) {
      Mat<T> xhat =
          (x.data.colwise() - running_mean.col(0)).array().colwise() * rstd.array();
      x.data = (xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
    }
  }

  // dys in place become dxs.
  void backward(const BatchNormCache<T>& cache, std::vector<FeatureMap<T>>& dys) {
    if (!cache.train) throw NumericError("batchnorm: backward requires a train-mode cache");
    const int c = static_cast<int>(gamma.rows());
    const Eigen::Index hw = dys.front().data.cols();
    const T m_total = static_cast<T>(dys.size() * hw);
    Vec<T> s1 = Vec<T>::Zero(c);  // sum of dxhat
    Vec<T> s2 = Vec<T>::Zero(c);  // sum of dxhat * xhat
    for (std::size_t b = 0; b < dys.size(); ++b) {
      dgamma.col(0) += (dys[b].data.array() * cache.xhat[b].array()).matrix().rowwise().sum();
      dbeta.col(0) += dys[b].data.rowwise().sum();
      Mat<T> dxhat = dys[b].data.array().colwise() * gamma.col(0).array();
      s1 += dxhat.rowwise().sum();
      s2 += (dxhat.array() * cache.xhat[b].array()).matrix().rowwise().sum();
      dys[b].data = std::move(dxhat);
    }
    for (std::size_t b = 0; b < dys.size(); ++b) {
      Mat<T> term = dys[b].data * m_total;
      term.colwise() -= s1;
      term -= (cache.xhat[b].array().colwise() * s2.array()).matrix();
      dys[b].data = ((term.array().colwise() * cache.rstd.col(0).array()) / m_total).matrix();
    }
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(join_name(prefix, "g"), gamma, dgamma);
    reg.add(join_name(prefix, "o"), beta, dbeta);
    reg.add_buffer(join_name(prefix, "running_mean"), running_mean);
    reg.add_buffer(join_name(prefix, "running_var"), running_var);
  }
};

template <typename T>
FeatureMap<T> upsample2x(const FeatureMap<T>& in) {
  FeatureMap<T> out;
  out.channels = in.channels;
  out.h = in.h * 2;
  out.w = in.w * 2;
  out.data.resize(in.channels, out.h * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      out.data.col(y * out.w + x) = in.data.col((y / 2) * in.w + (x / 2));
  return out;
}

template <typename T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& dout) {
  FeatureMap<T> din;
  din.channels = dout.channels;
  din.h = dout.h / 2;
  din.w = dout.w / 2;
  din.data = Mat<T>::Zero(dout.channels, din.h * din.w);
  for (int y = 0; y < dout.h; ++y)
    for (int x = 0; x < dout.w; ++x)
      din.data.col((y / 2) * din.w + (x / 2)) += dout.data.col(y * dout.w + x);
  return din;
}

template <typename T>
struct DecoderStageCache {
  std::vector<Mat<T>> cols;       // im2col of the conv input, per item
  BatchNormCache<T> bn;
  std::vector<Mat<T>> relu_in;    // post-BN pre-ReLU, per item
  std::vector<Mat<T>> relu_out;   // stage output, per item
  int h = 0, w = 0;
};

template <typename T>
struct DecoderCache {
  std::array<DecoderStageCache<T>, 4> stages;
  std::vector<Mat<T>> sig_out;    // 1 x HW per item
  int in_h = 0, in_w = 0;
  bool train = false;
};

/// CNN dose decoder: four Conv-BatchNorm-ReLU blocks with channel plan
/// 2d -> d -> d/2 -> d/4 -> 1, nearest-neighbor 2x upsampling between
/// blocks 1-2, 2-3 and 3-4, then a 1x1 linear convolution and a sigmoid.
template <typename T>
struct DoseDecoder {
  Conv3x3<T> conv1, conv2, conv3, conv4;
  BatchNorm<T> bn1, bn2, bn3, bn4;
  Mat<T> head_w, head_b, dhead_w, dhead_b;  // 1x1 conv: 1 x 1 each
  int dim = 0;

  void init(int d, std::uint64_t seed) {
    if (d % 4 != 0) throw ConfigError("decoder: token dim must be divisible by 4");
    Rng rng(seed);
    dim = d;
    conv1.init(d, 2 * d, rng);
    conv2.init(d / 2, d, rng);
    conv3.init(d / 4, d / 2, rng);
    conv4.init(1, d / 4, rng);
    bn1.init(d);
    bn2.init(d / 2);
    bn3.init(d / 4);
    bn4.init(1);
    // zero-init head: initial output is sigmoid(0) = 0.5 everywhere
    head_w = Mat<T>::Zero(1, 1);
    head_b = Mat<T>::Zero(1, 1);
    dhead_w = Mat<T>::Zero(1, 1);
    dhead_b = Mat<T>::Zero(1, 1);
  }

  /// Batched decode; each output slice is (8*in.h) x (8*in.w), values in (0,1).
  std::vector<Mat<T>> forward(const std::vector<FeatureMap<T>>& fmaps, bool train,
                              bool update_running, DecoderCache<T>& cache) {
    if (fmaps.empty()) throw ShapeError("decoder: empty batch");
    if (fmaps.front().channels != 2 * dim) {
      throw ShapeError("decoder: expected " + std::to_string(2 * dim) + " input channels");
    }
    cache.train = train;
    cache.in_h = fmaps.front().h;
    cache.in_w = fmaps.front().w;
    std::vector<FeatureMap<T>> cur = fmaps;

    Conv3x3<T>* convs[4] = {&conv1, &conv2, &conv3, &conv4};
    BatchNorm<T>* bns[4] = {&bn1, &bn2, &bn3, &bn4};
    for (int s = 0; s < 4; ++s) {
      auto& sc = cache.stages[s];
      sc.h = cur.front().h;
      sc.w = cur.front().w;
      sc.cols.resize(cur.size());
      for (std::size_t b = 0; b < cur.size(); ++b) {
        cur[b] = convs[s]->forward(cur[b], sc.cols[b]);
      }
      if (train) {
        bns[s]->forward_train(cur, update_running, sc.bn);
      } else {
        bns[s]->forward_eval(cur);
      }
      sc.relu_in.resize(cur.size());
      sc.relu_out.resize(cur.size());
      for (std::size_t b = 0; b < cur.size(); ++b) {
        sc.relu_in[b] = cur[b].data;
        cur[b].data = cur[b].data.cwiseMax(T(0));
        sc.relu_out[b] = cur[b].data;
        if (!cur[b].data.allFinite()) {
          throw NumericError("decoder: non-finite activation after block " +
                             std::to_string(s + 1));
        }
      }
      if (s < 3) {
        for (auto& f : cur) f = upsample2x(f);
      }
    }

    cache.sig_out.resize(cur.size());
    std::vector<Mat<T>> slices(cur.size());
    const int H = cur.front().h, W = cur.front().w;
    for (std::size_t b = 0; b < cur.size(); ++b) {
      Mat<T> z = head_w(0, 0) * cur[b].data;
      z.array() += head_b(0, 0);
      Mat<T> y = z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
      cache.sig_out[b] = y;
      Mat<T> slice(H, W);
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) slice(i, j) = y(0, i * W + j);
      slices[b] = std::move(slice);
    }
    return slices;
  }

  std::vector<FeatureMap<T>> backward(const DecoderCache<T>& cache,
                                      const std::vector<Mat<T>>& dslices) {
    const std::size_t batch = dslices.size();
    std::vector<FeatureMap<T>> grads(batch);
    const int h4 = cache.stages[3].h, w4 = cache.stages[3].w;
    for (std::size_t b = 0; b < batch; ++b) {
      Mat<T> dy(1, h4 * w4);
      for (int i = 0; i < h4; ++i)
        for (int j = 0; j < w4; ++j) dy(0, i * w4 + j) = dslices[b](i, j);
      const Mat<T>& y = cache.sig_out[b];
      Mat<T> dz = dy.array() * y.array() * (T(1) - y.array());
      dhead_w(0, 0) += (dz.array() * cache.stages[3].relu_out[b].array()).sum();
      dhead_b(0, 0) += dz.sum();
      grads[b].channels = 1;
      grads[b].h = h4;
      grads[b].w = w4;
      grads[b].data = head_w(0, 0) * dz;
    }

    Conv3x3<T>* convs[4] = {&conv1, &conv2, &conv3, &conv4};
    BatchNorm<T>* bns[4] = {&bn1, &bn2, &bn3, &bn4};
    for (int s = 3; s >= 0; --s) {
      const auto& sc = cache.stages[s];
      for (std::size_t b = 0; b < batch; ++b) {
        grads[b].data.array() *= (sc.relu_in[b].array() > T(0)).template cast<T>();
      }
      bns[s]->backward(sc.bn, grads);
      for (std::size_t b = 0; b < batch; ++b) {
        grads[b] = convs[s]->backward(sc.cols[b], grads[b]);
      }
      if (s > 0) {
        for (auto& g : grads) g = upsample2x_backward(g);
      }
    }
    return grads;
  }

  /// Single-slice eval-mode decode using running statistics.
  Mat<T> decode(const FeatureMap<T>& fmap) {
    DecoderCache<T> cache;
    return forward({fmap}, /*train=*/false, /*update_running=*/false, cache)[0];
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    conv1.collect(join_name(prefix, "conv1"), reg);
    bn1.collect(join_name(prefix, "bn1"), reg);
    conv2.collect(join_name(prefix, "conv2"), reg);
    bn2.collect(join_name(prefix, "bn2"), reg);
    conv3.collect(join_name(prefix, "conv3"), reg);
    bn3.collect(join_name(prefix, "bn3"), reg);
    conv4.collect(join_name(prefix, "conv4"), reg);
    bn4.collect(join_name(prefix, "bn4"), reg);
    reg.add(join_name(prefix, "head.W"), head_w, dhead_w);
    reg.add(join_name(prefix, "head.b"), head_b, dhead_b);
  }
};

}  // namespace s3pet

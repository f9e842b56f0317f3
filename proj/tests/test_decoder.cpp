#include <doctest.h>

#include "s3pet/decoder.hpp"

using namespace s3pet;

namespace {

template <typename T>
Mat<T> random_mat(int r, int c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat<T> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<T>(scale * rng.normal());
  return m;
}

FeatureMap<double> random_fmap(int channels, int side, std::uint64_t seed) {
  FeatureMap<double> f;
  f.channels = channels;
  f.h = side;
  f.w = side;
  f.data = random_mat<double>(channels, side * side, seed);
  return f;
}

}  // namespace

TEST_CASE("fuse_tokens shape: 64 tokens of dim 64 give a 128x8x8 map") {
  const Mat<double> spec = random_mat<double>(64, 64, 1);
  const Mat<double> inv = random_mat<double>(64, 64, 2);
  const FeatureMap<double> f = fuse_tokens(spec, inv);
  CHECK(f.channels == 128);
  CHECK(f.h == 8);
  CHECK(f.w == 8);
}

TEST_CASE("swapping fuse arguments swaps channel halves exactly") {
  const Mat<double> a = random_mat<double>(16, 8, 3);
  const Mat<double> b = random_mat<double>(16, 8, 4);
  const FeatureMap<double> f1 = fuse_tokens(a, b);
  const FeatureMap<double> f2 = fuse_tokens(b, a);
  CHECK(f1.data.topRows(8) == f2.data.bottomRows(8));
  CHECK(f1.data.bottomRows(8) == f2.data.topRows(8));
}

TEST_CASE("fused channel c at tile (i,j) is token (i*side+j) channel c") {
  const int n = 16, d = 8, side = 4;
  const Mat<double> spec = random_mat<double>(n, d, 5);
  const Mat<double> inv = random_mat<double>(n, d, 6);
  const FeatureMap<double> f = fuse_tokens(spec, inv);
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        CHECK(f.data(c, i * side + j) == spec(i * side + j, c));
        CHECK(f.data(d + c, i * side + j) == inv(i * side + j, c));
      }
}

TEST_CASE("fuse_tokens rejects non-square token counts") {
  const Mat<double> a = random_mat<double>(12, 8, 7);
  CHECK_THROWS_AS(fuse_tokens(a, a), ShapeError);
}

TEST_CASE("decode maps a 2d x 8 x 8 input to a 64x64 slice in (0,1)") {
  DoseDecoder<double> dec;
  dec.init(64, 8);
  const FeatureMap<double> f = random_fmap(128, 8, 9);
  const Mat<double> slice = dec.decode(f);
  CHECK(slice.rows() == 64);
  CHECK(slice.cols() == 64);
  CHECK((slice.array() > 0).all());
  CHECK((slice.array() < 1).all());
}

TEST_CASE("eval-mode decode is bitwise deterministic") {
  DoseDecoder<double> dec;
  dec.init(16, 10);
  const FeatureMap<double> f = random_fmap(32, 2, 11);
  CHECK(dec.decode(f) == dec.decode(f));
}

TEST_CASE("all-zero weights with zero BN offset give constant 0.5") {
  DoseDecoder<double> dec;
  dec.init(16, 12);
  dec.conv1.K.setZero();
  dec.conv2.K.setZero();
  dec.conv3.K.setZero();
  dec.conv4.K.setZero();
  dec.head_w.setZero();
  dec.head_b.setZero();
  const FeatureMap<double> f = random_fmap(32, 2, 13);

  // eval mode
  const Mat<double> slice = dec.decode(f);
  CHECK((slice.array() == 0.5).all());

  // train mode (batch statistics of an all-zero activation)
  DecoderCache<double> cache;
  std::vector<FeatureMap<double>> batch = {f, random_fmap(32, 2, 14)};
  const auto out = dec.forward(batch, /*train=*/true, /*update_running=*/false, cache);
  for (const auto& s : out) CHECK((s.array() == 0.5).all());
}

TEST_CASE("a batch of identical inputs yields identical outputs in both modes") {
  DoseDecoder<double> dec;
  dec.init(16, 15);
  const FeatureMap<double> f = random_fmap(32, 2, 16);
  std::vector<FeatureMap<double>> batch = {f, f, f};

  DecoderCache<double> c1;
  const auto train_out = dec.forward(batch, true, false, c1);
  CHECK(train_out[0] == train_out[1]);
  CHECK(train_out[1] == train_out[2]);

  DecoderCache<double> c2;
  const auto eval_out = dec.forward(batch, false, false, c2);
  CHECK(eval_out[0] == eval_out[1]);
  CHECK(eval_out[1] == eval_out[2]);
}

TEST_CASE("batch norm updates running statistics with momentum 0.1") {
  BatchNorm<double> bn;
  bn.init(3);
  FeatureMap<double> f;
  f.channels = 3;
  f.h = 2;
  f.w = 2;
  f.data = random_mat<double>(3, 4, 17);
  std::vector<FeatureMap<double>> xs = {f};
  Vec<double> mean = f.data.rowwise().mean();
  Vec<double> var(3);
  for (int c = 0; c < 3; ++c) {
    var(c) = (f.data.row(c).array() - mean(c)).square().mean();
  }
  BatchNormCache<double> cache;
  bn.forward_train(xs, /*update_running=*/true, cache);
  for (int c = 0; c < 3; ++c) {
    CHECK(bn.running_mean(c, 0) == doctest::Approx(0.1 * mean(c)).epsilon(1e-12));
    CHECK(bn.running_var(c, 0) == doctest::Approx(0.9 * 1.0 + 0.1 * var(c)).epsilon(1e-12));
  }
}

TEST_CASE("upsample2x replicates pixels and backward sums them") {
  FeatureMap<double> f;
  f.channels = 1;
  f.h = 2;
  f.w = 2;
  f.data = random_mat<double>(1, 4, 18);
  const FeatureMap<double> up = upsample2x(f);
  CHECK(up.h == 4);
  CHECK(up.w == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(up.data(0, y * 4 + x) == f.data(0, (y / 2) * 2 + (x / 2)));

  const FeatureMap<double> back = upsample2x_backward(up);
  CHECK(back.h == 2);
  for (int i = 0; i < 4; ++i) CHECK(back.data(0, i) == doctest::Approx(4.0 * f.data(0, i)));
}

TEST_CASE("decoder gradients match finite differences (params and input)") {
  DoseDecoder<double> dec;
  dec.init(8, 19);  // channels 16 -> 8 -> 4 -> 2 -> 1, grid 2x2 -> 16x16
  std::vector<FeatureMap<double>> batch = {random_fmap(16, 2, 20), random_fmap(16, 2, 21)};
  const Mat<double> r0 = random_mat<double>(16, 16, 22);
  const Mat<double> r1 = random_mat<double>(16, 16, 23);

  auto loss_fn = [&]() {
    DecoderCache<double> cache;
    const auto out = dec.forward(batch, true, false, cache);
    return double((out[0].array() * r0.array()).sum() + (out[1].array() * r1.array()).sum());
  };

  ParamRegistry<double> reg;
  dec.collect("dec", reg);
  reg.zero_grads();
  DecoderCache<double> cache;
  dec.forward(batch, true, false, cache);
  const auto dinputs = dec.backward(cache, {r0, r1});

  const double delta = 1e-6;
  double max_rel = 0.0;
  Rng pick(24);
  for (const auto& e : reg.entries()) {
    if (!e.learnable()) continue;
    for (int rep = 0; rep < 2; ++rep) {
      const int i = int(pick.below(e.value->rows()));
      const int j = int(pick.below(e.value->cols()));
      const double saved = (*e.value)(i, j);
      (*e.value)(i, j) = saved + delta;
      const double lp = loss_fn();
      (*e.value)(i, j) = saved - delta;
      const double lm = loss_fn();
      (*e.value)(i, j) = saved;
      const double numeric = (lp - lm) / (2 * delta);
      const double analytic = (*e.grad)(i, j);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }

  // input gradient
  for (int rep = 0; rep < 8; ++rep) {
    const int c = int(pick.below(16));
    const int s = int(pick.below(4));
    const double saved = batch[0].data(c, s);
    batch[0].data(c, s) = saved + delta;
    const double lp = loss_fn();
    batch[0].data(c, s) = saved - delta;
    const double lm = loss_fn();
    batch[0].data(c, s) = saved;
    const double numeric = (lp - lm) / (2 * delta);
    const double analytic = dinputs[0].data(c, s);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("decoder rejects wrong input channel counts") {
  DoseDecoder<double> dec;
  dec.init(16, 25);
  DecoderCache<double> cache;
  std::vector<FeatureMap<double>> bad = {random_fmap(16, 2, 26)};
  CHECK_THROWS_AS(dec.forward(bad, false, false, cache), ShapeError);
}

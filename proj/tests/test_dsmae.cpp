#include <doctest.h>

#include "s3pet/adam.hpp"
#include "s3pet/dsmae.hpp"

using namespace s3pet;

namespace {

template <typename T>
Mat<T> random_slice(int n, std::uint64_t seed) {
  Rng rng(seed);
  Mat<T> s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = static_cast<T>(rng.uniform01());
  return s;
}

Dsmae<double> tiny_mae(double keep, std::uint64_t seed = 1) {
  Dsmae<double> m;
  m.init(/*slice=*/16, /*patch=*/8, /*d=*/8, /*t=*/1, /*h=*/2, 'L', keep, seed);
  return m;
}

}  // namespace

TEST_CASE("keep_ratio 1 reduces the MAE to the unmasked pipeline") {
  Dsmae<double> m = tiny_mae(1.0);
  const Mat<double> x = random_slice<double>(16, 5);
  MaeCache<double> cache;
  const Mat<double> recon = m.mae_forward(x, 9, cache);
  CHECK(cache.plan.masked.empty());

  // manual unmasked pipeline
  const Mat<double> patches = patchify(x, 8);
  EncoderCache<double> ec;
  const Mat<double> enc = m.encoder.forward(m.embed.forward(patches), ec);
  const Mat<double> expected = unpatchify(m.head.forward(enc), 16, 16, 8);
  CHECK(recon == expected);
}

TEST_CASE("mae_forward is deterministic for a fixed seed") {
  Dsmae<double> m = tiny_mae(0.5);
  const Mat<double> x = random_slice<double>(16, 6);
  MaeCache<double> c1, c2;
  const Mat<double> r1 = m.mae_forward(x, 33, c1);
  const Mat<double> r2 = m.mae_forward(x, 33, c2);
  CHECK(r1 == r2);
  CHECK(c1.plan.visible == c2.plan.visible);
  MaeCache<double> c3;
  const Mat<double> r3 = m.mae_forward(x, 34, c3);
  CHECK(r1 != r3);
}

TEST_CASE("linear hand-trace: zeroed pipeline reconstructs the head bias") {
  Dsmae<double> m;
  m.init(16, 8, 8, /*t=*/0, 2, 'L', 0.5, 3);
  m.embed.proj.W.setZero();
  m.embed.proj.b.setZero();
  m.mask_token.setZero();
  m.head.W.setZero();
  m.head.b.setConstant(0.37);
  const Mat<double> x = random_slice<double>(16, 7);
  MaeCache<double> cache;
  const Mat<double> recon = m.mae_forward(x, 2, cache);
  CHECK((recon.array() == 0.37).all());
}

TEST_CASE("stage1 loss closed forms and oracle") {
  const Mat<double> a = random_slice<double>(16, 8);
  CHECK(stage1_loss(a, a) == 0.0);

  Mat<double> b = a;
  b.array() += 0.2;
  CHECK(stage1_loss(b, a) == doctest::Approx(0.2).epsilon(1e-12));

  const Mat<double> c = random_slice<double>(16, 9);
  double oracle = 0.0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) oracle += std::abs(a(i, j) - c(i, j));
  oracle /= 256.0;
  CHECK(stage1_loss(a, c) == doctest::Approx(oracle).epsilon(1e-7));

  CHECK(stage1_loss(a, c) == stage1_loss(c, a));
  CHECK(stage1_loss(a, c) >= 0.0);
  Mat<double> wrong(8, 8);
  CHECK_THROWS_AS(stage1_loss(a, wrong), ShapeError);
}

TEST_CASE("reconstruction ignores pixels inside masked patches") {
  Dsmae<double> m = tiny_mae(0.5);
  const Mat<double> x = random_slice<double>(16, 10);
  MaeCache<double> c1;
  const Mat<double> r1 = m.mae_forward(x, 77, c1);
  REQUIRE(!c1.plan.masked.empty());

  // perturb only pixels of masked patches
  Mat<double> x2 = x;
  for (int idx : c1.plan.masked) {
    const int tw = 16 / 8;
    const int ty = idx / tw, tx = idx % tw;
    for (int py = 0; py < 8; ++py)
      for (int px = 0; px < 8; ++px) x2(ty * 8 + py, tx * 8 + px) += 0.123;
  }
  MaeCache<double> c2;
  const Mat<double> r2 = m.mae_forward(x2, 77, c2);
  CHECK(c2.plan.visible == c1.plan.visible);
  CHECK(r1 == r2);
}

TEST_CASE("mae gradients match finite differences") {
  Dsmae<double> m = tiny_mae(0.5, 11);
  const Mat<double> x = random_slice<double>(16, 12);
  const std::uint64_t mask_seed = 13;

  auto loss_fn = [&]() {
    MaeCache<double> cache;
    return double(stage1_loss(m.mae_forward(x, mask_seed, cache), x));
  };
  ParamRegistry<double> reg;
  m.collect("", reg);
  reg.zero_grads();
  {
    MaeCache<double> cache;
    const Mat<double> recon = m.mae_forward(x, mask_seed, cache);
    m.mae_backward(cache, stage1_loss_backward(recon, x));
  }
  const double delta = 1e-6;
  double max_rel = 0.0;
  Rng pick(14);
  for (const auto& e : reg.entries()) {
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
  CHECK(max_rel < 1e-6);
}

TEST_CASE("a short optimization run reduces the stage-I loss") {
  Dsmae<double> m;
  m.init(32, 8, 16, 1, 2, 'S', 0.25, 21);
  std::vector<Mat<double>> slices;
  for (int i = 0; i < 8; ++i) slices.push_back(random_slice<double>(32, 100 + i));

  ParamRegistry<double> reg;
  m.collect("", reg);
  Adam<double> adam;

  auto eval_loss = [&]() {
    double acc = 0;
    for (std::size_t i = 0; i < slices.size(); ++i) {
      MaeCache<double> cache;
      acc += double(stage1_loss(m.mae_forward(slices[i], 1000 + i, cache), slices[i]));
    }
    return acc / double(slices.size());
  };

  const double before = eval_loss();
  for (int step = 0; step < 40; ++step) {
    reg.zero_grads();
    for (std::size_t i = 0; i < slices.size(); ++i) {
      MaeCache<double> cache;
      const Mat<double> recon = m.mae_forward(slices[i], step * 8 + i, cache);
      Mat<double> d = stage1_loss_backward(recon, slices[i]) / double(slices.size());
      m.mae_backward(cache, d);
    }
    adam.step(reg, 2e-3);
  }
  const double after = eval_loss();
  CHECK(after < before);
}

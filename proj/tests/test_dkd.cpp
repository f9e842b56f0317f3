#include <doctest.h>

#include "s3pet/dkd.hpp"

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

Vec<double> random_dist(int d, Rng& rng) {
  Vec<double> p(d);
  double sum = 0;
  for (int i = 0; i < d; ++i) {
    p(i) = rng.uniform01() + 1e-3;
    sum += p(i);
  }
  return p / sum;
}

}  // namespace

TEST_CASE("decouple with zero projectors yields zero streams") {
  Dkd<double> dkd;
  dkd.init(8, 1);
  dkd.spec_l.W.setZero();
  dkd.spec_l.b.setZero();
  dkd.inv.W.setZero();
  dkd.inv.b.setZero();
  const Mat<double> e = random_mat<double>(4, 8, 2);
  const DecoupledTokens<double> out = decouple(e, 'L', dkd);
  CHECK(out.specific.isZero());
  CHECK(out.invariant.isZero());
}

TEST_CASE("identity invariant projector passes tokens through") {
  Dkd<double> dkd;
  dkd.init(8, 1);
  dkd.inv.W = Mat<double>::Identity(8, 8);
  dkd.inv.b.setZero();
  const Mat<double> e = random_mat<double>(4, 8, 3);
  CHECK(decouple(e, 'S', dkd).invariant == e);
}

TEST_CASE("decouple matches a naive matrix-vector oracle") {
  Dkd<double> dkd;
  dkd.init(6, 5);
  const Mat<double> e = random_mat<double>(3, 6, 6);
  const DecoupledTokens<double> out = decouple(e, 'L', dkd);
  for (int k = 0; k < 3; ++k) {
    for (int o = 0; o < 6; ++o) {
      double spec = dkd.spec_l.b(o, 0), inv = dkd.inv.b(o, 0);
      for (int t = 0; t < 6; ++t) {
        spec += dkd.spec_l.W(o, t) * e(k, t);
        inv += dkd.inv.W(o, t) * e(k, t);
      }
      CHECK(out.specific(k, o) == doctest::Approx(spec).epsilon(1e-6));
      CHECK(out.invariant(k, o) == doctest::Approx(inv).epsilon(1e-6));
    }
  }
}

TEST_CASE("the invariant projector is one storage shared by both doses") {
  Dkd<double> dkd;
  dkd.init(8, 7);
  const Mat<double> e = random_mat<double>(4, 8, 8);
  const Mat<double> before_l = decouple(e, 'L', dkd).invariant;
  const Mat<double> before_s = decouple(e, 'S', dkd).invariant;
  CHECK(before_l == before_s);

  // mutate through any handle; both dose branches observe it
  dkd.inv.W(0, 0) += 1.0;
  const Mat<double> after_l = decouple(e, 'L', dkd).invariant;
  const Mat<double> after_s = decouple(e, 'S', dkd).invariant;
  CHECK(after_l == after_s);
  CHECK(after_l != before_l);

  // and the registry exposes exactly one invariant tensor
  ParamRegistry<double> reg;
  dkd.collect("dkd", reg);
  int inv_count = 0;
  for (const auto& entry : reg.entries()) {
    if (entry.name.find(".inv.") != std::string::npos) ++inv_count;
  }
  CHECK(inv_count == 2);  // W and b, once each
}

TEST_CASE("token_softmax of constant rows is uniform") {
  Mat<double> t = Mat<double>::Constant(3, 8, 0.7);
  const Mat<double> p = token_softmax(t);
  CHECK((p.array() - 1.0 / 8).abs().maxCoeff() < 1e-12);
}

TEST_CASE("token_softmax is shift invariant per token") {
  const Mat<double> t = random_mat<double>(4, 8, 9);
  Mat<double> shifted = t;
  shifted.array() += 3.21;
  CHECK(((token_softmax(t) - token_softmax(shifted)).cwiseAbs().maxCoeff()) < 1e-7);
}

TEST_CASE("token_softmax matches a scalar exp/sum oracle and rows sum to 1") {
  const Mat<double> t = random_mat<double>(4, 8, 10);
  const Mat<double> p = token_softmax(t);
  for (int k = 0; k < 4; ++k) {
    double denom = 0;
    for (int j = 0; j < 8; ++j) denom += std::exp(t(k, j));
    for (int j = 0; j < 8; ++j) {
      CHECK(p(k, j) == doctest::Approx(std::exp(t(k, j)) / denom).epsilon(1e-7));
      CHECK(p(k, j) > 0);
      CHECK(p(k, j) < 1);
    }
    CHECK(p.row(k).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("js divergence closed forms") {
  Rng rng(11);
  const Vec<double> p = random_dist(16, rng);
  CHECK(js_divergence(p, p) < 1e-12);

  Vec<double> a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  CHECK(std::abs(js_divergence(a, b) - std::log(2.0)) < 1e-6);
}

TEST_CASE("js divergence matches a direct summation oracle") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec<double> p = random_dist(16, rng);
    const Vec<double> q = random_dist(16, rng);
    double oracle = 0;
    for (int i = 0; i < 16; ++i) {
      const double m = 0.5 * (p(i) + q(i));
      oracle += 0.5 * p(i) * std::log(p(i) / m) + 0.5 * q(i) * std::log(q(i) / m);
    }
    CHECK(std::abs(js_divergence(p, q) - oracle) < 1e-9);
    CHECK(std::abs(js_divergence(p, q) - js_divergence(q, p)) < 1e-12);
    CHECK(js_divergence(p, q) >= 0);
    CHECK(js_divergence(p, q) <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("js divergence rejects unnormalized inputs") {
  Vec<double> p(4), q(4);
  p << 0.5, 0.5, 0.5, 0.5;
  q << 0.25, 0.25, 0.25, 0.25;
  CHECK_THROWS_AS(js_divergence(p, q), NumericError);
  p << -0.5, 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(js_divergence(p, q), NumericError);
}

TEST_CASE("alignment loss closed forms and oracle") {
  const Mat<double> l = random_mat<double>(5, 8, 13);
  CHECK(alignment_loss(l, l) < 1e-10);

  const Mat<double> s = random_mat<double>(5, 8, 14);
  CHECK(std::abs(alignment_loss(l, s) - alignment_loss(s, l)) < 1e-12);

  const Mat<double> pl = token_softmax(l), ps = token_softmax(s);
  double oracle = 0;
  for (int k = 0; k < 5; ++k) {
    for (int i = 0; i < 8; ++i) {
      const double m = 0.5 * (pl(k, i) + ps(k, i));
      oracle += 0.5 * pl(k, i) * std::log(pl(k, i) / m) +
                0.5 * ps(k, i) * std::log(ps(k, i) / m);
    }
  }
  oracle /= 5.0;
  CHECK(std::abs(alignment_loss(l, s) - oracle) < 1e-9);

  Mat<double> wrong(4, 8);
  CHECK_THROWS_AS(alignment_loss(l, wrong), ShapeError);
}

TEST_CASE("alignment loss vanishes exactly when softmaxed rows agree") {
  const Mat<double> l = random_mat<double>(3, 8, 15);
  Mat<double> s = l;
  s.array() += 0.9;  // per-token shift leaves softmax unchanged
  CHECK(alignment_loss(l, s) < 1e-8);

  Mat<double> different = l;
  different(0, 0) += 0.5;
  CHECK(alignment_loss(l, different) > 1e-8);
}

TEST_CASE("alignment loss gradients match finite differences in both arguments") {
  Mat<double> l = random_mat<double>(3, 6, 16, 0.5);
  Mat<double> s = random_mat<double>(3, 6, 17, 0.5);
  auto [dl, ds] = alignment_loss_backward(l, s, 1.0);

  const double delta = 1e-6;
  Rng pick(18);
  double max_rel = 0.0;
  for (int rep = 0; rep < 16; ++rep) {
    const int i = int(pick.below(3));
    const int j = int(pick.below(6));
    {
      const double saved = l(i, j);
      l(i, j) = saved + delta;
      const double lp = alignment_loss(l, s);
      l(i, j) = saved - delta;
      const double lm = alignment_loss(l, s);
      l(i, j) = saved;
      const double numeric = (lp - lm) / (2 * delta);
      max_rel = std::max(max_rel, std::abs(dl(i, j) - numeric) /
                                      std::max({std::abs(dl(i, j)), std::abs(numeric), 1e-8}));
    }
    {
      const double saved = s(i, j);
      s(i, j) = saved + delta;
      const double lp = alignment_loss(l, s);
      s(i, j) = saved - delta;
      const double lm = alignment_loss(l, s);
      s(i, j) = saved;
      const double numeric = (lp - lm) / (2 * delta);
      max_rel = std::max(max_rel, std::abs(ds(i, j) - numeric) /
                                      std::max({std::abs(ds(i, j)), std::abs(numeric), 1e-8}));
    }
  }
  CHECK(max_rel < 1e-7);
}

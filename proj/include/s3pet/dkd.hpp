#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "s3pet/nn.hpp"

namespace s3pet {

/// Dose knowledge decouple: per-dose specific projectors plus one invariant
/// projector whose parameters are shared by both doses.
template <typename T>
struct Dkd {
  Linear<T> spec_l, spec_s;
  Linear<T> inv;  // single storage, used by both dose branches

  void init(int d, std::uint64_t seed) {
    Rng rng(seed);
    spec_l.init(d, d, rng);
    spec_s.init(d, d, rng);
    inv.init(d, d, rng);
  }

  Linear<T>& specific(char dose) {
    if (dose == 'L') return spec_l;
    if (dose == 'S') return spec_s;
    throw ConfigError("dkd: dose must be L or S");
  }
  const Linear<T>& specific(char dose) const {
    return const_cast<Dkd<T>*>(this)->specific(dose);
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    spec_l.collect(join_name(prefix, "spec_L"), reg);
    spec_s.collect(join_name(prefix, "spec_S"), reg);
    inv.collect(join_name(prefix, "inv"), reg);
  }
};

template <typename T>
struct DecoupledTokens {
  Mat<T> specific;   // N x d
  Mat<T> invariant;  // N x d
  char dose = 'S';
};

template <typename T>
DecoupledTokens<T> decouple(const Mat<T>& tokens, char dose, const Dkd<T>& dkd) {
  DecoupledTokens<T> out;
  out.dose = dose;
  out.specific = dkd.specific(dose).forward(tokens);
  out.invariant = dkd.inv.forward(tokens);
  return out;
}

/// Per-token softmax over the embedding channels; each row becomes a
/// probability vector.
template <typename T>
Mat<T> token_softmax(const Mat<T>& t) {
  if (!t.allFinite()) throw NumericError("token_softmax: non-finite input");
  return softmax_rows(t);
}

constexpr double kJsEps = 1e-8;

/// JS(p,q) = KL(p||m)/2 + KL(q||m)/2 with m the mixture, natural log.
/// Probabilities are clamped to 1e-8 inside the logs; result in [0, ln 2].
template <typename T>
T js_divergence(const Vec<T>& p, const Vec<T>& q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: length mismatch");
  if ((p.array() < T(0)).any() || (q.array() < T(0)).any()) {
    throw NumericError("js_divergence: negative probability");
  }
  if (std::abs(double(p.sum()) - 1.0) > 1e-4 || std::abs(double(q.sum()) - 1.0) > 1e-4) {
    throw NumericError("js_divergence: inputs must sum to 1 within 1e-4");
  }
  const T eps = static_cast<T>(kJsEps);
  T acc = T(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const T m = (p(i) + q(i)) / T(2);
    const T lm = std::log(std::max(m, eps));
    acc += T(0.5) * p(i) * (std::log(std::max(p(i), eps)) - lm);
    acc += T(0.5) * q(i) * (std::log(std::max(q(i), eps)) - lm);
  }
  return acc;
}

/// dJS/dp and dJS/dq; exact wherever the eps clamp is inactive.
template <typename T>
std::pair<Vec<T>, Vec<T>> js_divergence_backward(const Vec<T>& p, const Vec<T>& q) {
  const T eps = static_cast<T>(kJsEps);
  Vec<T> dp(p.size()), dq(q.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const T lm = std::log(std::max((p(i) + q(i)) / T(2), eps));
    dp(i) = T(0.5) * (std::log(std::max(p(i), eps)) - lm);
    dq(i) = T(0.5) * (std::log(std::max(q(i), eps)) - lm);
  }
  return {dp, dq};
}

/// Mean over tokens of JS between the channel-softmaxed rows; Eq.-(2) style.
template <typename T>
T alignment_loss(const Mat<T>& l_di, const Mat<T>& s_di) {
  if (l_di.rows() != s_di.rows() || l_di.cols() != s_di.cols()) {
    throw ShapeError("alignment_loss: shape mismatch");
  }
  const Mat<T> p = token_softmax(l_di);
  const Mat<T> q = token_softmax(s_di);
  T acc = T(0);
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    acc += js_divergence<T>(p.row(k).transpose(), q.row(k).transpose());
  }
  return acc / static_cast<T>(p.rows());
}

/// Gradients of alignment_loss w.r.t. both raw token inputs.
template <typename T>
std::pair<Mat<T>, Mat<T>> alignment_loss_backward(const Mat<T>& l_di, const Mat<T>& s_di,
                                                  T upstream = T(1)) {
  const Mat<T> p = token_softmax(l_di);
  const Mat<T> q = token_softmax(s_di);
  const T scale = upstream / static_cast<T>(p.rows());
  Mat<T> dp(p.rows(), p.cols()), dq(q.rows(), q.cols());
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    auto [gp, gq] = js_divergence_backward<T>(p.row(k).transpose(), q.row(k).transpose());
    dp.row(k) = gp.transpose() * scale;
    dq.row(k) = gq.transpose() * scale;
  }
  return {softmax_rows_backward(p, dp), softmax_rows_backward(q, dq)};
}

}  // namespace s3pet

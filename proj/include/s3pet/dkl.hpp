#pragma once

#include <utility>

#include "s3pet/dkd.hpp"

namespace s3pet {

/// Exchanges the dose-specific streams of a paired sample; the invariant
/// streams stay put. Pure data movement, an involution.
template <typename T>
std::pair<DecoupledTokens<T>, DecoupledTokens<T>> token_swap(
    const DecoupledTokens<T>& l, const DecoupledTokens<T>& s) {
  if (l.specific.rows() != s.specific.rows() ||
      l.specific.cols() != s.specific.cols()) {
    throw ShapeError("token_swap: shape mismatch");
  }
  DecoupledTokens<T> l_swapped{s.specific, l.invariant, l.dose};
  DecoupledTokens<T> s_swapped{l.specific, s.invariant, s.dose};
  return {l_swapped, s_swapped};
}

/// Linear transfer module predicting SPET-style dose-specific tokens from
/// LPET ones, applied per token.
template <typename T>
Mat<T> transfer(const Mat<T>& l_ds, const Linear<T>& params) {
  return params.forward(l_ds);
}

/// Eq.-(3) style transfer objective: mean per-token JS after channel softmax.
/// s_ds is a constant target; gradients flow into the prediction only.
template <typename T>
T transfer_loss(const Mat<T>& s_ds, const Mat<T>& s_ds_pred) {
  if (s_ds.rows() != s_ds_pred.rows() || s_ds.cols() != s_ds_pred.cols()) {
    throw ShapeError("transfer_loss: shape mismatch");
  }
  return alignment_loss(s_ds, s_ds_pred);
}

/// d(transfer_loss)/d(s_ds_pred); no gradient is produced for the target.
template <typename T>
Mat<T> transfer_loss_backward(const Mat<T>& s_ds, const Mat<T>& s_ds_pred,
                              T upstream = T(1)) {
  auto [dtarget, dpred] = alignment_loss_backward(s_ds, s_ds_pred, upstream);
  (void)dtarget;
  return dpred;
}

}  // namespace s3pet

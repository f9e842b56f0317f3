#pragma once

#include <cmath>

#include "s3pet/common.hpp"

namespace s3pet {

struct LossWeights {
  double gamma = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 5.0;
};

inline void validate_weights(const LossWeights& w) {
  if (!(w.gamma >= 0.0) || !(w.lambda1 >= 0.0) || !(w.lambda2 >= 0.0)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

struct LossReport {
  double align = 0.0;
  double transfer = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

template <typename T>
T mean_abs_diff(const Mat<T>& a, const Mat<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("mean_abs_diff: shape mismatch");
  }
  return (a - b).cwiseAbs().mean();
}

/// d(mean_abs_diff)/da scaled by `scale`, with sign(0) = 0.
template <typename T>
Mat<T> mean_abs_diff_backward(const Mat<T>& a, const Mat<T>& b, T scale) {
  const T inv = scale / static_cast<T>(a.size());
  return (a - b).unaryExpr([inv](T v) {
    return v > T(0) ? inv : (v < T(0) ? -inv : T(0));
  });
}

/// Gamma-weighted two-branch reconstruction loss:
/// mean|x̃_L - x_L| + gamma * mean|x̃_S - x_S|.
template <typename T>
T rec_loss(const Mat<T>& pred_l, const Mat<T>& real_l, const Mat<T>& pred_s,
           const Mat<T>& real_s, double gamma) {
  return mean_abs_diff(pred_l, real_l) +
         static_cast<T>(gamma) * mean_abs_diff(pred_s, real_s);
}

/// Combined Stage-II objective: align + lambda1*transfer + lambda2*rec.
inline LossReport stage2_loss(double align, double transfer, double rec,
                              const LossWeights& w) {
  if (!std::isfinite(align) || !std::isfinite(transfer) || !std::isfinite(rec)) {
    throw NumericError("stage2_loss: non-finite component");
  }
  LossReport r;
  r.align = align;
  r.transfer = transfer;
  r.rec = rec;
  r.total = align + w.lambda1 * transfer + w.lambda2 * rec;
  return r;
}

}  // namespace s3pet

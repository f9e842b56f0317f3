#pragma once

#include <cmath>
#include <vector>

#include "s3pet/nn.hpp"

namespace s3pet {

/// Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8. Moment
/// buffers are keyed by registry order and verified against it per step.
template <typename T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::int64_t step_count() const { return t_; }

  void step(ParamRegistry<T>& reg, double lr) {
    ensure_state(reg);
    ++t_;
    const T b1 = static_cast<T>(kBeta1);
    const T b2 = static_cast<T>(kBeta2);
    const T corr1 = T(1) - static_cast<T>(std::pow(kBeta1, double(t_)));
    const T corr2 = T(1) - static_cast<T>(std::pow(kBeta2, double(t_)));
    const T eps = static_cast<T>(kEps);
    const T step_size = static_cast<T>(lr);
    std::size_t slot = 0;
    for (const auto& e : reg.entries()) {
      if (!e.learnable()) continue;
      if (!e.grad->allFinite()) {
        throw NumericError("adam: non-finite gradient for parameter " + e.name);
      }
      Mat<T>& m = m_[slot];
      Mat<T>& v = v_[slot];
      m = b1 * m + (T(1) - b1) * (*e.grad);
      v = (b2 * v.array() + (T(1) - b2) * e.grad->array().square()).matrix();
      const Mat<T> mhat = m / corr1;
      const Mat<T> vhat = v / corr2;
      e.value->array() -= step_size * mhat.array() / (vhat.array().sqrt() + eps);
      ++slot;
    }
  }

 private:
  void ensure_state(const ParamRegistry<T>& reg) {
    std::size_t learnable = 0;
    for (const auto& e : reg.entries())
      if (e.learnable()) ++learnable;
    if (m_.empty()) {
      m_.reserve(learnable);
      v_.reserve(learnable);
      for (const auto& e : reg.entries()) {
        if (!e.learnable()) continue;
        m_.push_back(Mat<T>::Zero(e.value->rows(), e.value->cols()));
        v_.push_back(Mat<T>::Zero(e.value->rows(), e.value->cols()));
      }
    } else if (m_.size() != learnable) {
      throw ConfigError("adam: registry layout changed between steps");
    }
  }

  std::vector<Mat<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace s3pet

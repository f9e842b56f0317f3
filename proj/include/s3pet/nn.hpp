#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "s3pet/common.hpp"
#include "s3pet/rng.hpp"

namespace s3pet {

/// Flat view over every tensor of a model: learnable parameters carry a
/// gradient buffer, buffers (e.g. batch-norm running stats) do not.
template <typename T>
struct ParamRef {
  std::string name;
  Mat<T>* value = nullptr;
  Mat<T>* grad = nullptr;  // nullptr for buffers
  bool learnable() const { return grad != nullptr; }
};

template <typename T>
class ParamRegistry {
 public:
  void add(const std::string& name, Mat<T>& value, Mat<T>& grad) {
    check_unique(name);
    entries_.push_back({name, &value, &grad});
  }
  void add_buffer(const std::string& name, Mat<T>& value) {
    check_unique(name);
    entries_.push_back({name, &value, nullptr});
  }

  const std::vector<ParamRef<T>>& entries() const { return entries_; }

  std::size_t learnable_scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.learnable()) n += e.value->size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.grad) e.grad->setZero();
  }

  const ParamRef<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

 private:
  void check_unique(const std::string& name) const {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  }
  std::vector<ParamRef<T>> entries_;
};

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

template <typename T>
void fill_trunc_normal(Mat<T>& m, Rng& rng, double std_dev = 0.02) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = static_cast<T>(rng.trunc_normal(std_dev));
}

/// Per-token affine map; rows of x are tokens: y = x * W^T + b.
template <typename T>
struct Linear {
  Mat<T> W;   // out x in
  Mat<T> b;   // out x 1
  Mat<T> dW, db;

  void init(int out, int in, Rng& rng) {
    W.resize(out, in);
    fill_trunc_normal(W, rng);
    b = Mat<T>::Zero(out, 1);
    dW = Mat<T>::Zero(out, in);
    db = Mat<T>::Zero(out, 1);
  }

  void init_zero(int out, int in) {
    W = Mat<T>::Zero(out, in);
    b = Mat<T>::Zero(out, 1);
    dW = Mat<T>::Zero(out, in);
    db = Mat<T>::Zero(out, 1);
  }

  Mat<T> forward(const Mat<T>& x) const {
    if (x.cols() != W.cols()) {
      throw ShapeError("linear: input dim " + std::to_string(x.cols()) +
                       " != " + std::to_string(W.cols()));
    }
    Mat<T> y = x * W.transpose();
    y.rowwise() += b.col(0).transpose();
    return y;
  }

  // Accumulates dW/db, returns gradient w.r.t. x.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    dW.noalias() += dy.transpose() * x;
    db.col(0).noalias() += dy.colwise().sum().transpose();
    return dy * W;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(join_name(prefix, "W"), W, dW);
    reg.add(join_name(prefix, "b"), b, db);
  }
};

template <typename T>
struct LayerNormCache {
  Mat<T> input;  // n x d
  Mat<T> xhat;   // n x d
  Vec<T> rstd;   // n
};

template <typename T>
struct LayerNorm {
  Mat<T> gain, offset;  // d x 1
  Mat<T> dgain, doffset;
  static constexpr double kEps = 1e-5;

  void init(int d) {
    gain = Mat<T>::Ones(d, 1);
    offset = Mat<T>::Zero(d, 1);
    dgain = Mat<T>::Zero(d, 1);
    doffset = Mat<T>::Zero(d, 1);
  }

  Mat<T> forward(const Mat<T>& x, LayerNormCache<T>& cache) const {
    const Eigen::Index n = x.rows(), d = x.cols();
    cache.input = x;
    cache.xhat.resize(n, d);
    cache.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mu = x.row(i).mean();
      const T var = (x.row(i).array() - mu).square().mean();
      const T rstd = T(1) / std::sqrt(var + static_cast<T>(kEps));
      cache.rstd(i) = rstd;
      cache.xhat.row(i) = (x.row(i).array() - mu) * rstd;
    }
    Mat<T> y = cache.xhat;
    y.array().rowwise() *= gain.col(0).transpose().array();
    y.rowwise() += offset.col(0).transpose();
    return y;
  }

  Mat<T> backward(const LayerNormCache<T>& cache, const Mat<T>& dy) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    dgain.col(0).noalias() += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
    doffset.col(0).noalias() += dy.colwise().sum().transpose();
    Mat<T> dxhat = dy;
    dxhat.array().rowwise() *= gain.col(0).transpose().array();
    Mat<T> dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T m1 = dxhat.row(i).mean();
      const T m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
      dx.row(i) = cache.rstd(i) *
                  (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add(join_name(prefix, "g"), gain, dgain);
    reg.add(join_name(prefix, "o"), offset, doffset);
  }
};

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad_scalar(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * static_cast<T>(M_PI));
  return cdf + x * pdf;
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return gelu_scalar(v); });
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return gelu_grad_scalar(v); });
}

/// Row-wise softmax with max subtraction.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mx = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

/// dL/dx for y = softmax_rows(x) given p = y and dp = dL/dy.
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& p, const Mat<T>& dp) {
  Mat<T> dx(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const T dot = p.row(i).dot(dp.row(i));
    dx.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
  }
  return dx;
}

}  // namespace s3pet

#include "s3pet/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace s3pet {

ImageVolume restack(const std::vector<Mat<float>>& slices) {
  if (slices.empty()) throw ShapeError("restack: need at least one slice");
  const int h = static_cast<int>(slices.front().rows());
  const int w = static_cast<int>(slices.front().cols());
  for (const auto& s : slices) {
    if (s.rows() != h || s.cols() != w) {
      throw ShapeError("restack: heterogeneous slice shapes");
    }
  }
  ImageVolume vol = make_volume(static_cast<int>(slices.size()), h, w);
  for (int k = 0; k < vol.depth; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) vol.at(k, i, j) = slices[k](i, j);
  return vol;
}

double psnr(const ImageVolume& pred, const ImageVolume& ref, double max_val) {
  if (!pred.same_shape(ref)) throw ShapeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = double(pred.data[i]) - double(ref.data[i]);
    mse += d * d;
  }
  mse /= double(pred.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kRange = 1.0;

// Weighted local sum of img at every valid window center. The 11x11
// Gaussian window is separable, so two 1D passes suffice.
MatD window_filter(const MatD& img) {
  const int r = kWin / 2;
  std::vector<double> k1d(kWin);
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - r;
    k1d[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += k1d[i];
  }
  for (double& v : k1d) v /= s;

  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  MatD horiz(h, w - 2 * r);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w - 2 * r; ++j) {
      double acc = 0.0;
      for (int t = 0; t < kWin; ++t) acc += k1d[t] * img(i, j + t);
      horiz(i, j) = acc;
    }
  }
  MatD out(h - 2 * r, w - 2 * r);
  for (int j = 0; j < w - 2 * r; ++j) {
    for (int i = 0; i < h - 2 * r; ++i) {
      double acc = 0.0;
      for (int t = 0; t < kWin; ++t) acc += k1d[t] * horiz(i + t, j);
      out(i, j) = acc;
    }
  }
  return out;
}

double ssim_slice(const MatD& x, const MatD& y) {
  const double c1 = (kK1 * kRange) * (kK1 * kRange);
  const double c2 = (kK2 * kRange) * (kK2 * kRange);
  const MatD mu_x = window_filter(x);
  const MatD mu_y = window_filter(y);
  const MatD sxx = window_filter(MatD(x.cwiseProduct(x)));
  const MatD syy = window_filter(MatD(y.cwiseProduct(y)));
  const MatD sxy = window_filter(MatD(x.cwiseProduct(y)));
  double acc = 0.0;
  for (int i = 0; i < mu_x.rows(); ++i) {
    for (int j = 0; j < mu_x.cols(); ++j) {
      const double mx = mu_x(i, j), my = mu_y(i, j);
      const double vx = sxx(i, j) - mx * mx;
      const double vy = syy(i, j) - my * my;
      const double cxy = sxy(i, j) - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return acc / double(mu_x.size());
}

}  // namespace

double ssim(const ImageVolume& pred, const ImageVolume& ref) {
  if (!pred.same_shape(ref)) throw ShapeError("ssim: shape mismatch");
  if (pred.height < kWin || pred.width < kWin) {
    throw ShapeError("ssim: slice smaller than the 11x11 window");
  }
  double acc = 0.0;
  for (int k = 0; k < pred.depth; ++k) {
    MatD x(pred.height, pred.width), y(pred.height, pred.width);
    for (int i = 0; i < pred.height; ++i) {
      for (int j = 0; j < pred.width; ++j) {
        x(i, j) = pred.at(k, i, j);
        y(i, j) = ref.at(k, i, j);
      }
    }
    acc += ssim_slice(x, y);
  }
  return acc / double(pred.depth);
}

double nmse(const ImageVolume& pred, const ImageVolume& ref) {
  if (!pred.same_shape(ref)) throw ShapeError("nmse: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = double(pred.data[i]) - double(ref.data[i]);
    num += d * d;
    den += double(ref.data[i]) * double(ref.data[i]);
  }
  if (den == 0.0) throw NumericError("nmse: reference volume is identically zero");
  return num / den;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return std::string(buf);
}

void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("write_metrics_csv: cannot open " + path);
  os << "case,psnr,ssim,nmse\n";
  for (const auto& r : rows) {
    os << r.case_id << ',' << format_metric(r.psnr) << ',' << format_metric(r.ssim)
       << ',' << format_metric(r.nmse) << '\n';
  }
}

}  // namespace s3pet

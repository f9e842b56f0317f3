#pragma once

#include <string>
#include <vector>

#include "s3pet/image.hpp"

namespace s3pet {

struct MetricReport {
  std::string case_id;
  double psnr = 0.0;  // +inf when pred == ref
  double ssim = 0.0;
  double nmse = 0.0;
};

/// Stacks equally-shaped slices into a volume, order preserved.
ImageVolume restack(const std::vector<Mat<float>>& slices);

/// 10*log10(max_val^2 / MSE) over all voxels; +inf for identical inputs.
double psnr(const ImageVolume& pred, const ImageVolume& ref, double max_val = 1.0);

/// Mean over slices of 2D windowed SSIM (11x11 Gaussian, sigma 1.5,
/// K1=0.01, K2=0.03, dynamic range 1), windows fully inside the slice.
double ssim(const ImageVolume& pred, const ImageVolume& ref);

/// ||pred - ref||^2 / ||ref||^2.
double nmse(const ImageVolume& pred, const ImageVolume& ref);

std::string format_metric(double v);

void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& rows);

}  // namespace s3pet

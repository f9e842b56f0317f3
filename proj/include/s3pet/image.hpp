#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s3pet/common.hpp"

namespace s3pet {

/// Normalized intensity volume, values in [0,1], row-major (depth slowest).
struct ImageVolume {
  int depth = 0;
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> data;

  std::size_t size() const {
    return static_cast<std::size_t>(depth) * height * width * channels;
  }

  float& at(int d, int h, int w) {
    return data[(static_cast<std::size_t>(d) * height + h) * width + w];
  }
  float at(int d, int h, int w) const {
    return data[(static_cast<std::size_t>(d) * height + h) * width + w];
  }

  bool same_shape(const ImageVolume& o) const {
    return depth == o.depth && height == o.height && width == o.width &&
           channels == o.channels;
  }
};

inline ImageVolume make_volume(int depth, int height, int width, float fill = 0.f) {
  ImageVolume v;
  v.depth = depth;
  v.height = height;
  v.width = width;
  v.channels = 1;
  v.data.assign(v.size(), fill);
  return v;
}

inline void validate_volume(const ImageVolume& v) {
  if (v.depth <= 0 || v.height <= 0 || v.width <= 0 || v.channels != 1) {
    throw ShapeError("volume dims must be positive with C=1");
  }
  if (v.data.size() != v.size()) {
    throw ShapeError("volume payload length does not match dims");
  }
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const float x = v.data[i];
    if (!std::isfinite(x) || x < 0.f || x > 1.f) {
      throw NumericError("volume value out of [0,1] at index " + std::to_string(i));
    }
  }
}

/// One 2D training slice as an Eigen matrix (rows = image rows).
template <typename T>
Mat<T> volume_slice(const ImageVolume& v, int k) {
  Mat<T> s(v.height, v.width);
  for (int i = 0; i < v.height; ++i)
    for (int j = 0; j < v.width; ++j) s(i, j) = static_cast<T>(v.at(k, i, j));
  return s;
}

template <typename T>
std::vector<Mat<T>> volume_slices(const ImageVolume& v) {
  std::vector<Mat<T>> out;
  out.reserve(v.depth);
  for (int k = 0; k < v.depth; ++k) out.push_back(volume_slice<T>(v, k));
  return out;
}

}  // namespace s3pet

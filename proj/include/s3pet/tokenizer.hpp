#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "s3pet/nn.hpp"
#include "s3pet/rng.hpp"

namespace s3pet {

/// Splits an H x W slice into non-overlapping P x P tiles in row-major tile
/// order; patch k holds its tile's pixels row-major. Lossless.
template <typename T>
Mat<T> patchify(const Mat<T>& slice, int P) {
  const int H = static_cast<int>(slice.rows());
  const int W = static_cast<int>(slice.cols());
  if (P <= 0 || H % P != 0 || W % P != 0) {
    throw ConfigError("patchify: image dims must be divisible by patch size");
  }
  const int th = H / P, tw = W / P;
  Mat<T> patches(th * tw, P * P);
  for (int ty = 0; ty < th; ++ty)
    for (int tx = 0; tx < tw; ++tx)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          patches(ty * tw + tx, py * P + px) = slice(ty * P + py, tx * P + px);
  return patches;
}

template <typename T>
Mat<T> unpatchify(const Mat<T>& patches, int H, int W, int P) {
  if (P <= 0 || H % P != 0 || W % P != 0) {
    throw ConfigError("unpatchify: image dims must be divisible by patch size");
  }
  const int th = H / P, tw = W / P;
  if (patches.rows() != th * tw || patches.cols() != P * P) {
    throw ShapeError("unpatchify: patch matrix shape mismatch");
  }
  Mat<T> slice(H, W);
  for (int ty = 0; ty < th; ++ty)
    for (int tx = 0; tx < tw; ++tx)
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          slice(ty * P + py, tx * P + px) = patches(ty * tw + tx, py * P + px);
  return slice;
}

/// Fixed 2D sin-cos positional table for a grid_side x grid_side tile grid.
/// Row k (tile row r = k / grid_side, col c = k % grid_side) holds
/// [sin(r*w_i), cos(r*w_i) | sin(c*w_i), cos(c*w_i)] with
/// w_i = 1 / 10000^(2i/(d/2)), i in [0, d/4).
template <typename T>
Mat<T> positional_table(int grid_side, int dim) {
  if (dim % 4 != 0) {
    throw ConfigError("positional_table: dim must be divisible by 4");
  }
  const int quarter = dim / 4;
  const int n = grid_side * grid_side;
  Mat<T> table(n, dim);
  for (int k = 0; k < n; ++k) {
    const double r = k / grid_side;
    const double c = k % grid_side;
    for (int i = 0; i < quarter; ++i) {
      const double omega = std::pow(10000.0, -2.0 * i / (dim / 2.0));
      table(k, 2 * i) = static_cast<T>(std::sin(r * omega));
      table(k, 2 * i + 1) = static_cast<T>(std::cos(r * omega));
      table(k, dim / 2 + 2 * i) = static_cast<T>(std::sin(c * omega));
      table(k, dim / 2 + 2 * i + 1) = static_cast<T>(std::cos(c * omega));
    }
  }
  return table;
}

/// Visible/masked patch index partition; |visible| = round(keep_ratio*N),
/// clamped to at least one patch.
struct MaskPlan {
  std::vector<int> visible;
  std::vector<int> masked;
  double keep_ratio = 1.0;
};

inline MaskPlan sample_mask(int n, double keep_ratio, std::uint64_t seed) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw ConfigError("sample_mask: keep_ratio must lie in (0,1]");
  }
  const int n_vis = std::clamp(static_cast<int>(std::lround(keep_ratio * n)), 1, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  MaskPlan plan;
  plan.keep_ratio = keep_ratio;
  plan.visible.assign(order.begin(), order.begin() + n_vis);
  plan.masked.assign(order.begin() + n_vis, order.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

/// Linear patch projection plus the fixed positional table.
template <typename T>
struct PatchEmbed {
  Linear<T> proj;  // d x (P*P)
  Mat<T> pos;      // N x d, fixed
  int patch = 0;
  int grid_side = 0;

  void init(int slice_size, int P, int dim, Rng& rng) {
    if (slice_size % P != 0) {
      throw ConfigError("patch_embed: slice size not divisible by patch size");
    }
    patch = P;
    grid_side = slice_size / P;
    proj.init(dim, P * P, rng);
    pos = positional_table<T>(grid_side, dim);
  }

  int n_patches() const { return grid_side * grid_side; }
  int dim() const { return static_cast<int>(proj.W.rows()); }

  /// token_k = proj(patch_k) + pos_k over all patches.
  Mat<T> forward(const Mat<T>& patches) const {
    if (patches.rows() != n_patches()) {
      throw ShapeError("patch_embed: patch count mismatch");
    }
    return proj.forward(patches) + pos;
  }

  Mat<T> backward(const Mat<T>& patches, const Mat<T>& dtokens) {
    return proj.backward(patches, dtokens);
  }

  /// Embeds only the rows listed in indices, in that order.
  Mat<T> forward_subset(const Mat<T>& patches, const std::vector<int>& indices) const {
    Mat<T> sub(static_cast<Eigen::Index>(indices.size()), patches.cols());
    Mat<T> possub(static_cast<Eigen::Index>(indices.size()), pos.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      sub.row(static_cast<Eigen::Index>(i)) = patches.row(indices[i]);
      possub.row(static_cast<Eigen::Index>(i)) = pos.row(indices[i]);
    }
    return proj.forward(sub) + possub;
  }

  void collect(const std::string& prefix, ParamRegistry<T>& reg) {
    proj.collect(join_name(prefix, "proj"), reg);
  }
};

/// Standalone embed per the per-token contract: proj(patch_k) + pos_k.
template <typename T>
Mat<T> embed(const Mat<T>& patches, const Linear<T>& projection, const Mat<T>& pos) {
  if (patches.rows() != pos.rows()) {
    throw ShapeError("embed: patch/pos row mismatch");
  }
  return projection.forward(patches) + pos;
}

}  // namespace s3pet

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3pet/image.hpp"

namespace s3pet {

/// Synthetic phantom layout: random ellipses on a flat background.
struct PhantomSpec {
  int n_ellipses_min = 2;
  int n_ellipses_max = 5;
  std::vector<double> intensity_levels = {0.3, 0.5, 0.8};
  double background = 0.05;
  int slice_size = 64;
  int volume_depth = 8;
  int patch_size = 8;  // slice_size must divide by this
};

void validate_spec(const PhantomSpec& spec);

/// Dose-reduction simulation: Poisson thinning followed by Gaussian blur.
struct DoseParams {
  double drf = 100.0;
  double counts_per_unit = 1e4;
  double blur_sigma = 1.0;
};

void validate_dose(const DoseParams& dose);

struct Ellipse {
  double cx, cy;      // center, pixel units
  double a, b;        // semi-axes, pixel units
  double theta;       // rotation, radians
  double intensity;   // one of spec.intensity_levels
};

bool ellipse_contains(const Ellipse& e, double x, double y);

/// Shape lists per slice for a fixed (seed, spec); the volume generator
/// rasterizes exactly these, so tests can recompute pixels independently.
std::vector<std::vector<Ellipse>> phantom_shapes(std::uint64_t seed,
                                                 const PhantomSpec& spec);

ImageVolume gen_spet_volume(std::uint64_t seed, const PhantomSpec& spec);

ImageVolume derive_lpet(const ImageVolume& spet, const DoseParams& dose,
                        std::uint64_t seed);

struct SplitConfig {
  int unpaired_spet = 12;
  int lpet_pretrain = 3;
  int paired_train = 3;
  int paired_eval = 2;
};

struct SplitManifest {
  std::vector<std::string> unpaired_spet;
  std::vector<std::string> lpet_pretrain;
  std::vector<std::string> paired_train;
  std::vector<std::string> paired_eval;
};

SplitManifest build_splits(const SplitConfig& config);

void write_manifest(const std::string& path, const SplitManifest& m);
SplitManifest read_manifest(const std::string& path);

/// Generates every volume of the split into dir: `<id>_spet.pvol` for all
/// ids, plus `<id>_lpet.pvol` for paired ids. Per-volume RNG streams come
/// from mix_seed(seed, stable volume index), so ids are order-independent.
void generate_dataset(const std::string& dir, const SplitConfig& split,
                      const PhantomSpec& spec, const DoseParams& dose,
                      std::uint64_t seed);

std::string spet_path(const std::string& dir, const std::string& id);
std::string lpet_path(const std::string& dir, const std::string& id);

}  // namespace s3pet

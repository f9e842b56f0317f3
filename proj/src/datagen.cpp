#include "s3pet/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "s3pet/pvol.hpp"
#include "s3pet/rng.hpp"

namespace s3pet {

void validate_spec(const PhantomSpec& spec) {
  if (spec.slice_size <= 0 || spec.volume_depth <= 0) {
    throw ConfigError("phantom: slice_size and volume_depth must be positive");
  }
  if (spec.patch_size <= 0 || spec.slice_size % spec.patch_size != 0) {
    throw ConfigError("phantom: slice_size must be divisible by patch size");
  }
  if (spec.n_ellipses_min < 0 || spec.n_ellipses_max < spec.n_ellipses_min) {
    throw ConfigError("phantom: invalid ellipse count range");
  }
  for (double v : spec.intensity_levels) {
    if (!(v > 0.0 && v <= 1.0)) {
      throw ConfigError("phantom: intensity levels must lie in (0,1]");
    }
  }
  if (spec.background < 0.0 || spec.background > 0.1) {
    throw ConfigError("phantom: background must lie in [0,0.1]");
  }
}

void validate_dose(const DoseParams& dose) {
  if (!(dose.drf >= 1.0)) throw ConfigError("dose: drf must be >= 1");
  if (!(dose.counts_per_unit > 0.0)) {
    throw ConfigError("dose: counts_per_unit must be positive");
  }
  if (dose.blur_sigma < 0.0) throw ConfigError("dose: blur_sigma must be >= 0");
}

bool ellipse_contains(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double c = std::cos(e.theta);
  const double s = std::sin(e.theta);
  const double u = (c * dx + s * dy) / e.a;
  const double v = (-s * dx + c * dy) / e.b;
  return u * u + v * v <= 1.0;
}

std::vector<std::vector<Ellipse>> phantom_shapes(std::uint64_t seed,
                                                 const PhantomSpec& spec) {
  validate_spec(spec);
  Rng rng(seed);
  const double sz = spec.slice_size;
  std::vector<std::vector<Ellipse>> shapes(spec.volume_depth);
  for (auto& slice : shapes) {
    const int span = spec.n_ellipses_max - spec.n_ellipses_min + 1;
    const int n = spec.n_ellipses_min + static_cast<int>(rng.below(span));
    slice.reserve(n);
    for (int i = 0; i < n; ++i) {
      Ellipse e;
      e.cx = rng.uniform(0.15 * sz, 0.85 * sz);
      e.cy = rng.uniform(0.15 * sz, 0.85 * sz);
      e.a = rng.uniform(0.06 * sz, 0.28 * sz);
      e.b = rng.uniform(0.06 * sz, 0.28 * sz);
      e.theta = rng.uniform(0.0, M_PI);
      if (spec.intensity_levels.empty()) {
        e.intensity = 0.0;
      } else {
        e.intensity =
            spec.intensity_levels[rng.below(spec.intensity_levels.size())];
      }
      slice.push_back(e);
    }
  }
  return shapes;
}

ImageVolume gen_spet_volume(std::uint64_t seed, const PhantomSpec& spec) {
  const auto shapes = phantom_shapes(seed, spec);
  ImageVolume vol = make_volume(spec.volume_depth, spec.slice_size, spec.slice_size);
  for (int k = 0; k < spec.volume_depth; ++k) {
    for (int i = 0; i < spec.slice_size; ++i) {
      for (int j = 0; j < spec.slice_size; ++j) {
        double v = spec.background;
        for (const Ellipse& e : shapes[k]) {
          // pixel center (x right, y down)
          if (ellipse_contains(e, j + 0.5, i + 0.5)) v += e.intensity;
        }
        vol.at(k, i, j) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return vol;
}

namespace {

// Separable Gaussian blur, zero sigma is the identity. Kernel renormalized
// at the borders so flat regions stay flat.
void gaussian_blur_slice(ImageVolume& vol, int k, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& w : kernel) w /= ksum;

  const int h = vol.height, w = vol.width;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0, norm = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int jj = j + t;
        if (jj < 0 || jj >= w) continue;
        acc += kernel[t + radius] * vol.at(k, i, jj);
        norm += kernel[t + radius];
      }
      tmp[static_cast<std::size_t>(i) * w + j] = acc / norm;
    }
  }
  for (int j = 0; j < w; ++j) {
    for (int i = 0; i < h; ++i) {
      double acc = 0.0, norm = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int ii = i + t;
        if (ii < 0 || ii >= h) continue;
        acc += kernel[t + radius] * tmp[static_cast<std::size_t>(ii) * w + j];
        norm += kernel[t + radius];
      }
      vol.at(k, i, j) = static_cast<float>(acc / norm);
    }
  }
}

}  // namespace

ImageVolume derive_lpet(const ImageVolume& spet, const DoseParams& dose,
                        std::uint64_t seed) {
  validate_dose(dose);
  validate_volume(spet);
  Rng rng(seed);
  ImageVolume lpet = spet;
  const double rate_scale = dose.counts_per_unit / dose.drf;
  for (std::size_t i = 0; i < lpet.data.size(); ++i) {
    const double rate = static_cast<double>(spet.data[i]) * rate_scale;
    lpet.data[i] = static_cast<float>(static_cast<double>(rng.poisson(rate)) / rate_scale);
  }
  for (int k = 0; k < lpet.depth; ++k) gaussian_blur_slice(lpet, k, dose.blur_sigma);
  for (float& x : lpet.data) x = std::clamp(x, 0.f, 1.f);
  return lpet;
}

SplitManifest build_splits(const SplitConfig& config) {
  if (config.unpaired_spet < 1 || config.lpet_pretrain < 1 ||
      config.paired_train < 1 || config.paired_eval < 1) {
    throw ConfigError("splits: all counts must be >= 1");
  }
  if (config.lpet_pretrain > config.paired_train) {
    throw ConfigError(
        "splits: lpet_pretrain exceeds the paired_train pool it draws from");
  }
  auto id = [](const char* prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
    return std::string(buf);
  };
  SplitManifest m;
  for (int i = 0; i < config.unpaired_spet; ++i) m.unpaired_spet.push_back(id("u", i));
  for (int i = 0; i < config.paired_train; ++i) m.paired_train.push_back(id("p", i));
  for (int i = 0; i < config.lpet_pretrain; ++i) m.lpet_pretrain.push_back(id("p", i));
  for (int i = 0; i < config.paired_eval; ++i) m.paired_eval.push_back(id("e", i));
  return m;
}

void write_manifest(const std::string& path, const SplitManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("write_manifest: cannot open " + path);
  auto emit = [&](const char* role, const std::vector<std::string>& ids) {
    for (const auto& id : ids) os << role << '\t' << id << '\n';
  };
  emit("unpaired_spet", m.unpaired_spet);
  emit("lpet_pretrain", m.lpet_pretrain);
  emit("paired_train", m.paired_train);
  emit("paired_eval", m.paired_eval);
}

SplitManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("read_manifest: cannot open " + path);
  SplitManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("read_manifest: missing tab on line " + std::to_string(lineno));
    }
    const std::string role = line.substr(0, tab);
    const std::string id = line.substr(tab + 1);
    if (role == "unpaired_spet") m.unpaired_spet.push_back(id);
    else if (role == "lpet_pretrain") m.lpet_pretrain.push_back(id);
    else if (role == "paired_train") m.paired_train.push_back(id);
    else if (role == "paired_eval") m.paired_eval.push_back(id);
    else throw FormatError("read_manifest: unknown role '" + role + "' on line " +
                           std::to_string(lineno));
  }
  return m;
}

std::string spet_path(const std::string& dir, const std::string& id) {
  return dir + "/" + id + "_spet.pvol";
}
std::string lpet_path(const std::string& dir, const std::string& id) {
  return dir + "/" + id + "_lpet.pvol";
}

void generate_dataset(const std::string& dir, const SplitConfig& split,
                      const PhantomSpec& spec, const DoseParams& dose,
                      std::uint64_t seed) {
  validate_spec(spec);
  validate_dose(dose);
  const SplitManifest m = build_splits(split);

  // Stable per-volume stream indices: unpaired first, then paired train, eval.
  std::uint64_t index = 0;
  auto gen_pair = [&](const std::string& id, bool with_lpet) {
    const std::uint64_t vseed = mix_seed(seed, index++);
    const ImageVolume spet = gen_spet_volume(vseed, spec);
    write_volume(spet_path(dir, id), spet);
    if (with_lpet) {
      const ImageVolume lpet = derive_lpet(spet, dose, mix_seed(vseed, 1));
      write_volume(lpet_path(dir, id), lpet);
    }
  };
  for (const auto& id : m.unpaired_spet) gen_pair(id, false);
  for (const auto& id : m.paired_train) gen_pair(id, true);
  for (const auto& id : m.paired_eval) gen_pair(id, true);
  write_manifest(dir + "/manifest.tsv", m);
}

}  // namespace s3pet

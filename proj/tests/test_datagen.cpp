#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "s3pet/datagen.hpp"
#include "s3pet/pvol.hpp"
#include "s3pet/rng.hpp"

using namespace s3pet;

namespace {

PhantomSpec small_spec() {
  PhantomSpec spec;
  spec.slice_size = 32;
  spec.volume_depth = 4;
  spec.patch_size = 8;
  return spec;
}

std::filesystem::path tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "s3pet_datagen_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("gen_spet_volume is deterministic per seed") {
  const PhantomSpec spec = small_spec();
  const ImageVolume a = gen_spet_volume(7, spec);
  const ImageVolume b = gen_spet_volume(7, spec);
  CHECK(a.data == b.data);
  const ImageVolume c = gen_spet_volume(8, spec);
  CHECK(a.data != c.data);
}

TEST_CASE("empty phantom spec yields an all-zero volume") {
  PhantomSpec spec = small_spec();
  spec.background = 0.0;
  spec.n_ellipses_min = 0;
  spec.n_ellipses_max = 0;
  const ImageVolume v = gen_spet_volume(7, spec);
  for (float x : v.data) CHECK(x == 0.f);
}

TEST_CASE("invalid phantom spec is rejected") {
  PhantomSpec spec = small_spec();
  spec.slice_size = 30;  // not divisible by 8
  CHECK_THROWS_AS(gen_spet_volume(1, spec), ConfigError);
}

TEST_CASE("phantom pixels equal the shape-list oracle and histogram is the overlap set") {
  PhantomSpec spec = small_spec();
  spec.intensity_levels = {0.2, 0.35, 0.5};
  const std::uint64_t seed = 7;
  const ImageVolume vol = gen_spet_volume(seed, spec);
  const auto shapes = phantom_shapes(seed, spec);
  REQUIRE(int(shapes.size()) == spec.volume_depth);

  // independently recompute every pixel from the shape list
  std::set<float> seen;
  for (int k = 0; k < spec.volume_depth; ++k) {
    for (int i = 0; i < spec.slice_size; ++i) {
      for (int j = 0; j < spec.slice_size; ++j) {
        double v = spec.background;
        for (const Ellipse& e : shapes[k]) {
          const double dx = (j + 0.5) - e.cx;
          const double dy = (i + 0.5) - e.cy;
          const double u = (std::cos(e.theta) * dx + std::sin(e.theta) * dy) / e.a;
          const double w = (-std::sin(e.theta) * dx + std::cos(e.theta) * dy) / e.b;
          if (u * u + w * w <= 1.0) v += e.intensity;
        }
        const float expected = float(std::min(1.0, std::max(0.0, v)));
        CHECK(vol.at(k, i, j) == doctest::Approx(expected).epsilon(1e-7));
        seen.insert(vol.at(k, i, j));
      }
    }
  }

  // histogram values must come from background + sums of up to
  // n_ellipses_max levels (repetition allowed), clamped to 1
  std::set<float> allowed;
  const auto& lv = spec.intensity_levels;
  std::set<double> sums = {0.0};
  for (int reps = 0; reps < spec.n_ellipses_max; ++reps) {
    std::set<double> next = sums;
    for (double s : sums)
      for (double l : lv) next.insert(s + l);
    sums = next;
  }
  for (double s : sums) allowed.insert(float(std::min(1.0, spec.background + s)));
  for (float x : seen) CHECK(allowed.count(x) == 1);
}

TEST_CASE("derive_lpet noiseless limit reproduces the input") {
  PhantomSpec spec = small_spec();
  const ImageVolume spet = gen_spet_volume(3, spec);
  DoseParams dose;
  dose.drf = 1.0;
  dose.counts_per_unit = 1e9;
  dose.blur_sigma = 0.0;
  const ImageVolume lpet = derive_lpet(spet, dose, 11);
  for (std::size_t i = 0; i < spet.data.size(); ++i) {
    CHECK(std::abs(lpet.data[i] - spet.data[i]) < 1e-3);
  }
}

TEST_CASE("derive_lpet of a zero volume is zero") {
  const ImageVolume zero = make_volume(2, 16, 16, 0.f);
  DoseParams dose;
  const ImageVolume lpet = derive_lpet(zero, dose, 5);
  for (float x : lpet.data) CHECK(x == 0.f);
}

TEST_CASE("derive_lpet is deterministic per seed") {
  const ImageVolume spet = gen_spet_volume(3, small_spec());
  DoseParams dose;
  const ImageVolume a = derive_lpet(spet, dose, 11);
  const ImageVolume b = derive_lpet(spet, dose, 11);
  CHECK(a.data == b.data);
}

TEST_CASE("derive_lpet is unbiased at a constant pixel (Monte Carlo)") {
  ImageVolume spet = make_volume(1, 2, 2, 0.5f);
  DoseParams dose;
  dose.drf = 100.0;
  dose.counts_per_unit = 1e4;
  dose.blur_sigma = 0.0;
  const int n = 1000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += derive_lpet(spet, dose, 1000 + i).at(0, 0, 0);
  }
  const double mean = acc / n;
  const double tol = 3.0 * std::sqrt(0.5 * dose.drf / dose.counts_per_unit / n);
  CHECK(std::abs(mean - 0.5) < tol);
}

TEST_CASE("per-pixel noise variance increases with drf") {
  ImageVolume spet = make_volume(1, 4, 4, 0.5f);
  double prev = -1.0;
  for (double drf : {10.0, 50.0, 200.0}) {
    DoseParams dose;
    dose.drf = drf;
    dose.counts_per_unit = 1e4;
    dose.blur_sigma = 0.0;
    double sum = 0.0, sum2 = 0.0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
      const double v = derive_lpet(spet, dose, 77 + i).at(0, 1, 1);
      sum += v;
      sum2 += v * v;
    }
    const double var = sum2 / n - (sum / n) * (sum / n);
    CHECK(var > prev);
    prev = var;
  }
}

TEST_CASE("build_splits cardinalities and disjointness") {
  SplitConfig cfg;
  cfg.unpaired_spet = 12;
  cfg.lpet_pretrain = 3;
  cfg.paired_train = 3;
  cfg.paired_eval = 2;
  const SplitManifest m = build_splits(cfg);
  CHECK(m.unpaired_spet.size() == 12);
  CHECK(m.lpet_pretrain.size() == 3);
  CHECK(m.paired_train.size() == 3);
  CHECK(m.paired_eval.size() == 2);
  for (const auto& e : m.paired_eval)
    for (const auto& t : m.paired_train) CHECK(e != t);
}

TEST_CASE("paper-scale split counts are accepted") {
  SplitConfig cfg;
  cfg.unpaired_spet = 120;
  cfg.lpet_pretrain = 30;
  cfg.paired_train = 30;
  cfg.paired_eval = 20;
  const SplitManifest m = build_splits(cfg);
  CHECK(m.unpaired_spet.size() == 120);
  CHECK(m.paired_eval.size() == 20);
}

TEST_CASE("zero eval count is a configuration error") {
  SplitConfig cfg;
  cfg.paired_eval = 0;
  CHECK_THROWS_AS(build_splits(cfg), ConfigError);
}

TEST_CASE("lpet_pretrain beyond the paired pool is rejected") {
  SplitConfig cfg;
  cfg.lpet_pretrain = 5;
  cfg.paired_train = 3;
  CHECK_THROWS_AS(build_splits(cfg), ConfigError);
}

TEST_CASE("manifest round-trips through its file format") {
  const SplitManifest m = build_splits(SplitConfig{});
  const auto path = (tmp_dir() / "manifest.tsv").string();
  write_manifest(path, m);
  const SplitManifest r = read_manifest(path);
  CHECK(r.unpaired_spet == m.unpaired_spet);
  CHECK(r.lpet_pretrain == m.lpet_pretrain);
  CHECK(r.paired_train == m.paired_train);
  CHECK(r.paired_eval == m.paired_eval);
}

TEST_CASE("pvol round-trip is bitwise identical") {
  const ImageVolume v = gen_spet_volume(9, small_spec());
  const auto path = (tmp_dir() / "vol.pvol").string();
  write_volume(path, v);
  const ImageVolume r = read_volume(path);
  CHECK(r.depth == v.depth);
  CHECK(r.height == v.height);
  CHECK(r.width == v.width);
  CHECK(r.data == v.data);

  // write(read(x)) produces byte-identical files
  const auto path2 = (tmp_dir() / "vol2.pvol").string();
  write_volume(path2, r);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("pvol rejects a wrong magic") {
  const auto path = (tmp_dir() / "bad_magic.pvol").string();
  std::ofstream os(path, std::ios::binary);
  os << "XVOL1\ndims=1 2 2 1\ndtype=f32le\n\n";
  for (int i = 0; i < 16; ++i) os.put(0);
  os.close();
  CHECK_THROWS_AS(read_volume(path), FormatError);
}

TEST_CASE("pvol truncation error names a byte offset") {
  const auto path = (tmp_dir() / "trunc.pvol").string();
  std::ofstream os(path, std::ios::binary);
  os << "PVOL1\ndims=2 4 4 1\ndtype=f32le\n\n";
  for (int i = 0; i < 16 * 4; ++i) os.put(0);  // need 2*4*4 floats, give 16
  os.close();
  try {
    read_volume(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }
}

TEST_CASE("pvol rejects non-finite payload values") {
  const auto path = (tmp_dir() / "nan.pvol").string();
  ImageVolume v = make_volume(1, 2, 2, 0.25f);
  write_volume(path, v);
  // poke a NaN into the payload
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(-16, std::ios::end);
  const unsigned char nan_bytes[4] = {0x00, 0x00, 0xc0, 0x7f};
  f.write(reinterpret_cast<const char*>(nan_bytes), 4);
  f.close();
  CHECK_THROWS_AS(read_volume(path), FormatError);
}

TEST_CASE("generate_dataset writes every split volume plus manifest") {
  const auto dir = (tmp_dir() / "ds").string();
  std::filesystem::create_directories(dir);
  SplitConfig split;
  split.unpaired_spet = 2;
  split.lpet_pretrain = 1;
  split.paired_train = 1;
  split.paired_eval = 1;
  PhantomSpec spec = small_spec();
  generate_dataset(dir, split, spec, DoseParams{}, 42);
  const SplitManifest m = read_manifest(dir + "/manifest.tsv");
  for (const auto& id : m.unpaired_spet) CHECK(std::filesystem::exists(spet_path(dir, id)));
  for (const auto& id : m.paired_train) {
    CHECK(std::filesystem::exists(spet_path(dir, id)));
    CHECK(std::filesystem::exists(lpet_path(dir, id)));
  }
  for (const auto& id : m.paired_eval) {
    CHECK(std::filesystem::exists(spet_path(dir, id)));
    CHECK(std::filesystem::exists(lpet_path(dir, id)));
  }
}

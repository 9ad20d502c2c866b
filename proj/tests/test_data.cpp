#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "wamd/data.hpp"
#include "wamd/dataset_io.hpp"
#include "wamd/pnm.hpp"
#include "wamd/rng.hpp"

using wamd::FaceSample;
using wamd::LandmarkSet;
using wamd::Raster;

namespace {

double max_abs_diff(const Raster<double>& a, const Raster<double>& b) {
  return (a - b).abs().maxCoeff();
}

FaceSample subject(std::uint64_t id, std::int64_t size = 32) {
  auto s = wamd::generate_subject(wamd::derive_seed(990, "subject", id), size);
  s.subject_ids = {id};
  return s;
}

}  // namespace

TEST_CASE("generate_subject is deterministic and in range") {
  auto a = wamd::generate_subject(1234, 32);
  auto b = wamd::generate_subject(1234, 32);
  CHECK(max_abs_diff(a.image, b.image) == 0.0);
  for (int i = 0; i < LandmarkSet::kCount; ++i) {
    CHECK(a.landmarks[i].x == b.landmarks[i].x);
    CHECK(a.landmarks[i].y == b.landmarks[i].y);
    CHECK(a.landmarks[i].x >= 0.0);
    CHECK(a.landmarks[i].x <= 31.0);
    CHECK(a.landmarks[i].y >= 0.0);
    CHECK(a.landmarks[i].y <= 31.0);
  }
  CHECK(a.image.minCoeff() >= 0.0);
  CHECK(a.image.maxCoeff() <= 1.0);
  CHECK(a.label == wamd::Label::bona_fide);

  CHECK_THROWS_AS(wamd::generate_subject(1, 30), std::invalid_argument);
}

TEST_CASE("1000 seeds give 1000 distinct landmark sets with valid meshes") {
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto s = wamd::generate_subject(wamd::derive_seed(7, "subject", seed), 16);
    CHECK(s.landmarks.min_triangle_area() > 0.5);
    std::string key;
    for (int i = 0; i < LandmarkSet::kCount; ++i) {
      key += std::to_string(s.landmarks[i].x) + ",";
      key += std::to_string(s.landmarks[i].y) + ";";
    }
    seen.insert(key);
  }
  CHECK(seen.size() == 1000);
}

TEST_CASE("morph endpoints reproduce the source images exactly") {
  auto a = subject(1);
  auto b = subject(2);
  auto m0 = wamd::morph_pair(a, b, 0.0);
  auto m1 = wamd::morph_pair(a, b, 1.0);
  CHECK(max_abs_diff(m0.image, a.image) == 0.0);
  CHECK(max_abs_diff(m1.image, b.image) == 0.0);
  CHECK(m0.label == wamd::Label::morph);
  REQUIRE(m0.subject_ids.size() == 2);
  CHECK(m0.subject_ids[0] != m0.subject_ids[1]);
}

TEST_CASE("morph is symmetric in its arguments") {
  auto a = subject(3);
  auto b = subject(4);
  for (double alpha : {0.5, 0.37}) {
    auto ab = wamd::morph_pair(a, b, alpha);
    auto ba = wamd::morph_pair(b, a, 1.0 - alpha);
    CHECK(max_abs_diff(ab.image, ba.image) < 1e-10);
  }
}

TEST_CASE("morph preserves the source value range") {
  auto a = subject(5);
  auto b = subject(6);
  auto m = wamd::morph_pair(a, b, 0.5);
  const double lo = std::min(a.image.minCoeff(), b.image.minCoeff());
  const double hi = std::max(a.image.maxCoeff(), b.image.maxCoeff());
  CHECK(m.image.minCoeff() >= lo - 1e-12);
  CHECK(m.image.maxCoeff() <= hi + 1e-12);
}

TEST_CASE("morph rejects bad inputs") {
  auto a = subject(7);
  auto b = subject(8);
  CHECK_THROWS_AS(wamd::morph_pair(a, a, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(wamd::morph_pair(a, b, 1.5), std::invalid_argument);
  auto m = wamd::morph_pair(a, b, 0.5);
  CHECK_THROWS_AS(wamd::morph_pair(m, b, 0.5), std::invalid_argument);
  auto small = wamd::generate_subject(9, 16);
  CHECK_THROWS_AS(wamd::morph_pair(a, small, 0.5), std::invalid_argument);
}

TEST_CASE("warp matches an independently solved affine + bilinear sample") {
  auto a = subject(10);
  auto b = subject(11);
  const double alpha = 0.5;
  auto m = wamd::morph_pair(a, b, alpha);

  // independently recompute one strictly interior pixel of one triangle
  LandmarkSet target;
  for (int i = 0; i < LandmarkSet::kCount; ++i) {
    target[i].x = (1 - alpha) * a.landmarks[i].x + alpha * b.landmarks[i].x;
    target[i].y = (1 - alpha) * a.landmarks[i].y + alpha * b.landmarks[i].y;
  }
  const auto tri = LandmarkSet::triangulation()[11];  // eyes-nose triangle
  const double cx =
      (target[tri[0]].x + target[tri[1]].x + target[tri[2]].x) / 3.0;
  const double cy =
      (target[tri[0]].y + target[tri[1]].y + target[tri[2]].y) / 3.0;
  const auto px = static_cast<Eigen::Index>(std::lround(cx));
  const auto py = static_cast<Eigen::Index>(std::lround(cy));

  auto solve_sample = [&](const FaceSample& src) {
    // affine dst->src via explicit 2x2 inverse on edge vectors
    const auto& d0 = target[tri[0]];
    const auto& d1 = target[tri[1]];
    const auto& d2 = target[tri[2]];
    const auto& s0 = src.landmarks[tri[0]];
    const auto& s1 = src.landmarks[tri[1]];
    const auto& s2 = src.landmarks[tri[2]];
    const double ux = d1.x - d0.x, uy = d1.y - d0.y;
    const double vx = d2.x - d0.x, vy = d2.y - d0.y;
    const double det = ux * vy - vx * uy;
    const double wx = px - d0.x, wy = py - d0.y;
    const double l1 = (wx * vy - vx * wy) / det;   // barycentric on edges
    const double l2 = (ux * wy - wx * uy) / det;
    const double sx = s0.x + l1 * (s1.x - s0.x) + l2 * (s2.x - s0.x);
    const double sy = s0.y + l1 * (s1.y - s0.y) + l2 * (s2.y - s0.y);
    const auto x0 = static_cast<Eigen::Index>(std::floor(sx));
    const auto y0 = static_cast<Eigen::Index>(std::floor(sy));
    const double fx = sx - x0, fy = sy - y0;
    const auto& im = src.image;
    return (1 - fy) * ((1 - fx) * im(y0, x0) + fx * im(y0, x0 + 1)) +
           fy * ((1 - fx) * im(y0 + 1, x0) + fx * im(y0 + 1, x0 + 1));
  };

  const double want = (1 - alpha) * solve_sample(a) + alpha * solve_sample(b);
  CHECK(m.image(py, px) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("split arithmetic for 100 subjects is 43/7/50") {
  wamd::DataConfig cfg;
  cfg.n_subjects = 100;
  cfg.image_size = 16;
  cfg.captures_per_subject = 2;
  cfg.seed = 7;
  auto ds = wamd::build_dataset(cfg);
  CHECK(ds.split.train.size() == 43);
  CHECK(ds.split.val.size() == 7);
  CHECK(ds.split.test.size() == 50);

  // per capture: one bona fide and one ring morph per subject
  std::size_t bf = 0, mo = 0;
  for (const auto& s : ds.samples)
    (s.face.label == wamd::Label::bona_fide ? bf : mo) += 1;
  CHECK(bf == 200);
  CHECK(mo == 200);
}

TEST_CASE("partitions stay disjoint and morphs never cross them: 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    wamd::DataConfig cfg;
    cfg.n_subjects = 16;
    cfg.image_size = 16;
    cfg.captures_per_subject = 1;
    cfg.seed = seed;
    auto ds = wamd::build_dataset(cfg);

    std::set<std::uint64_t> train(ds.split.train.begin(),
                                  ds.split.train.end());
    std::set<std::uint64_t> val(ds.split.val.begin(), ds.split.val.end());
    std::set<std::uint64_t> test(ds.split.test.begin(), ds.split.test.end());
    CHECK(train.size() + val.size() + test.size() == 16);
    for (auto id : val) CHECK(train.count(id) == 0);
    for (auto id : test) {
      CHECK(train.count(id) == 0);
      CHECK(val.count(id) == 0);
    }

    for (const auto& s : ds.samples) {
      const auto* members = s.partition == wamd::Partition::train ? &train
                            : s.partition == wamd::Partition::val ? &val
                                                                  : &test;
      for (auto id : s.face.subject_ids) CHECK(members->count(id) == 1);
      if (s.face.label == wamd::Label::morph) {
        REQUIRE(s.face.subject_ids.size() == 2);
        CHECK(s.face.subject_ids[0] != s.face.subject_ids[1]);
      }
    }
  }
}

TEST_CASE("build_dataset rejects too few subjects") {
  wamd::DataConfig cfg;
  cfg.n_subjects = 7;
  CHECK_THROWS_AS(wamd::build_dataset(cfg), std::invalid_argument);
}

TEST_CASE("pgm read maps 8-bit values onto [0,1]") {
  const std::vector<std::uint8_t> bytes{'P', '5', ' ', '2', ' ', '2', ' ',
                                        '2', '5', '5', '\n', 0, 128, 255, 64};
  auto img = wamd::decode_pnm(bytes);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.maxval == 255);
  REQUIRE(img.samples.size() == 4);

  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "wamd_pnm_fixture.pgm";
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  auto channels = wamd::read_raster(path);
  REQUIRE(channels.size() == 1);
  const auto& r = channels[0];
  CHECK(r(0, 0) == doctest::Approx(0.0));
  CHECK(r(0, 1) == doctest::Approx(128.0 / 255).epsilon(1e-9));
  CHECK(r(1, 0) == doctest::Approx(1.0));
  CHECK(r(1, 1) == doctest::Approx(64.0 / 255).epsilon(1e-9));
  fs::remove(path);
}

TEST_CASE("8-bit raster round trip is lossless") {
  wamd::Rng rng(77);
  Raster<double> img(8, 8);
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < 8; ++j)
      img(i, j) = static_cast<double>(rng.bounded(256)) / 255.0;

  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "wamd_roundtrip.pgm";
  wamd::write_raster(img, path);
  auto back = wamd::read_raster(path)[0];
  CHECK(max_abs_diff(img, back) == 0.0);
  fs::remove(path);
}

TEST_CASE("16-bit P6 payload decodes big-endian sample pairs") {
  // 1x1 RGB, maxval 65535: samples 0x0102, 0x0304, 0xFFFE
  const std::vector<std::uint8_t> bytes{'P',  '6',  ' ',  '1',  ' ',  '1',
                                        ' ',  '6',  '5',  '5',  '3',  '5',
                                        '\n', 0x01, 0x02, 0x03, 0x04, 0xFF,
                                        0xFE};
  auto img = wamd::decode_pnm(bytes);
  CHECK(img.channels == 3);
  REQUIRE(img.samples.size() == 3);
  CHECK(img.samples[0] == 0x0102);
  CHECK(img.samples[1] == 0x0304);
  CHECK(img.samples[2] == 0xFFFE);
}

TEST_CASE("malformed and truncated rasters report byte offsets") {
  const std::vector<std::uint8_t> bad_magic{'P', '4', '\n'};
  CHECK_THROWS_WITH_AS(wamd::decode_pnm(bad_magic),
                       doctest::Contains("offset"), std::runtime_error);

  const std::vector<std::uint8_t> truncated{'P', '5', ' ', '2', ' ', '2',
                                            ' ', '2', '5', '5', '\n', 0, 1};
  CHECK_THROWS_WITH_AS(wamd::decode_pnm(truncated),
                       doctest::Contains("offset"), std::runtime_error);
}

TEST_CASE("dataset writes a loadable tree with a consistent manifest") {
  namespace fs = std::filesystem;
  const auto root = fs::temp_directory_path() / "wamd_dataset_test";
  fs::remove_all(root);

  wamd::DataConfig cfg;
  cfg.n_subjects = 10;
  cfg.image_size = 16;
  cfg.captures_per_subject = 2;
  cfg.seed = 3;
  auto ds = wamd::build_dataset(cfg);
  wamd::write_dataset(ds, root);

  auto rows = wamd::read_manifest(root);
  CHECK(rows.size() == ds.samples.size());
  auto loaded = wamd::load_dataset(root);
  REQUIRE(loaded.size() == ds.samples.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == ds.samples[i].id);
    // 8-bit quantization bound
    CHECK(max_abs_diff(loaded[i].image, ds.samples[i].face.image) <=
          0.5 / 255 + 1e-9);
  }
  fs::remove_all(root);
}

#pragma once

// Synthetic procedural faces and landmark-based morphs. A fixed 13-point
// landmark schema with a stored 16-triangle mesh drives both the face
// renderer and the piecewise-affine morph warp; pixels outside every
// triangle pass through unwarped before alpha blending.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wamd/common.hpp"
#include "wamd/rng.hpp"
#include "wamd/wavelet.hpp"  // Raster

namespace wamd {

struct Landmark {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

struct LandmarkSet {
  static constexpr int kCount = 13;

  enum Index {
    kOvalLeft = 0,
    kOvalRight = 1,
    kOvalTop = 2,
    kChin = 3,
    kEyeLeft = 4,
    kEyeRight = 5,
    kBrowLeft = 6,
    kBrowRight = 7,
    kNose = 8,
    kMouthLeft = 9,
    kMouthRight = 10,
    kHairLeft = 11,
    kHairRight = 12,
  };

  std::array<Landmark, kCount> points;

  const Landmark& operator[](int i) const { return points[i]; }
  Landmark& operator[](int i) { return points[i]; }

  /// Fixed mesh over the schema; every face and morph shares it.
  static const std::array<std::array<int, 3>, 16>& triangulation() {
    static const std::array<std::array<int, 3>, 16> tris{{
        {kOvalTop, kHairLeft, kHairRight},
        {kHairLeft, kBrowLeft, kBrowRight},
        {kHairLeft, kBrowRight, kHairRight},
        {kHairLeft, kOvalLeft, kBrowLeft},
        {kOvalLeft, kEyeLeft, kBrowLeft},
        {kBrowLeft, kEyeLeft, kBrowRight},
        {kEyeLeft, kEyeRight, kBrowRight},
        {kBrowRight, kEyeRight, kOvalRight},
        {kHairRight, kBrowRight, kOvalRight},
        {kOvalLeft, kMouthLeft, kEyeLeft},
        {kEyeLeft, kMouthLeft, kNose},
        {kEyeLeft, kNose, kEyeRight},
        {kEyeRight, kNose, kMouthRight},
        {kEyeRight, kMouthRight, kOvalRight},
        {kMouthLeft, kNose, kMouthRight},
        {kMouthLeft, kChin, kMouthRight},
    }};
    return tris;
  }

  double triangle_signed_area(const std::array<int, 3>& t) const {
    const auto& p0 = points[t[0]];
    const auto& p1 = points[t[1]];
    const auto& p2 = points[t[2]];
    return 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) -
                  (p2.x - p0.x) * (p1.y - p0.y));
  }

  double triangle_area(const std::array<int, 3>& t) const {
    return std::abs(triangle_signed_area(t));
  }

  double min_triangle_area() const {
    double m = std::numeric_limits<double>::max();
    for (const auto& t : triangulation()) m = std::min(m, triangle_area(t));
    return m;
  }
};

enum class Label { bona_fide, morph };

inline std::string to_string(Label label) {
  return label == Label::bona_fide ? "bona_fide" : "morph";
}

struct FaceSample {
  Raster<double> image;  // gray, values in [0,1]
  Label label = Label::bona_fide;
  std::vector<std::uint64_t> subject_ids;  // 1 for bona fide, 2 for morph
  LandmarkSet landmarks;
};

/// Subject-id partitions; val is carved from the train half at 15%.
struct SplitSpec {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;
  std::uint64_t seed = 0;
};

enum class Partition { train, val, test };

inline std::string to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    default: return "test";
  }
}

struct DatasetSample {
  std::string id;
  Partition partition = Partition::train;
  double alpha = 0.0;  // blend factor, morphs only
  FaceSample face;
};

struct Dataset {
  std::vector<DatasetSample> samples;
  SplitSpec split;
  std::int64_t image_size = 0;
};

namespace detail {

inline const std::array<Landmark, LandmarkSet::kCount>& landmark_template() {
  static const std::array<Landmark, LandmarkSet::kCount> tmpl{{
      {0.14, 0.52},  // oval left
      {0.86, 0.52},  // oval right
      {0.50, 0.07},  // oval top
      {0.50, 0.93},  // chin
      {0.34, 0.44},  // eye left
      {0.66, 0.44},  // eye right
      {0.32, 0.30},  // brow left
      {0.68, 0.30},  // brow right
      {0.50, 0.60},  // nose
      {0.38, 0.75},  // mouth left
      {0.62, 0.75},  // mouth right
      {0.28, 0.16},  // hair left
      {0.72, 0.16},  // hair right
  }};
  return tmpl;
}

inline double point_segment_distance(double x, double y, const Landmark& a,
                                     const Landmark& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = a.x + t * dx, py = a.y + t * dy;
  return std::hypot(x - px, y - py);
}

/// Affine map taking the dst triangle onto the src triangle.
struct AffineMap {
  double a = 1, b = 0, c = 0;  // x' = a x + b y + c
  double d = 0, e = 1, f = 0;  // y' = d x + e y + f
  bool identity = false;
};

inline AffineMap affine_from(const Landmark& d0, const Landmark& d1,
                             const Landmark& d2, const Landmark& s0,
                             const Landmark& s1, const Landmark& s2) {
  AffineMap m;
  if (d0.x == s0.x && d0.y == s0.y && d1.x == s1.x && d1.y == s1.y &&
      d2.x == s2.x && d2.y == s2.y) {
    m.identity = true;
    return m;
  }
  const double ux = d1.x - d0.x, uy = d1.y - d0.y;
  const double vx = d2.x - d0.x, vy = d2.y - d0.y;
  const double det = ux * vy - vx * uy;
  const double px = s1.x - s0.x, py = s1.y - s0.y;
  const double qx = s2.x - s0.x, qy = s2.y - s0.y;
  // columns of [p q] * inv([u v])
  m.a = (px * vy - qx * uy) / det;
  m.b = (qx * ux - px * vx) / det;
  m.d = (py * vy - qy * uy) / det;
  m.e = (qy * ux - py * vx) / det;
  m.c = s0.x - m.a * d0.x - m.b * d0.y;
  m.f = s0.y - m.d * d0.x - m.e * d0.y;
  return m;
}

inline bool point_in_triangle(double x, double y, const Landmark& p0,
                              const Landmark& p1, const Landmark& p2) {
  const double d = (p1.y - p2.y) * (p0.x - p2.x) +
                   (p2.x - p1.x) * (p0.y - p2.y);
  if (d == 0.0) return false;
  const double l0 =
      ((p1.y - p2.y) * (x - p2.x) + (p2.x - p1.x) * (y - p2.y)) / d;
  const double l1 =
      ((p2.y - p0.y) * (x - p2.x) + (p0.x - p2.x) * (y - p2.y)) / d;
  const double l2 = 1.0 - l0 - l1;
  const double tol = -1e-9;
  return l0 >= tol && l1 >= tol && l2 >= tol;
}

inline double bilinear(const Raster<double>& img, double x, double y) {
  const double w = static_cast<double>(img.cols());
  const double h = static_cast<double>(img.rows());
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const auto x1 = std::min<Eigen::Index>(x0 + 1, img.cols() - 1);
  const auto y1 = std::min<Eigen::Index>(y0 + 1, img.rows() - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  return (1.0 - fy) * ((1.0 - fx) * img(y0, x0) + fx * img(y0, x1)) +
         fy * ((1.0 - fx) * img(y1, x0) + fx * img(y1, x1));
}

/// Piecewise-affine warp of src_img (geometry src) onto the dst geometry.
/// Pixels outside the mesh pass through.
inline Raster<double> warp_to(const Raster<double>& src_img,
                              const LandmarkSet& src, const LandmarkSet& dst) {
  const auto& tris = LandmarkSet::triangulation();
  std::array<AffineMap, 16> maps;
  std::array<std::array<double, 4>, 16> boxes;  // minx,maxx,miny,maxy
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const auto& tr = tris[t];
    maps[t] = affine_from(dst[tr[0]], dst[tr[1]], dst[tr[2]], src[tr[0]],
                          src[tr[1]], src[tr[2]]);
    boxes[t] = {std::min({dst[tr[0]].x, dst[tr[1]].x, dst[tr[2]].x}),
                std::max({dst[tr[0]].x, dst[tr[1]].x, dst[tr[2]].x}),
                std::min({dst[tr[0]].y, dst[tr[1]].y, dst[tr[2]].y}),
                std::max({dst[tr[0]].y, dst[tr[1]].y, dst[tr[2]].y})};
  }

  Raster<double> out(src_img.rows(), src_img.cols());
  for (Eigen::Index y = 0; y < out.rows(); ++y)
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      const auto fx = static_cast<double>(x);
      const auto fy = static_cast<double>(y);
      double value = src_img(y, x);  // passthrough outside the mesh
      for (std::size_t t = 0; t < tris.size(); ++t) {
        if (fx < boxes[t][0] || fx > boxes[t][1] || fy < boxes[t][2] ||
            fy > boxes[t][3])
          continue;
        const auto& tr = tris[t];
        if (!point_in_triangle(fx, fy, dst[tr[0]], dst[tr[1]], dst[tr[2]]))
          continue;
        if (maps[t].identity) {
          value = src_img(y, x);
        } else {
          const double sx = maps[t].a * fx + maps[t].b * fy + maps[t].c;
          const double sy = maps[t].d * fx + maps[t].e * fy + maps[t].f;
          value = bilinear(src_img, sx, sy);
        }
        break;  // first containing triangle wins
      }
      out(y, x) = value;
    }
  return out;
}

}  // namespace detail

/// Deterministic procedural bona fide face. Landmarks are the template
/// jittered by up to +-8% of the image size; jitters whose mesh collapses
/// below the area floor are redrawn, so every returned set triangulates
/// cleanly. The capture index re-rolls only the sensor noise: captures of
/// one subject share landmarks and appearance.
inline FaceSample generate_subject(std::uint64_t subject_seed,
                                   std::int64_t size, int capture = 0) {
  if (size < 8 || size % 8 != 0)
    reject_input("face size must be a positive multiple of 8, got ", size);
  if (capture < 0) reject_input("capture index must be non-negative");

  Rng rng(subject_seed);
  Rng noise_rng(derive_seed(subject_seed, "capture",
                            static_cast<std::uint64_t>(capture)));
  const double w1 = static_cast<double>(size - 1);
  const double jitter = 0.08 * static_cast<double>(size);
  const double min_area = 0.008 * static_cast<double>(size * size);

  // Accepted meshes must keep every triangle at its template orientation
  // with a healthy area margin; blended morph targets then stay clear of
  // the degenerate-geometry floor.
  LandmarkSet tmpl;
  tmpl.points = detail::landmark_template();

  LandmarkSet lm;
  bool ok = false;
  for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
    for (int i = 0; i < LandmarkSet::kCount; ++i) {
      const auto& t = detail::landmark_template()[i];
      lm[i].x = std::clamp(t.x * w1 + rng.uniform(-jitter, jitter), 1.0,
                           w1 - 1.0);
      lm[i].y = std::clamp(t.y * w1 + rng.uniform(-jitter, jitter), 1.0,
                           w1 - 1.0);
    }
    ok = true;
    for (const auto& tri : LandmarkSet::triangulation()) {
      const double orient = tmpl.triangle_signed_area(tri) < 0 ? -1.0 : 1.0;
      if (orient * lm.triangle_signed_area(tri) < min_area) {
        ok = false;
        break;
      }
    }
  }
  if (!ok) reject_state("landmark jitter failed to produce a valid mesh");

  const double fsize = static_cast<double>(size);
  const double cx = (lm[LandmarkSet::kOvalLeft].x + lm[LandmarkSet::kOvalRight].x) / 2;
  const double cy = (lm[LandmarkSet::kOvalTop].y + lm[LandmarkSet::kChin].y) / 2;
  const double rx = (lm[LandmarkSet::kOvalRight].x - lm[LandmarkSet::kOvalLeft].x) / 2;
  const double ry = (lm[LandmarkSet::kChin].y - lm[LandmarkSet::kOvalTop].y) / 2;
  const auto& hair_l = lm[LandmarkSet::kHairLeft];
  const auto& hair_r = lm[LandmarkSet::kHairRight];

  // Per-subject appearance: primitive sizes and shades vary between
  // subjects, so a morph blends mismatched boundaries into soft halos the
  // way real landmark morphs do.
  const double eye_rx = rng.uniform(0.042, 0.068) * fsize;
  const double eye_ry = rng.uniform(0.026, 0.044) * fsize;
  const double brow_hw = rng.uniform(0.042, 0.068) * fsize;
  const double brow_hh = rng.uniform(0.010, 0.022) * fsize;
  const double nose_hw = rng.uniform(0.010, 0.018) * fsize;
  const double nose_len = rng.uniform(0.07, 0.13) * fsize;
  const double mouth_r = rng.uniform(0.014, 0.030) * fsize;
  const double skin_base = rng.uniform(0.70, 0.78);
  const double hair_shade = rng.uniform(0.16, 0.28);
  const double eye_shade = rng.uniform(0.08, 0.16);
  const double brow_shade = rng.uniform(0.22, 0.34);
  const double nose_shade = rng.uniform(0.40, 0.50);
  const double mouth_shade = rng.uniform(0.12, 0.20);

  // Oriented skin texture, one coherent direction per subject. Blending two
  // subjects superimposes two directions, the texture signature a morph
  // cannot avoid.
  const double tex_theta = rng.uniform(0.0, std::numbers::pi);
  const double tex_wavelen = rng.uniform(0.11, 0.20) * fsize;
  const double tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double tex_amp = rng.uniform(0.035, 0.055);
  const double tex_cos = std::cos(tex_theta), tex_sin = std::sin(tex_theta);

  // Skin spots placed independently of the landmark mesh. Warping cannot
  // align them, so a morph carries both subjects' spots at half contrast.
  struct Spot {
    double x, y, radius, depth;
  };
  std::vector<Spot> spots(8 + rng.bounded(4));
  for (auto& spot : spots) {
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rad = 0.85 * std::sqrt(rng.uniform());
    spot.x = cx + rx * rad * std::cos(ang);
    spot.y = cy + ry * rad * std::sin(ang);
    spot.radius = rng.uniform(0.024, 0.040) * fsize;
    spot.depth = rng.uniform(0.28, 0.33);
  }

  Raster<double> img(size, size);
  for (Eigen::Index y = 0; y < size; ++y)
    for (Eigen::Index x = 0; x < size; ++x) {
      const auto fx = static_cast<double>(x);
      const auto fy = static_cast<double>(y);
      double v = 0.86 - 0.10 * (fy / w1) + 0.04 * (fx / w1);

      const double u = (fx - cx) / rx;
      const double q = (fy - cy) / ry;
      const double r2 = u * u + q * q;
      if (r2 <= 1.0) {
        v = skin_base - 0.10 * r2;  // skin shading
        const double t = (fx - hair_l.x) / (hair_r.x - hair_l.x);
        const double hair_y = hair_l.y + t * (hair_r.y - hair_l.y);
        if (fy < hair_y) v = hair_shade;  // hair cap
        v += tex_amp * std::cos(2.0 * std::numbers::pi *
                                    (fx * tex_cos + fy * tex_sin) /
                                    tex_wavelen +
                                tex_phase);
        for (const auto& spot : spots) {
          const double d2 = ((fx - spot.x) * (fx - spot.x) +
                             (fy - spot.y) * (fy - spot.y)) /
                            (spot.radius * spot.radius);
          if (d2 <= 1.0) v -= spot.depth * (1.0 - d2);
        }
      }

      for (int b : {LandmarkSet::kBrowLeft, LandmarkSet::kBrowRight})
        if (std::abs(fx - lm[b].x) <= brow_hw &&
            std::abs(fy - lm[b].y) <= brow_hh)
          v = brow_shade;
      for (int e : {LandmarkSet::kEyeLeft, LandmarkSet::kEyeRight}) {
        const double du = (fx - lm[e].x) / eye_rx;
        const double dv = (fy - lm[e].y) / eye_ry;
        if (du * du + dv * dv <= 1.0) v = eye_shade;
      }
      const auto& nose = lm[LandmarkSet::kNose];
      if (std::abs(fx - nose.x) <= nose_hw && fy <= nose.y &&
          fy >= nose.y - nose_len)
        v = nose_shade;
      if (detail::point_segment_distance(fx, fy, lm[LandmarkSet::kMouthLeft],
                                         lm[LandmarkSet::kMouthRight]) <=
          mouth_r)
        v = mouth_shade;

      v += 0.02 * noise_rng.normal();  // sensor noise, per capture
      img(y, x) = std::clamp(v, 0.0, 1.0);
    }

  FaceSample sample;
  sample.image = std::move(img);
  sample.label = Label::bona_fide;
  sample.subject_ids = {subject_seed};
  sample.landmarks = lm;
  return sample;
}

/// Landmark-average morph: both faces are warped onto the blended geometry,
/// then alpha-blended. alpha=0 reproduces a exactly, alpha=1 reproduces b.
inline FaceSample morph_pair(const FaceSample& a, const FaceSample& b,
                             double alpha) {
  if (a.image.rows() != b.image.rows() || a.image.cols() != b.image.cols())
    reject_input("morph_pair requires equal image sizes");
  if (a.label != Label::bona_fide || b.label != Label::bona_fide)
    reject_input("morph_pair inputs must both be bona fide");
  if (a.subject_ids == b.subject_ids)
    reject_input("morph_pair requires two distinct subjects");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    reject_input("morph_pair alpha must lie in [0,1], got ", alpha);

  LandmarkSet target;
  for (int i = 0; i < LandmarkSet::kCount; ++i) {
    target[i].x = (1.0 - alpha) * a.landmarks[i].x + alpha * b.landmarks[i].x;
    target[i].y = (1.0 - alpha) * a.landmarks[i].y + alpha * b.landmarks[i].y;
  }
  for (const auto& t : LandmarkSet::triangulation())
    if (target.triangle_area(t) < 0.5)
      reject_input("morph target geometry degenerate: triangle area below "
                   "0.5 px^2");

  const auto warped_a = detail::warp_to(a.image, a.landmarks, target);
  const auto warped_b = detail::warp_to(b.image, b.landmarks, target);

  FaceSample out;
  out.image = (1.0 - alpha) * warped_a + alpha * warped_b;
  out.label = Label::morph;
  out.subject_ids = {a.subject_ids[0], b.subject_ids[0]};
  out.landmarks = target;
  return out;
}

struct DataConfig {
  std::int64_t n_subjects = 100;
  std::int64_t image_size = 32;
  double alpha = 0.5;
  int morph_rounds = 1;       // ring pairings per partition and capture
  int captures_per_subject = 4;
  std::uint64_t seed = 0;
};

/// Subject-disjoint dataset: 50/50 train/test by seeded shuffle, 15% of the
/// train half moved to val (floor, at least one subject), morphs only within
/// a partition.
inline Dataset build_dataset(const DataConfig& config) {
  if (config.n_subjects < 8)
    reject_input("build_dataset requires at least 8 subjects, got ",
                 config.n_subjects);

  std::vector<std::uint64_t> ids(static_cast<std::size_t>(config.n_subjects));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Rng split_rng(derive_seed(config.seed, "split"));
  shuffle(ids, split_rng);

  const std::size_t train_half = ids.size() / 2;
  std::size_t val_count =
      static_cast<std::size_t>(0.15 * static_cast<double>(train_half));
  if (val_count == 0) val_count = 1;

  Dataset ds;
  ds.image_size = config.image_size;
  ds.split.seed = config.seed;
  ds.split.val.assign(ids.begin(), ids.begin() + val_count);
  ds.split.train.assign(ids.begin() + val_count, ids.begin() + train_half);
  ds.split.test.assign(ids.begin() + train_half, ids.end());

  auto subject_tag = [](std::uint64_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%04llu",
                  static_cast<unsigned long long>(id));
    return std::string(buf);
  };

  const std::vector<std::pair<Partition, const std::vector<std::uint64_t>*>>
      partitions{{Partition::train, &ds.split.train},
                 {Partition::val, &ds.split.val},
                 {Partition::test, &ds.split.test}};

  if (config.captures_per_subject < 1)
    reject_input("captures_per_subject must be positive");
  auto capture_tag = [](int c) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "_c%02d", c);
    return std::string(buf);
  };

  for (const auto& [part, members] : partitions) {
    const std::size_t k = members->size();
    const int captures = config.captures_per_subject;
    std::vector<std::vector<FaceSample>> faces(
        static_cast<std::size_t>(captures));
    for (int c = 0; c < captures; ++c) {
      faces[c].reserve(k);
      for (std::uint64_t id : *members) {
        auto face = generate_subject(derive_seed(config.seed, "subject", id),
                                     config.image_size, c);
        face.subject_ids = {id};
        DatasetSample sample;
        sample.id = "bf_" + subject_tag(id) + capture_tag(c);
        sample.partition = part;
        sample.face = face;
        ds.samples.push_back(sample);
        faces[c].push_back(std::move(face));
      }
    }
    // ring pairings; offsets rotate with the capture so morph pairs vary
    std::set<std::string> emitted;
    for (int c = 0; c < captures; ++c)
      for (int round = 1; round <= config.morph_rounds; ++round) {
        if (k < 2) break;
        const std::size_t offset =
            (static_cast<std::size_t>(c) * config.morph_rounds + round - 1) %
                (k - 1) +
            1;
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = (i + offset) % k;
          DatasetSample sample;
          sample.id = "mo_" + subject_tag((*members)[i]) + "_" +
                      subject_tag((*members)[j]) + capture_tag(c);
          if (!emitted.insert(sample.id).second) continue;
          sample.partition = part;
          sample.alpha = config.alpha;
          sample.face = morph_pair(faces[c][i], faces[c][j], config.alpha);
          ds.samples.push_back(std::move(sample));
        }
      }
  }
  return ds;
}

}  // namespace wamd

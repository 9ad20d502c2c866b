#pragma once

// Soft attention over a convolutional feature map: 1x1 projection to the
// common width, inner-product compatibility against the global feature,
// softmax normalization, and the attention-weighted descriptor. The whole
// chain records on the gradient tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wamd/common.hpp"
#include "wamd/tensor.hpp"
#include "wamd/wavelet.hpp"  // Raster

namespace wamd {

enum class Tap { L1, L2, L3 };

inline std::string to_string(Tap tap) {
  switch (tap) {
    case Tap::L1: return "L1";
    case Tap::L2: return "L2";
    default: return "L3";
  }
}

inline Tap tap_from_string(const std::string& s) {
  if (s == "L1") return Tap::L1;
  if (s == "L2") return Tap::L2;
  if (s == "L3") return Tap::L3;
  reject_input("unknown tap '", s, "' (expected L1, L2, or L3)");
}

/// Per-location feature vectors of one tap layer: [n, D] with n = h*w.
template <typename Scalar>
struct LocalFeatureMap {
  Tensor<Scalar> features;
  std::int64_t h = 0;
  std::int64_t w = 0;
  Tap layer = Tap::L3;
};

/// Softmax-normalized spatial weights: non-negative, summing to one.
template <typename Scalar>
struct AttentionMap {
  Tensor<Scalar> weights;  // [n]
  std::int64_t h = 0;
  std::int64_t w = 0;
  Tap layer = Tap::L3;
};

template <typename Scalar>
struct GlobalFeature {
  Tensor<Scalar> vec;  // [D]
};

template <typename Scalar>
void check_simplex(const AttentionMap<Scalar>& map, double tol = 1e-6) {
  double sum = 0.0;
  for (Scalar v : map.weights.values()) {
    if (!(v >= Scalar(0)))
      reject_state("attention map has a negative weight");
    sum += static_cast<double>(v);
  }
  if (std::abs(sum - 1.0) > tol)
    reject_state("attention map weights sum to ", sum, " instead of 1");
}

/// 1x1 projection of a [C,h,w] feature map to the common width D.
template <typename Scalar>
LocalFeatureMap<Scalar> project(const Tensor<Scalar>& raw,
                                const Tensor<Scalar>& proj_kernel, Tap layer) {
  if (raw.rank() != 3)
    reject_input("project expects a [C,h,w] feature map, got ",
                 shape_string(raw.shape()));
  const Shape& k = proj_kernel.shape();
  if (k.size() != 4 || k[2] != 1 || k[3] != 1)
    reject_input("projection kernel must be [D,C,1,1], got ", shape_string(k));
  if (k[1] != raw.shape()[0])
    reject_input("projection kernel channels ", k[1],
                 " do not match feature map channels ", raw.shape()[0]);

  const std::int64_t h = raw.shape()[1], w = raw.shape()[2];
  auto batched = reshape(raw, {1, raw.shape()[0], h, w});
  auto projected = conv2d(batched, proj_kernel,
                          Tensor<Scalar>::zeros({k[0]}), 1, 0);
  LocalFeatureMap<Scalar> out;
  out.features = location_matrix(select0(projected, 0));
  out.h = h;
  out.w = w;
  out.layer = layer;
  return out;
}

/// Compatibility scores c_i = <l_i, g>.
template <typename Scalar>
Tensor<Scalar> compatibility(const LocalFeatureMap<Scalar>& local,
                             const GlobalFeature<Scalar>& global_feature) {
  const std::int64_t n = local.features.shape()[0];
  const std::int64_t d = local.features.shape()[1];
  if (global_feature.vec.rank() != 1 || global_feature.vec.shape()[0] != d)
    reject_input("compatibility width mismatch: local D=", d, ", global ",
                 shape_string(global_feature.vec.shape()));

  std::vector<Scalar> scores(static_cast<std::size_t>(n), Scalar(0));
  auto lv = local.features.values();
  auto gv = global_feature.vec.values();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j)
      scores[i] += lv[i * d + j] * gv[j];

  return detail::make_op<Scalar>(
      {n}, std::move(scores), {local.features, global_feature.vec},
      [n, d](detail::TensorNode<Scalar>& self) {
        const auto& lv = self.parents[0]->values;
        const auto& gv = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
          auto& dl = self.parents[0]->grad;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j)
              dl[i * d + j] += self.grad[i] * gv[j];
        }
        if (detail::wants_grad(self, 1)) {
          auto& dg = self.parents[1]->grad;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j)
              dg[j] += self.grad[i] * lv[i * d + j];
        }
      });
}

/// Softmax normalization of compatibility scores into an AttentionMap.
template <typename Scalar>
AttentionMap<Scalar> normalize(const Tensor<Scalar>& scores, std::int64_t h,
                               std::int64_t w, Tap layer) {
  if (scores.rank() != 1 || scores.shape()[0] != h * w)
    reject_input("normalize expects [", h * w, "] scores, got ",
                 shape_string(scores.shape()));
  AttentionMap<Scalar> map;
  map.weights = softmax(scores);
  map.h = h;
  map.w = w;
  map.layer = layer;
  check_simplex(map);
  return map;
}

/// Attention-weighted descriptor g_a = sum_i a_i l_i.
template <typename Scalar>
Tensor<Scalar> attend(const LocalFeatureMap<Scalar>& local,
                      const AttentionMap<Scalar>& map) {
  const std::int64_t n = local.features.shape()[0];
  const std::int64_t d = local.features.shape()[1];
  if (map.weights.rank() != 1 || map.weights.shape()[0] != n)
    reject_input("attend length mismatch: ", n, " locations vs ",
                 shape_string(map.weights.shape()), " weights");

  std::vector<Scalar> out(static_cast<std::size_t>(d), Scalar(0));
  auto lv = local.features.values();
  auto av = map.weights.values();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[j] += av[i] * lv[i * d + j];

  return detail::make_op<Scalar>(
      {d}, std::move(out), {local.features, map.weights},
      [n, d](detail::TensorNode<Scalar>& self) {
        const auto& lv = self.parents[0]->values;
        const auto& av = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
          auto& dl = self.parents[0]->grad;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j)
              dl[i * d + j] += av[i] * self.grad[j];
        }
        if (detail::wants_grad(self, 1)) {
          auto& da = self.parents[1]->grad;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j)
              da[i] += lv[i * d + j] * self.grad[j];
        }
      });
}

/// project -> compatibility -> normalize -> attend; returns the weighted
/// feature and the map it used.
template <typename Scalar>
std::pair<Tensor<Scalar>, AttentionMap<Scalar>> attention_forward(
    const Tensor<Scalar>& raw, const Tensor<Scalar>& proj_kernel,
    const GlobalFeature<Scalar>& global_feature, Tap layer) {
  auto local = project(raw, proj_kernel, layer);
  auto scores = compatibility(local, global_feature);
  auto map = normalize(scores, local.h, local.w, layer);
  auto weighted = attend(local, map);
  return {weighted, map};
}

/// Grayscale heatmap: weights reshaped to (h,w), bilinear upsample with
/// corner alignment, min-max normalized; a constant map exports as 0.5.
template <typename Scalar>
Raster<double> export_heatmap(const AttentionMap<Scalar>& map,
                              std::int64_t target_h, std::int64_t target_w) {
  if (target_h < map.h || target_w < map.w || target_h < 1 || target_w < 1)
    reject_input("heatmap target ", target_h, "x", target_w,
                 " is smaller than the map ", map.h, "x", map.w);

  auto wv = map.weights.values();
  Raster<double> src(map.h, map.w);
  for (std::int64_t i = 0; i < map.h; ++i)
    for (std::int64_t j = 0; j < map.w; ++j)
      src(i, j) = static_cast<double>(wv[i * map.w + j]);

  Raster<double> up(target_h, target_w);
  for (std::int64_t y = 0; y < target_h; ++y) {
    const double sy = target_h == 1 || map.h == 1
                          ? 0.0
                          : static_cast<double>(y) * (map.h - 1) /
                                (target_h - 1);
    const auto y0 = static_cast<Eigen::Index>(std::floor(sy));
    const auto y1 = std::min<Eigen::Index>(y0 + 1, map.h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < target_w; ++x) {
      const double sx = target_w == 1 || map.w == 1
                            ? 0.0
                            : static_cast<double>(x) * (map.w - 1) /
                                  (target_w - 1);
      const auto x0 = static_cast<Eigen::Index>(std::floor(sx));
      const auto x1 = std::min<Eigen::Index>(x0 + 1, map.w - 1);
      const double fx = sx - static_cast<double>(x0);
      up(y, x) = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                 fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  }

  const double lo = up.minCoeff(), hi = up.maxCoeff();
  if (hi - lo < 1e-15) return Raster<double>::Constant(target_h, target_w, 0.5);
  return (up - lo) / (hi - lo);
}

}  // namespace wamd

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "wamd/attention.hpp"
#include "wamd/rng.hpp"

using wamd::AttentionMap;
using wamd::GlobalFeature;
using wamd::Tap;
using wamd::Tensor;

namespace {

using T = Tensor<double>;

std::vector<double> random_values(std::size_t n, wamd::Rng& rng, double lo = -1,
                                  double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("project with an identity kernel keeps feature vectors") {
  // 2-channel 2x2 map, kernel = identity over channels
  auto raw = T::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto kernel = T::from({2, 2, 1, 1}, {1, 0, 0, 1});
  auto local = wamd::project(raw, kernel, Tap::L1);
  CHECK(local.features.shape() == wamd::Shape{4, 2});
  // location j holds (raw[0][j], raw[1][j])
  CHECK(local.features.values()[0] == 1.0);
  CHECK(local.features.values()[1] == 5.0);
  CHECK(local.features.values()[6] == 4.0);
  CHECK(local.features.values()[7] == 8.0);
  CHECK(local.h == 2);
  CHECK(local.w == 2);
}

TEST_CASE("project with a zero kernel nulls the features") {
  auto raw = T::from({3, 2, 2}, std::vector<double>(12, 2.5));
  auto kernel = T::zeros({4, 3, 1, 1});
  auto local = wamd::project(raw, kernel, Tap::L2);
  for (double v : local.features.values()) CHECK(v == 0.0);
}

TEST_CASE("project matches the per-location matrix product oracle") {
  wamd::Rng rng(3);
  const auto rawv = random_values(8 * 2 * 2, rng);
  const auto kv = random_values(4 * 8, rng);
  auto local = wamd::project(T::from({8, 2, 2}, rawv),
                             T::from({4, 8, 1, 1}, kv), Tap::L3);
  REQUIRE(local.features.shape() == wamd::Shape{4, 4});
  for (std::int64_t loc = 0; loc < 4; ++loc)
    for (std::int64_t d = 0; d < 4; ++d) {
      double want = 0;
      for (std::int64_t c = 0; c < 8; ++c)
        want += kv[d * 8 + c] * rawv[c * 4 + loc];
      CHECK(std::abs(local.features.values()[loc * 4 + d] - want) < 1e-12);
    }

  CHECK_THROWS_AS(wamd::project(T::zeros({8, 2, 2}), T::zeros({4, 7, 1, 1}),
                                Tap::L1),
                  std::invalid_argument);
}

TEST_CASE("compatibility scores") {
  wamd::LocalFeatureMap<double> local{T::from({2, 2}, {1, 0, 0, 1}), 1, 2,
                                      Tap::L1};

  auto zero = wamd::compatibility(local, GlobalFeature<double>{T::zeros({2})});
  CHECK(zero.values()[0] == 0.0);
  CHECK(zero.values()[1] == 0.0);

  auto c = wamd::compatibility(local,
                               GlobalFeature<double>{T::from({2}, {2, 3})});
  CHECK(c.values()[0] == 2.0);
  CHECK(c.values()[1] == 3.0);

  CHECK_THROWS_AS(
      wamd::compatibility(local, GlobalFeature<double>{T::zeros({3})}),
      std::invalid_argument);

  wamd::Rng rng(5);
  const auto lv = random_values(6 * 4, rng);
  const auto gv = random_values(4, rng);
  wamd::LocalFeatureMap<double> big{T::from({6, 4}, lv), 2, 3, Tap::L2};
  auto scores =
      wamd::compatibility(big, GlobalFeature<double>{T::from({4}, gv)});
  for (std::int64_t i = 0; i < 6; ++i) {
    double want = 0;
    for (std::int64_t j = 0; j < 4; ++j) want += lv[i * 4 + j] * gv[j];
    CHECK(std::abs(scores.values()[i] - want) < 1e-12);
  }
}

TEST_CASE("normalize: uniform scores, exact exponentials, direct formula") {
  auto uniform = wamd::normalize(T::from({4}, {1.5, 1.5, 1.5, 1.5}), 2, 2,
                                 Tap::L1);
  for (double v : uniform.weights.values())
    CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  auto two = wamd::normalize(T::from({2}, {std::log(1.0), std::log(3.0)}), 1,
                             2, Tap::L2);
  CHECK(two.weights.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(two.weights.values()[1] == doctest::Approx(0.75).epsilon(1e-12));

  wamd::Rng rng(7);
  const auto sv = random_values(9, rng, -4, 4);
  auto map = wamd::normalize(T::from({9}, sv), 3, 3, Tap::L3);
  double denom = 0;
  for (double s : sv) denom += std::exp(s);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(std::abs(map.weights.values()[i] - std::exp(sv[i]) / denom) < 1e-12);
}

TEST_CASE("attention map simplex and score-shift invariance") {
  wamd::Rng rng(11);
  for (int rep = 0; rep < 25; ++rep) {
    const auto sv = random_values(16, rng, -50, 50);
    auto map = wamd::normalize(T::from({16}, sv), 4, 4, Tap::L1);
    double sum = 0;
    for (double v : map.weights.values()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);

    auto shifted = sv;
    const double c = rng.uniform(-10, 10);
    for (double& v : shifted) v += c;
    auto map2 = wamd::normalize(T::from({16}, shifted), 4, 4, Tap::L1);
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(std::abs(map.weights.values()[i] - map2.weights.values()[i]) <
            1e-12);
  }
}

TEST_CASE("attend selection, uniform mean, and convex hull containment") {
  wamd::LocalFeatureMap<double> local{
      T::from({3, 2}, {1, 10, 2, 20, 3, 30}), 1, 3, Tap::L1};

  AttentionMap<double> onehot{T::from({3}, {0, 1, 0}), 1, 3, Tap::L1};
  auto picked = wamd::attend(local, onehot);
  CHECK(picked.values()[0] == 2.0);
  CHECK(picked.values()[1] == 20.0);

  AttentionMap<double> uniform{T::from({3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}), 1, 3,
                               Tap::L1};
  auto mean = wamd::attend(local, uniform);
  CHECK(mean.values()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(mean.values()[1] == doctest::Approx(20.0).epsilon(1e-12));

  // identical local vectors: any valid map returns that vector
  wamd::LocalFeatureMap<double> same{
      T::from({3, 2}, {7, -3, 7, -3, 7, -3}), 1, 3, Tap::L2};
  AttentionMap<double> skew{T::from({3}, {0.6, 0.3, 0.1}), 1, 3, Tap::L2};
  auto v = wamd::attend(same, skew);
  CHECK(v.values()[0] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(v.values()[1] == doctest::Approx(-3.0).epsilon(1e-12));

  CHECK_THROWS_AS(wamd::attend(local, AttentionMap<double>{T::from(
                                          {2}, {0.5, 0.5}),
                                      1, 2, Tap::L1}),
                  std::invalid_argument);

  // convex hull: coordinate-wise within [min, max] of the local vectors
  wamd::Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const auto lv = random_values(5 * 3, rng);
    wamd::LocalFeatureMap<double> lm{T::from({5, 3}, lv), 1, 5, Tap::L3};
    auto map = wamd::normalize(T::from({5}, random_values(5, rng, -3, 3)), 1,
                               5, Tap::L3);
    auto out = wamd::attend(lm, map);
    for (std::int64_t j = 0; j < 3; ++j) {
      double lo = lv[j], hi = lv[j];
      for (std::int64_t i = 1; i < 5; ++i) {
        lo = std::min(lo, lv[i * 3 + j]);
        hi = std::max(hi, lv[i * 3 + j]);
      }
      CHECK(out.values()[j] >= lo - 1e-12);
      CHECK(out.values()[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention_forward composes the four ops") {
  wamd::Rng rng(17);
  const auto rawv = random_values(3 * 2 * 2, rng);
  const auto kvals = random_values(3 * 3, rng);
  auto raw = T::from({3, 2, 2}, rawv);
  // identity-free kernel
  auto kernel = T::from({3, 3, 1, 1}, kvals);
  GlobalFeature<double> g{T::from({3}, random_values(3, rng))};

  auto [weighted, map] = wamd::attention_forward(raw, kernel, g, Tap::L2);

  auto local = wamd::project(raw, kernel, Tap::L2);
  auto scores = wamd::compatibility(local, g);
  auto map2 = wamd::normalize(scores, local.h, local.w, Tap::L2);
  auto weighted2 = wamd::attend(local, map2);
  for (std::int64_t j = 0; j < 3; ++j)
    CHECK(weighted.values()[j] == weighted2.values()[j]);
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(map.weights.values()[i] == map2.weights.values()[i]);
}

TEST_CASE("attention_forward with identity projection and zero global") {
  auto raw = T::from({2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  auto kernel = T::from({2, 2, 1, 1}, {1, 0, 0, 1});
  GlobalFeature<double> g{T::zeros({2})};
  auto [weighted, map] = wamd::attention_forward(raw, kernel, g, Tap::L1);
  // zero scores -> uniform map -> mean of local vectors
  for (double v : map.weights.values())
    CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(weighted.values()[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(weighted.values()[1] == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("attention_forward gradients match finite differences") {
  wamd::Rng rng(19);
  std::vector<T> leaves{
      T::from({3, 2, 2}, random_values(12, rng)).set_requires_grad(true),
      T::from({4, 3, 1, 1}, random_values(12, rng)).set_requires_grad(true),
      T::from({4}, random_values(4, rng)).set_requires_grad(true)};
  auto failures = gradcheck::compare(
      [](const std::vector<T>& l) {
        GlobalFeature<double> g{l[2]};
        auto [weighted, map] = wamd::attention_forward(l[0], l[1], g, Tap::L1);
        wamd::Rng r(7);
        std::vector<double> wv(4);
        for (auto& x : wv) x = r.uniform(-1, 1);
        return wamd::inner_product(weighted, T::from({4}, wv));
      },
      leaves);
  CHECK(failures.empty());
}

TEST_CASE("export_heatmap conventions") {
  AttentionMap<double> uniform{T::from({4}, {0.25, 0.25, 0.25, 0.25}), 2, 2,
                               Tap::L1};
  auto flat = wamd::export_heatmap(uniform, 8, 8);
  CHECK(flat.rows() == 8);
  CHECK((flat - 0.5).abs().maxCoeff() == 0.0);

  AttentionMap<double> onehot{T::from({4}, {0, 0, 0, 1}), 2, 2, Tap::L2};
  auto up = wamd::export_heatmap(onehot, 4, 4);
  double best = -1;
  Eigen::Index by = -1, bx = -1;
  for (Eigen::Index y = 0; y < 4; ++y)
    for (Eigen::Index x = 0; x < 4; ++x)
      if (up(y, x) > best) {
        best = up(y, x);
        by = y;
        bx = x;
      }
  CHECK(by == 3);  // hot source cell (1,1) lands on the far corner
  CHECK(bx == 3);
  CHECK(best == doctest::Approx(1.0));

  AttentionMap<double> quad{T::from({4}, {0.1, 0.2, 0.3, 0.4}), 2, 2, Tap::L3};
  auto q = wamd::export_heatmap(quad, 4, 4);
  // source-aligned pixels carry the min-max normalized inputs
  CHECK(q(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(q(0, 3) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(q(3, 0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(q(3, 3) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(wamd::export_heatmap(quad, 1, 1), std::invalid_argument);
}

#pragma once

// The full detector at configurable scale: a three-stage pre-activation
// residual backbone over the 48-channel sub-band stack, tap points L1/L2/L3
// at the stage outputs, a pooled global feature g, one attention module per
// active tap, and a two-logit fusion head over the concatenated attended
// features. Class index 1 is the morph class.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wamd/adam.hpp"
#include "wamd/attention.hpp"
#include "wamd/checkpoint.hpp"
#include "wamd/common.hpp"
#include "wamd/metrics.hpp"
#include "wamd/rng.hpp"
#include "wamd/tensor.hpp"
#include "wamd/wavelet.hpp"

namespace wamd {

struct BackboneConfig {
  std::int64_t input_channels = 48;
  std::int64_t input_size = 32;  // H = W, multiple of 8
  std::array<std::int64_t, 3> stage_widths{16, 32, 64};
  std::array<std::int64_t, 3> stage_blocks{1, 1, 1};
  std::int64_t feature_dim = 64;  // common attention width D
  std::vector<Tap> active_taps{Tap::L1, Tap::L2, Tap::L3};
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;  // [N, 2]
  std::vector<Tap> taps;  // active taps, L1 < L2 < L3
  std::vector<std::vector<AttentionMap<Scalar>>> maps;  // [tap][sample]
};

template <typename Scalar>
class MorphDetector {
 public:
  /// Deterministic construction: He fan-in weights, zero biases, every draw
  /// ordered by the parameter registry.
  static MorphDetector build(const BackboneConfig& config,
                             std::uint64_t seed) {
    validate(config);
    MorphDetector m;
    m.cfg_ = config;
    m.cfg_.active_taps = sorted_taps(config.active_taps);

    Rng rng(derive_seed(seed, "init"));
    auto conv_param = [&](const std::string& name, std::int64_t out_c,
                          std::int64_t in_c, std::int64_t k) {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
      auto w = m.register_param(name + ".weight", {out_c, in_c, k, k});
      for (auto& v : w.mutable_values())
        v = static_cast<Scalar>(std_dev * rng.normal());
      auto b = m.register_param(name + ".bias", {out_c});
      return ConvLayer{w, b};
    };
    auto dense_param = [&](const std::string& name, std::int64_t out_d,
                           std::int64_t in_d) {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(in_d));
      auto w = m.register_param(name + ".weight", {out_d, in_d});
      for (auto& v : w.mutable_values())
        v = static_cast<Scalar>(std_dev * rng.normal());
      auto b = m.register_param(name + ".bias", {out_d});
      return DenseLayer{w, b};
    };

    const auto& widths = m.cfg_.stage_widths;
    m.stem_ = conv_param("stem", widths[0], m.cfg_.input_channels, 3);
    for (int s = 0; s < 3; ++s) {
      for (std::int64_t b = 0; b < m.cfg_.stage_blocks[s]; ++b) {
        const std::string base = msg("stage", s + 1, ".block", b + 1);
        m.stages_[s].push_back({conv_param(base + ".conv1", widths[s],
                                           widths[s], 3),
                                conv_param(base + ".conv2", widths[s],
                                           widths[s], 3)});
      }
      if (s < 2)  // transition: 2x2 maxpool then a 3x3 conv
        m.transitions_[s] =
            conv_param(msg("trans", s + 1), widths[s + 1], widths[s], 3);
    }
    m.global_fc_ = dense_param("global", m.cfg_.feature_dim, widths[2]);
    for (Tap tap : m.cfg_.active_taps) {
      const std::int64_t tap_width = widths[static_cast<int>(tap)];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(tap_width));
      auto w = m.register_param("proj." + to_string(tap) + ".weight",
                                {m.cfg_.feature_dim, tap_width, 1, 1});
      for (auto& v : w.mutable_values())
        v = static_cast<Scalar>(std_dev * rng.normal());
      m.proj_[tap] = w;
    }
    const auto k = static_cast<std::int64_t>(m.cfg_.active_taps.size());
    m.fuse1_ = dense_param("fuse1", m.cfg_.feature_dim,
                           k * m.cfg_.feature_dim);
    m.fuse2_ = dense_param("fuse2", 2, m.cfg_.feature_dim);
    return m;
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Forward pass over a [N, C, H, W] sub-band batch.
  ForwardResult<Scalar> forward(const Tensor<Scalar>& batch) const {
    const Shape& s = batch.shape();
    if (s.size() != 4 || s[1] != cfg_.input_channels)
      reject_input("forward expects [N,", cfg_.input_channels,
                   ",H,W] input, got ", shape_string(s));
    if (s[2] != cfg_.input_size || s[3] != cfg_.input_size)
      reject_input("forward spatial size ", s[2], "x", s[3],
                   " does not match the configured ", cfg_.input_size);

    auto t = conv2d(batch, stem_.w, stem_.b, 1, 1);
    std::array<Tensor<Scalar>, 3> tap_features;
    for (int stage = 0; stage < 3; ++stage) {
      if (stage > 0)
        t = conv2d(relu(maxpool2d(t, 2, 2)), transitions_[stage - 1].w,
                   transitions_[stage - 1].b, 1, 1);
      for (const auto& block : stages_[stage]) {
        auto inner = conv2d(relu(t), block.c1.w, block.c1.b, 1, 1);
        auto outer = conv2d(relu(inner), block.c2.w, block.c2.b, 1, 1);
        t = add(t, outer);
      }
      tap_features[stage] = t;
    }

    auto g_batch = dense(global_avg_pool(relu(t)), global_fc_.w, global_fc_.b);

    ForwardResult<Scalar> result;
    result.taps = cfg_.active_taps;
    result.maps.resize(result.taps.size());

    const std::int64_t n = s[0];
    std::vector<Tensor<Scalar>> rows;
    rows.reserve(n);
    for (std::int64_t i = 0; i < n; ++i) {
      GlobalFeature<Scalar> g{select0(g_batch, i)};
      std::vector<Tensor<Scalar>> attended;
      attended.reserve(result.taps.size());
      for (std::size_t ti = 0; ti < result.taps.size(); ++ti) {
        const Tap tap = result.taps[ti];
        auto raw = select0(tap_features[static_cast<int>(tap)], i);
        auto [weighted, map] =
            attention_forward(raw, proj_.at(tap), g, tap);
        check_simplex(map);
        attended.push_back(reshape(weighted, {1, cfg_.feature_dim}));
        result.maps[ti].push_back(std::move(map));
      }
      rows.push_back(concat(attended, 1));
    }
    auto fused = concat(rows, 0);  // [N, k*D]
    auto hidden = relu(dense(fused, fuse1_.w, fuse1_.b));
    result.logits = dense(hidden, fuse2_.w, fuse2_.b);
    return result;
  }

  /// Morph probability per sample (softmax over the two logits, class 1).
  std::vector<double> score(const Tensor<Scalar>& batch) const {
    const auto result = forward(batch);
    auto lv = result.logits.values();
    const std::int64_t n = result.logits.shape()[0];
    std::vector<double> probs(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const double l0 = static_cast<double>(lv[2 * i]);
      const double l1 = static_cast<double>(lv[2 * i + 1]);
      const double mx = std::max(l0, l1);
      const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
      probs[i] = e1 / (e0 + e1);
    }
    return probs;
  }

  std::vector<Tensor<Scalar>>& parameters() { return params_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  Tensor<Scalar> parameter(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    reject_input("unknown parameter '", name, "'");
  }

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
  }

  std::vector<NamedArray> to_arrays() const {
    std::vector<NamedArray> arrays;
    arrays.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      NamedArray a;
      a.name = names_[i];
      for (std::int64_t e : params_[i].shape())
        a.shape.push_back(static_cast<std::uint32_t>(e));
      a.values.reserve(params_[i].values().size());
      for (Scalar v : params_[i].values())
        a.values.push_back(static_cast<float>(v));
      arrays.push_back(std::move(a));
    }
    return arrays;
  }

  void load_arrays(const std::vector<NamedArray>& arrays) {
    if (arrays.size() != params_.size())
      reject_input("checkpoint holds ", arrays.size(), " arrays, model has ",
                   params_.size(), " parameters");
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto it = by_name.find(names_[i]);
      if (it == by_name.end())
        reject_input("checkpoint is missing parameter '", names_[i], "'");
      const NamedArray& a = *it->second;
      const Shape& shape = params_[i].shape();
      if (a.shape.size() != shape.size())
        reject_input("checkpoint shape rank mismatch for '", names_[i], "'");
      for (std::size_t d = 0; d < shape.size(); ++d)
        if (static_cast<std::int64_t>(a.shape[d]) != shape[d])
          reject_input("checkpoint shape mismatch for '", names_[i], "'");
      auto dst = params_[i].mutable_values();
      for (std::size_t j = 0; j < dst.size(); ++j)
        dst[j] = static_cast<Scalar>(a.values[j]);
    }
  }

 private:
  struct ConvLayer {
    Tensor<Scalar> w, b;
  };
  struct DenseLayer {
    Tensor<Scalar> w, b;
  };

  static std::vector<Tap> sorted_taps(std::vector<Tap> taps) {
    std::sort(taps.begin(), taps.end());
    taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
    return taps;
  }

  static void validate(const BackboneConfig& c) {
    if (c.active_taps.empty())
      reject_input("model config needs at least one active tap");
    if (c.input_channels <= 0) reject_input("input_channels must be positive");
    if (c.input_size < 8 || c.input_size % 8 != 0)
      reject_input("input_size must be a positive multiple of 8, got ",
                   c.input_size);
    for (auto w : c.stage_widths)
      if (w <= 0) reject_input("stage widths must be positive");
    for (auto b : c.stage_blocks)
      if (b <= 0) reject_input("stage block counts must be positive");
    if (c.feature_dim <= 0) reject_input("feature_dim must be positive");
  }

  Tensor<Scalar> register_param(const std::string& name, Shape shape) {
    auto t = Tensor<Scalar>::zeros(std::move(shape));
    t.set_requires_grad(true);
    names_.push_back(name);
    params_.push_back(t);
    return t;
  }

  struct Block_ {
    ConvLayer c1, c2;
  };

  BackboneConfig cfg_;
  ConvLayer stem_;
  std::array<std::vector<Block_>, 3> stages_;
  std::array<ConvLayer, 2> transitions_;
  DenseLayer global_fc_;
  std::map<Tap, Tensor<Scalar>> proj_;
  DenseLayer fuse1_, fuse2_;
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> params_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

template <typename Scalar>
struct TrainSample {
  std::vector<Scalar> stack;  // flattened [C,H,W] sub-band values
  int label = 0;              // 0 bona fide, 1 morph
};

/// Wavelet front end for one image: decompose, flatten, and standardize the
/// stack per sample (zero mean, unit variance) so the network sees relative
/// band structure rather than global scale.
template <typename Scalar>
TrainSample<Scalar> subband_sample(const Raster<double>& image, int label,
                                   const FilterPair& filters) {
  const auto stack = packet_decompose(image, filters);
  TrainSample<Scalar> s;
  s.stack = stack_to_values<Scalar>(stack);
  s.label = label;

  double mean = 0;
  for (Scalar v : s.stack) mean += static_cast<double>(v);
  mean /= static_cast<double>(s.stack.size());
  double var = 0;
  for (Scalar v : s.stack) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  var /= static_cast<double>(s.stack.size());
  const double inv = 1.0 / std::max(std::sqrt(var), 1e-6);
  for (Scalar& v : s.stack)
    v = static_cast<Scalar>((static_cast<double>(v) - mean) * inv);
  return s;
}

struct TrainHyper {
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-3;
  double clip_norm = 5.0;  // global gradient-norm clip, 0 disables
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_deer = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<NamedArray> best_checkpoint;
  double best_val_deer = 1.0;
  int best_epoch = 0;
};

template <typename Scalar>
Tensor<Scalar> make_batch(const std::vector<TrainSample<Scalar>>& samples,
                          const std::vector<std::size_t>& indices,
                          std::size_t begin, std::size_t end,
                          const BackboneConfig& cfg) {
  const std::int64_t per =
      cfg.input_channels * cfg.input_size * cfg.input_size;
  std::vector<Scalar> values;
  values.reserve((end - begin) * static_cast<std::size_t>(per));
  for (std::size_t i = begin; i < end; ++i) {
    const auto& s = samples[indices[i]];
    if (static_cast<std::int64_t>(s.stack.size()) != per)
      reject_input("sample stack length ", s.stack.size(),
                   " does not match the model input ", per);
    values.insert(values.end(), s.stack.begin(), s.stack.end());
  }
  return Tensor<Scalar>::from({static_cast<std::int64_t>(end - begin),
                               cfg.input_channels, cfg.input_size,
                               cfg.input_size},
                              std::move(values));
}

/// Detector scores for a labelled set, batched.
template <typename Scalar>
ScoreSet score_samples(const MorphDetector<Scalar>& model,
                       const std::vector<TrainSample<Scalar>>& samples,
                       int batch_size) {
  ScoreSet scores;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t at = 0; at < samples.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(samples.size(), at + static_cast<std::size_t>(batch_size));
    auto batch = make_batch(samples, order, at, end, model.config());
    const auto probs = model.score(batch);
    for (std::size_t i = at; i < end; ++i) {
      if (samples[i].label == 1)
        scores.morph.push_back(probs[i - at]);
      else
        scores.bona_fide.push_back(probs[i - at]);
    }
  }
  return scores;
}

/// Epoch loop with seeded shuffling and Adam updates; keeps the checkpoint
/// with the best validation D-EER. Aborts with a diagnostic if any gradient
/// or loss stops being finite.
template <typename Scalar>
TrainResult train(MorphDetector<Scalar>& model,
                  const std::vector<TrainSample<Scalar>>& train_set,
                  const std::vector<TrainSample<Scalar>>& val_set,
                  const TrainHyper& hyper) {
  if (train_set.empty() || val_set.empty())
    reject_input("train requires non-empty train and val sets");
  if (hyper.batch_size < 1) reject_input("batch_size must be positive");
  if (hyper.epochs < 0) reject_input("epochs must be non-negative");

  auto& params = model.parameters();
  AdamState<Scalar> adam(params, static_cast<Scalar>(hyper.lr));
  Rng shuffle_rng(derive_seed(hyper.seed, "shuffle"));

  TrainResult result;
  result.best_val_deer = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(
          order.size(), at + static_cast<std::size_t>(hyper.batch_size));
      auto batch = make_batch(train_set, order, at, end, model.config());
      std::vector<int> labels;
      labels.reserve(end - at);
      for (std::size_t i = at; i < end; ++i)
        labels.push_back(train_set[order[i]].label);

      for (auto& p : params) p.zero_grad();
      auto out = model.forward(batch);
      auto loss = cross_entropy_loss(out.logits, labels);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw std::runtime_error(msg("training diverged: non-finite loss at "
                                     "epoch ",
                                     epoch, ", batch offset ", at));
      backward(loss);
      for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (Scalar g : params[pi].grad())
          if (!std::isfinite(static_cast<double>(g)))
            throw std::runtime_error(
                msg("training diverged: non-finite gradient in parameter ",
                    model.parameter_names()[pi], " at epoch ", epoch));
      if (hyper.clip_norm > 0) {
        double norm_sq = 0;
        for (const auto& p : params)
          for (Scalar g : p.grad()) norm_sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > hyper.clip_norm) {
          const auto scale_by =
              static_cast<Scalar>(hyper.clip_norm / norm);
          for (auto& p : params) {
            auto node = p.node();
            for (auto& g : node->grad) g *= scale_by;
          }
        }
      }
      adam_step(params, adam);
      loss_sum += loss_value * static_cast<double>(end - at);
    }

    const double train_loss =
        loss_sum / static_cast<double>(train_set.size());
    const auto val_scores = score_samples(model, val_set, hyper.batch_size);
    const double val_deer = d_eer(val_scores);
    result.log.push_back({epoch, train_loss, val_deer});
    // ties keep the most recent model
    if (val_deer <= result.best_val_deer) {
      result.best_val_deer = val_deer;
      result.best_epoch = epoch;
      result.best_checkpoint = model.to_arrays();
    }
  }

  if (result.best_checkpoint.empty()) {
    // zero epochs: the untrained model is the checkpoint
    result.best_checkpoint = model.to_arrays();
    result.best_val_deer = d_eer(score_samples(model, val_set,
                                               hyper.batch_size));
    result.best_epoch = 0;
  }
  return result;
}

}  // namespace wamd

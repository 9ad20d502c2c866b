#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wamd/common.hpp"
#include "wamd/tensor.hpp"

namespace wamd {

/// Bias-corrected Adam over an ordered parameter list. Moment arrays are kept
/// parallel to the list passed at construction; the step counter starts at 0.
template <typename Scalar>
struct AdamState {
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  std::int64_t step_count = 0;
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;

  explicit AdamState(const std::vector<Tensor<Scalar>>& params,
                     Scalar lr_ = Scalar(1e-3), Scalar beta1_ = Scalar(0.9),
                     Scalar beta2_ = Scalar(0.999), Scalar eps_ = Scalar(1e-8))
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p.values().size(), Scalar(0));
      v.emplace_back(p.values().size(), Scalar(0));
    }
  }
};

template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  if (params.size() != state.m.size() || params.size() != state.v.size())
    reject_state("adam state does not match parameter list (", state.m.size(),
                 " moments for ", params.size(), " params)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad())
      reject_state("adam_step: parameter ", i, " has no gradient array");
    if (state.m[i].size() != params[i].values().size())
      reject_state("adam_step: moment ", i, " shape does not match parameter");
  }

  state.step_count += 1;
  const auto t = static_cast<Scalar>(state.step_count);
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    auto x = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = state.beta1 * m[j] + (Scalar(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (Scalar(1) - state.beta2) * g[j] * g[j];
      const Scalar m_hat = m[j] / c1;
      const Scalar v_hat = v[j] / c2;
      x[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace wamd

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eegrl/tensor.hpp"

namespace eegrl {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Gradient-side weight decay: lambda * param is added to each gradient.
  double l2_lambda = 0.0;

  std::int64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  void reset() {
    step_count = 0;
    first_moment.clear();
    second_moment.clear();
  }
};

/// One bias-corrected Adam update over `params`, reading each tensor's grad buffer
/// (a tensor without a grad buffer is treated as having zero gradient).
inline void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i]->size(), 0.0);
      state.second_moment[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw DimensionError("adam_step: parameter list changed size between steps");

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i]->size())
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " changed shape");
    if (!params[i]->has_grad()) continue;
    for (double g : std::as_const(*params[i]).grad())
      if (!std::isfinite(g))
        throw TrainingError("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto value = p.data();
    std::span<const double> grad = std::as_const(p).grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = (grad.empty() ? 0.0 : grad[j]) + state.l2_lambda * value[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      value[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace eegrl

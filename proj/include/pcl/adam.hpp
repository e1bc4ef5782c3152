#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcl/models.hpp"

namespace pcl {

// Standard Adam with bias correction; `t` advances once per batch.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  std::int64_t t = 0;

  template <typename P>
  void init_like(const std::vector<NamedParam<P>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.tensor.size(), S(0));
      v.emplace_back(p.tensor.size(), S(0));
    }
    t = 0;
  }
};

struct StepContext {
  int epoch = 0;
  int batch = 0;
};

// Returns the max gradient norm across parameters (logged as a diagnostic;
// there is intentionally no clipping).
template <typename S>
double adam_step(std::vector<NamedParam<S>>& params, AdamState<S>& state, const AdamConfig& cfg,
                 const StepContext& ctx = {}) {
  if (state.m.size() != params.size()) throw ContractError("adam_step: state not initialized");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  double max_norm = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& tensor = params[p].tensor;
    auto grad = tensor.grad();
    auto w = tensor.mutable_values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != w.size()) throw ContractError("adam_step: moment shape mismatch");
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad.empty() ? 0.0 : double(grad[i]);
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in " + params[p].name + " at epoch " +
                           std::to_string(ctx.epoch) + ", batch " + std::to_string(ctx.batch));
      norm_sq += g * g;
      m[i] = S(cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g);
      v[i] = S(cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g);
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      w[i] = S(double(w[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
    max_norm = std::max(max_norm, std::sqrt(norm_sq));
  }
  return max_norm;
}

}  // namespace pcl

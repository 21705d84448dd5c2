#pragma once

// AdamW with per-partition learning rates and the OneCycle schedule.

#include "koopgen/tensor.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace koopgen {

using net::Gradients;
using net::ParamStore;
using net::Partition;
using net::Tensor;

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<Tensor> m, v;
  std::int64_t step = 0;

  static OptimizerState for_params(const ParamStore& p) {
    return {net::zeros_like(p), net::zeros_like(p), 0};
  }
};

/// Learning rate per partition, indexed by Partition.
using PartitionRates = std::array<double, 3>;

inline double rate_for(const PartitionRates& r, Partition p) { return r[static_cast<std::size_t>(p)]; }

/// θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)
inline void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, const PartitionRates& lr,
                       double weight_decay, const AdamHyper& h = {}) {
  detail::require(grads.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
                  "adamw_step: gradient/state count does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& theta = params[p].value.data;
    const auto& g = grads[p].data;
    auto& m = state.m[p].data;
    auto& v = state.v[p].data;
    detail::require(g.size() == theta.size() && m.size() == theta.size() && v.size() == theta.size(),
                    "adamw_step: shape mismatch for '" + params[p].name + "'");
    const double rate = rate_for(lr, params[p].partition);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      theta[i] -= rate * (mh / (std::sqrt(vh) + h.eps) + weight_decay * theta[i]);
    }
  }
}

inline void adamw_step(ParamStore& params, const Gradients& grads, OptimizerState& state, double lr,
                       double weight_decay, const AdamHyper& h = {}) {
  adamw_step(params, grads, state, PartitionRates{lr, lr, lr}, weight_decay, h);
}

inline constexpr double kOneCycleDivFactor = 25.0;
inline constexpr double kOneCycleFinalDivFactor = 1e4;

/// Linear warm-up from max/25 to max, then cosine decay to max/1e4.
inline double onecycle_lr(double step, double total_steps, double max_lr, double warmup_ratio) {
  detail::require(total_steps > 0.0, "onecycle_lr: total_steps must be positive");
  detail::require(warmup_ratio > 0.0 && warmup_ratio < 1.0, "onecycle_lr: warmup_ratio must lie in (0, 1)");
  detail::require(step >= 0.0 && step <= total_steps, "onecycle_lr: step outside [0, total_steps]");
  const double start = max_lr / kOneCycleDivFactor;
  const double final_lr = max_lr / kOneCycleFinalDivFactor;
  const double warm = warmup_ratio * total_steps;
  if (step <= warm) return start + (max_lr - start) * (step / warm);
  const double progress = (step - warm) / (total_steps - warm);
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Scales all gradients so their global ℓ₂ norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g.data) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g.data) x *= s;
    }
  }
  return norm;
}

}  // namespace koopgen

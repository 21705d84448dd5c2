#pragma once

// Temporal Sobolev norm (p = 2) evaluated in the Fourier domain:
//     ‖u‖²_{k,2} = Σ_ξ (1 + ξ² + … + ξ^{2k}) |û(ξ)|²
// with a unitary DFT over the T samples and integer frequency index
// ξ ∈ {−⌊T/2⌋ … ⌈T/2⌉−1}. For k = 0 this is exactly the ℓ₂ norm.

#include "koopgen/error.hpp"
#include "koopgen/tape.hpp"
#include "koopgen/types.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace koopgen {

struct LossConfig {
  double alpha = 0.1;
  int k = 1;

  void validate() const {
    detail::require(alpha >= 0.0, "loss weight alpha must be nonnegative");
    detail::require(k >= 0 && k <= 4, "Sobolev order must lie in [0, 4]");
  }
};

/// Integer frequency of DFT bin j.
constexpr int dft_frequency(int j, int T) noexcept { return j < (T + 1) / 2 ? j : j - T; }

inline double sobolev_weight(int xi, int k) {
  double w = 0.0, p = 1.0;
  const double x2 = static_cast<double>(xi) * xi;
  for (int i = 0; i <= k; ++i) {
    w += p;
    p *= x2;
  }
  return w;
}

/// Precomputed unitary DFT tables for length-T series.
class SobolevPlan {
 public:
  SobolevPlan(int T, int k) : T_(T), k_(k), cos_(static_cast<std::size_t>(T) * T), sin_(cos_.size()), w_(T) {
    detail::require(T >= 2, "Sobolev norm needs at least two samples");
    detail::require(k >= 0 && k <= 4, "Sobolev order must lie in [0, 4]");
    const double norm = 1.0 / std::sqrt(static_cast<double>(T));
    for (int j = 0; j < T; ++j) {
      w_[static_cast<std::size_t>(j)] = sobolev_weight(dft_frequency(j, T), k);
      for (int t = 0; t < T; ++t) {
        // Reduce j·t mod T first so the angle stays accurate.
        const double theta = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(j) * t) % T) / T;
        cos_[static_cast<std::size_t>(j * T + t)] = norm * std::cos(theta);
        sin_[static_cast<std::size_t>(j * T + t)] = -norm * std::sin(theta);
      }
    }
  }

  int length() const { return T_; }
  int order() const { return k_; }

  /// Weighted energy Σ w_ξ |û_ξ|² of one series read with the given stride.
  /// If `grad` is non-null, writes ∂energy/∂u_t (same stride).
  double energy(const double* u, long stride, double* grad = nullptr) const {
    double e = 0.0;
    std::vector<double> re(static_cast<std::size_t>(T_)), im(static_cast<std::size_t>(T_));
    for (int j = 0; j < T_; ++j) {
      double r = 0.0, i = 0.0;
      for (int t = 0; t < T_; ++t) {
        const double ut = u[t * stride];
        r += cos_[static_cast<std::size_t>(j * T_ + t)] * ut;
        i += sin_[static_cast<std::size_t>(j * T_ + t)] * ut;
      }
      re[static_cast<std::size_t>(j)] = r;
      im[static_cast<std::size_t>(j)] = i;
      e += w_[static_cast<std::size_t>(j)] * (r * r + i * i);
    }
    if (grad) {
      for (int t = 0; t < T_; ++t) {
        double g = 0.0;
        for (int j = 0; j < T_; ++j) {
          const auto idx = static_cast<std::size_t>(j * T_ + t);
          g += w_[static_cast<std::size_t>(j)] * (re[static_cast<std::size_t>(j)] * cos_[idx] +
                                                  im[static_cast<std::size_t>(j)] * sin_[idx]);
        }
        grad[t * stride] = 2.0 * g;
      }
    }
    return e;
  }

 private:
  int T_, k_;
  std::vector<double> cos_, sin_, w_;
};

/// ‖u‖_{k,2} of a T × C series, channels summed before the square root.
inline double sobolev_norm(const Matrix& u, int k) {
  detail::require(u.rows() >= 2, "Sobolev norm needs at least two samples");
  const SobolevPlan plan(static_cast<int>(u.rows()), k);
  double e = 0.0;
  for (Eigen::Index c = 0; c < u.cols(); ++c) e += plan.energy(u.data() + c, u.cols());
  return std::sqrt(e);
}

/// Batch mean of ‖x − x̂‖_{k,2} + α‖z − ẑ‖_{k,2} over trajectories (each T × C).
inline double total_loss(std::span<const Matrix> x, std::span<const Matrix> x_hat, std::span<const Matrix> z,
                         std::span<const Matrix> z_hat, const LossConfig& cfg) {
  cfg.validate();
  detail::require(!x.empty() && x.size() == x_hat.size() && x.size() == z.size() && x.size() == z_hat.size(),
                  "total_loss: batch sizes differ");
  double acc = 0.0;
  for (std::size_t b = 0; b < x.size(); ++b) {
    detail::require(x[b].rows() == x_hat[b].rows() && x[b].cols() == x_hat[b].cols() &&
                        z[b].rows() == z_hat[b].rows() && z[b].cols() == z_hat[b].cols(),
                    "total_loss: shape mismatch");
    acc += sobolev_norm(x[b] - x_hat[b], cfg.k) + cfg.alpha * sobolev_norm(z[b] - z_hat[b], cfg.k);
  }
  return acc / static_cast<double>(x.size());
}

namespace net {

/// Per-trajectory Sobolev norms of a time-major residual [T·B, C]
/// (row t·B + b holds trajectory b at sample t). Returns [B].
inline Var sobolev_norms(Var residual, int T, int k) {
  const Tensor& r = residual.value();
  detail::check(r.ndim() == 2 && T >= 2 && r.rows() % T == 0, "sobolev_norms",
                "residual " + r.shape_string() + " is not time-major over " + std::to_string(T) + " samples");
  const int B = r.rows() / T, C = r.cols();
  const auto plan = std::make_shared<SobolevPlan>(T, k);
  Tensor out({B});
  const long stride = static_cast<long>(B) * C;
  for (int b = 0; b < B; ++b) {
    double e = 0.0;
    for (int c = 0; c < C; ++c) e += plan->energy(r.data.data() + static_cast<long>(b) * C + c, stride);
    out.data[static_cast<std::size_t>(b)] = std::sqrt(e);
  }
  return residual.tape->record(std::move(out), {residual}, [ir = residual.id, plan, B, C](Tape& t, int self) {
    const Tensor& r = t.value(ir);
    const Tensor& norms = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& dr = t.grad(ir);
    const long stride = static_cast<long>(B) * C;
    std::vector<double> tmp(r.size());
    for (int b = 0; b < B; ++b) {
      const double n = norms.data[static_cast<std::size_t>(b)];
      // d‖u‖ = d(‖u‖²) / (2‖u‖); the norm is not differentiable at 0, take 0.
      if (n == 0.0) continue;
      const double s = g.data[static_cast<std::size_t>(b)] / (2.0 * n);
      for (int c = 0; c < C; ++c) {
        const long off = static_cast<long>(b) * C + c;
        plan->energy(r.data.data() + off, stride, tmp.data() + off);
        for (int tt = 0; tt < plan->length(); ++tt) dr.data[static_cast<std::size_t>(off + tt * stride)] += s * tmp[static_cast<std::size_t>(off + tt * stride)];
      }
    }
  });
}

/// Batch-mean loss on time-major tensors [T·B, ·].
inline Var trajectory_loss(Var x, Var x_hat, Var z, Var z_hat, int T, const LossConfig& cfg) {
  cfg.validate();
  Var state_term = mean(sobolev_norms(sub(x, x_hat), T, cfg.k));
  if (cfg.alpha == 0.0) return state_term;
  Var latent_term = mean(sobolev_norms(sub(z, z_hat), T, cfg.k));
  return add(state_term, scale(latent_term, cfg.alpha));
}

}  // namespace net
}  // namespace koopgen

#pragma once

// Benchmark dynamical systems: right-hand sides, RK4, initial-condition samplers.

#include "koopgen/error.hpp"
#include "koopgen/types.hpp"

#include <cmath>
#include <concepts>
#include <numbers>
#include <string>
#include <string_view>
#include <variant>

namespace koopgen {

enum class SystemKind : std::uint8_t { Pendulum = 0, Lorenz63 = 1, Lorenz96 = 2, KS = 3 };

struct PendulumParams {
  // Sampling box and energy ceiling for initial conditions.
  double angle_bound = 3.1;
  double velocity_bound = 2.0;
  double energy_bound = 0.99;
};

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

struct Lorenz96Params {
  int K = 36;
  double F = 8.0;
};

struct KsParams {
  double L = 8.0 * std::numbers::pi;
  int N = 128;
};

using SystemParams = std::variant<PendulumParams, Lorenz63Params, Lorenz96Params, KsParams>;

struct SystemSpec {
  SystemParams params;
  double integrator_dt = 0.01;
  double dt_sample = 0.01;
  int snapshot_count = 401;
  /// Discarded integration time before the first snapshot (KS: multiple of integrator_dt).
  double burn_in = 0.0;

  SystemKind kind() const noexcept { return static_cast<SystemKind>(params.index()); }

  int state_dim() const {
    switch (kind()) {
      case SystemKind::Pendulum: return 2;
      case SystemKind::Lorenz63: return 3;
      case SystemKind::Lorenz96: return std::get<Lorenz96Params>(params).K;
      case SystemKind::KS: return std::get<KsParams>(params).N;
    }
    return 0;
  }

  /// Integrator sub-steps per sampling interval.
  int substeps() const {
    const double r = dt_sample / integrator_dt;
    const double n = std::round(r);
    detail::require(n >= 1.0 && std::abs(r - n) <= 1e-9 * std::max(1.0, r),
                    "integrator_dt must divide dt_sample exactly");
    return static_cast<int>(n);
  }

  void validate() const {
    detail::require(integrator_dt > 0.0, "integrator_dt must be positive");
    detail::require(dt_sample > 0.0, "dt_sample must be positive");
    detail::require(snapshot_count >= 2, "snapshot_count must be at least 2");
    detail::require(burn_in >= 0.0, "burn_in must be nonnegative");
    if (kind() == SystemKind::Lorenz96) {
      detail::require(std::get<Lorenz96Params>(params).K >= 4, "Lorenz96 requires K >= 4");
    }
    if (kind() == SystemKind::KS) {
      const int n = std::get<KsParams>(params).N;
      detail::require(n >= 16 && (n & (n - 1)) == 0, "KS grid size must be a power of two >= 16");
      detail::require(std::get<KsParams>(params).L > 0.0, "KS domain length must be positive");
    }
    (void)substeps();
  }

  static SystemSpec pendulum() {
    SystemSpec s{PendulumParams{}};
    s.integrator_dt = 0.01;
    s.dt_sample = 0.02;
    s.snapshot_count = 301;
    s.burn_in = 0.0;
    return s;
  }

  static SystemSpec lorenz63() {
    SystemSpec s{Lorenz63Params{}};
    s.integrator_dt = 0.01;
    s.dt_sample = 0.01;
    s.snapshot_count = 401;
    s.burn_in = 10.0;
    return s;
  }

  static SystemSpec lorenz96() {
    SystemSpec s{Lorenz96Params{}};
    s.integrator_dt = 0.01;
    s.dt_sample = 0.01;
    s.snapshot_count = 401;
    s.burn_in = 10.0;
    return s;
  }

  static SystemSpec ks() {
    SystemSpec s{KsParams{}};
    s.integrator_dt = 1.0;
    s.dt_sample = 1.0;
    s.snapshot_count = 201;
    s.burn_in = 20.0;
    return s;
  }

  static SystemSpec preset(SystemKind kind) {
    switch (kind) {
      case SystemKind::Pendulum: return pendulum();
      case SystemKind::Lorenz63: return lorenz63();
      case SystemKind::Lorenz96: return lorenz96();
      case SystemKind::KS: return ks();
    }
    throw InputError("unknown system kind");
  }
};

inline std::string_view to_string(SystemKind k) {
  switch (k) {
    case SystemKind::Pendulum: return "pendulum";
    case SystemKind::Lorenz63: return "lorenz63";
    case SystemKind::Lorenz96: return "lorenz96";
    case SystemKind::KS: return "ks";
  }
  return "unknown";
}

inline SystemKind parse_system_kind(std::string_view s) {
  if (s == "pendulum") return SystemKind::Pendulum;
  if (s == "lorenz63") return SystemKind::Lorenz63;
  if (s == "lorenz96") return SystemKind::Lorenz96;
  if (s == "ks") return SystemKind::KS;
  throw InputError("unknown system '" + std::string(s) + "'");
}

/// Pendulum energy ½x₂² − cos(x₁).
inline double pendulum_energy(const Vector& x) { return 0.5 * x[1] * x[1] - std::cos(x[0]); }

/// Time derivative f(x) for the ODE systems.
inline Vector eval_rhs(const SystemSpec& system, const Vector& x) {
  detail::require(x.size() == system.state_dim(), "state dimension does not match system");
  Vector dx(x.size());
  switch (system.kind()) {
    case SystemKind::Pendulum:
      dx[0] = x[1];
      dx[1] = -std::sin(x[0]);
      break;
    case SystemKind::Lorenz63: {
      const auto& p = std::get<Lorenz63Params>(system.params);
      dx[0] = p.sigma * (x[1] - x[0]);
      dx[1] = x[0] * (p.rho - x[2]) - x[1];
      dx[2] = x[0] * x[1] - p.beta * x[2];
      break;
    }
    case SystemKind::Lorenz96: {
      const auto& p = std::get<Lorenz96Params>(system.params);
      const int K = p.K;
      for (int i = 0; i < K; ++i) {
        const double xp1 = x[(i + 1) % K];
        const double xm1 = x[(i + K - 1) % K];
        const double xm2 = x[(i + K - 2) % K];
        dx[i] = (xp1 - xm2) * xm1 - x[i] + p.F;
      }
      break;
    }
    case SystemKind::KS:
      throw InputError("KS is integrated spectrally; eval_rhs is defined for ODE systems only");
  }
  return dx;
}

/// Classical fourth-order Runge-Kutta step for an autonomous field.
template <typename Field>
  requires std::invocable<Field&, const Vector&>
Vector rk4_step(Field&& f, const Vector& x, double h) {
  const Vector k1 = f(x);
  const Vector k2 = f(x + 0.5 * h * k1);
  const Vector k3 = f(x + 0.5 * h * k2);
  const Vector k4 = f(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vector rk4_step(const SystemSpec& system, const Vector& x, double h) {
  if (system.kind() == SystemKind::KS) {
    throw InputError("RK4 is not supported for KS; use the ETDRK4 integrator");
  }
  detail::require(h > 0.0, "step size must be positive");
  return rk4_step([&](const Vector& s) { return eval_rhs(system, s); }, x, h);
}

/// Advances `x` by `n_steps` RK4 steps of `system.integrator_dt`.
inline Vector integrate_ode(const SystemSpec& system, Vector x, long n_steps) {
  for (long i = 0; i < n_steps; ++i) x = rk4_step(system, x, system.integrator_dt);
  return x;
}

}  // namespace koopgen

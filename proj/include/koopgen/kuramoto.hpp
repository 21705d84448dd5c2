#pragma once

// Kuramoto-Sivashinsky u_t = -u u_x - u_xx - u_xxxx on a periodic domain,
// advanced in Fourier space with fourth-order exponential time differencing.

#include "koopgen/error.hpp"
#include "koopgen/types.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace koopgen {

using ComplexVector = std::vector<Complex>;

/// Signed mode number of FFT bin j for an N-point transform: m ∈ {−N/2 … N/2−1}.
constexpr int mode_number(int j, int n) noexcept { return j < n / 2 ? j : j - n; }

/// Modes dropped by 2/3-rule dealiasing.
constexpr bool is_dealiased(int j, int n) noexcept {
  const int m = mode_number(j, n);
  return 3 * std::abs(m) > n || m == -n / 2;
}

struct Etdrk4Coeffs {
  int n = 0;
  double length = 0.0;
  double dt = 0.0;
  std::vector<double> wavenumber;  // k = 2πm/L in FFT bin order
  std::vector<double> linear;      // L̂(k) = k² − k⁴
  std::vector<double> e;           // exp(L̂ dt)
  std::vector<double> e2;          // exp(L̂ dt / 2)
  std::vector<double> q;
  std::vector<double> f1, f2, f3;
};

struct Etdrk4Options {
  bool nonlinear = true;  // test hook; off reduces the step to exp(L̂ dt) per mode
};

/// Number of contour points used for the φ-function means.
inline constexpr int kContourPoints = 32;

inline Etdrk4Coeffs etdrk4_precompute(double length, int n, double dt) {
  detail::require(n >= 2 && (n & (n - 1)) == 0, "grid size must be a power of two");
  detail::require(length > 0.0 && dt > 0.0, "domain length and dt must be positive");

  Etdrk4Coeffs c;
  c.n = n;
  c.length = length;
  c.dt = dt;
  c.wavenumber.resize(n);
  c.linear.resize(n);
  c.e.resize(n);
  c.e2.resize(n);
  c.q.resize(n);
  c.f1.resize(n);
  c.f2.resize(n);
  c.f3.resize(n);

  // Contour points on the unit circle around each L̂·dt avoid the cancellation
  // in (e^z − 1 − …)/z^p at small |z|.
  std::vector<Complex> roots(kContourPoints);
  for (int r = 0; r < kContourPoints; ++r) {
    const double theta = std::numbers::pi * (r + 0.5) / kContourPoints;
    roots[r] = std::exp(Complex(0.0, theta));
  }

  for (int j = 0; j < n; ++j) {
    const double k = 2.0 * std::numbers::pi * mode_number(j, n) / length;
    const double lin = k * k - k * k * k * k;
    c.wavenumber[j] = k;
    c.linear[j] = lin;
    c.e[j] = std::exp(lin * dt);
    c.e2[j] = std::exp(0.5 * lin * dt);

    // Upper half-circle; conjugate points give the complex conjugate, so the
    // real part of the half mean equals the full mean.
    Complex q{}, f1{}, f2{}, f3{};
    for (const Complex& root : roots) {
      const Complex z = lin * dt + root;
      const Complex ez = std::exp(z);
      const Complex ez2 = std::exp(0.5 * z);
      const Complex z2 = z * z;
      const Complex z3 = z2 * z;
      q += (ez2 - 1.0) / z;
      f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z2)) / z3;
      f2 += (2.0 + z + ez * (-2.0 + z)) / z3;
      f3 += (-4.0 - 3.0 * z - z2 + ez * (4.0 - z)) / z3;
    }
    const double inv = 1.0 / kContourPoints;
    c.q[j] = dt * (q * inv).real();
    c.f1[j] = dt * (f1 * inv).real();
    c.f2[j] = dt * (f2 * inv).real();
    c.f3[j] = dt * (f3 * inv).real();
  }
  return c;
}

namespace detail {

class KsSpectral {
 public:
  explicit KsSpectral(const Etdrk4Coeffs& c) : c_(c), field_(c.n), spec_(c.n) {}

  /// −½ i k · DFT(u²) with dealiasing before and after the product.
  ComplexVector nonlinear(const ComplexVector& v) {
    const int n = c_.n;
    ComplexVector filtered(v);
    for (int j = 0; j < n; ++j) {
      if (is_dealiased(j, n)) filtered[j] = 0.0;
    }
    fft_.inv(field_, filtered);
    for (auto& u : field_) u = Complex(u.real() * u.real(), 0.0);
    fft_.fwd(spec_, field_);
    ComplexVector out(n);
    for (int j = 0; j < n; ++j) {
      out[j] = is_dealiased(j, n) ? Complex(0.0) : Complex(0.0, -0.5 * c_.wavenumber[j]) * spec_[j];
    }
    return out;
  }

 private:
  const Etdrk4Coeffs& c_;
  Eigen::FFT<double> fft_;
  ComplexVector field_;
  ComplexVector spec_;
};

inline double conjugate_asymmetry(std::span<const Complex> v) {
  const auto n = v.size();
  double worst = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t mirror = (n - j) % n;
    worst = std::max(worst, std::abs(v[j] - std::conj(v[mirror])));
  }
  return worst;
}

}  // namespace detail

/// Largest |v_j − conj(v_{−j})| relative to max(1, max|v|).
inline double conjugate_symmetry_error(std::span<const Complex> v) {
  double scale = 1.0;
  for (const auto& x : v) scale = std::max(scale, std::abs(x));
  return detail::conjugate_asymmetry(v) / scale;
}

inline constexpr double kSymmetryTolerance = 1e-10;

/// One ETDRK4 step (Cox-Matthews with Kassam-Trefethen coefficients).
/// Dealiased modes of the returned state are exactly zero.
inline ComplexVector etdrk4_step(std::span<const Complex> u_hat, const Etdrk4Coeffs& c,
                                 Etdrk4Options opt = {}) {
  const int n = c.n;
  detail::require(static_cast<int>(u_hat.size()) == n, "spectral state has wrong length");
  if (conjugate_symmetry_error(u_hat) > kSymmetryTolerance) {
    throw NumericalError("spectral state is not the transform of a real field");
  }

  ComplexVector v(u_hat.begin(), u_hat.end());
  if (!opt.nonlinear) {
    for (int j = 0; j < n; ++j) v[j] *= c.e[j];
    return v;
  }

  detail::KsSpectral ks(c);
  const ComplexVector nv = ks.nonlinear(v);
  ComplexVector a(n), b(n), cc(n);
  for (int j = 0; j < n; ++j) a[j] = c.e2[j] * v[j] + c.q[j] * nv[j];
  const ComplexVector na = ks.nonlinear(a);
  for (int j = 0; j < n; ++j) b[j] = c.e2[j] * v[j] + c.q[j] * na[j];
  const ComplexVector nb = ks.nonlinear(b);
  for (int j = 0; j < n; ++j) cc[j] = c.e2[j] * a[j] + c.q[j] * (2.0 * nb[j] - nv[j]);
  const ComplexVector nc = ks.nonlinear(cc);

  ComplexVector out(n);
  for (int j = 0; j < n; ++j) {
    if (is_dealiased(j, n)) {
      out[j] = 0.0;
      continue;
    }
    out[j] = c.e[j] * v[j] + nv[j] * c.f1[j] + 2.0 * (na[j] + nb[j]) * c.f2[j] + nc[j] * c.f3[j];
  }
  // Re-impose exact Hermitian symmetry lost to rounding.
  out[0] = Complex(out[0].real(), 0.0);
  for (int j = 1; j < n / 2; ++j) {
    const Complex avg = 0.5 * (out[j] + std::conj(out[n - j]));
    out[j] = avg;
    out[n - j] = std::conj(avg);
  }
  return out;
}

/// Real grid field → spectrum (unnormalized forward DFT).
inline ComplexVector ks_forward(const Vector& u) {
  Eigen::FFT<double> fft;
  ComplexVector in(u.size()), out;
  for (Eigen::Index i = 0; i < u.size(); ++i) in[i] = u[i];
  fft.fwd(out, in);
  return out;
}

/// Spectrum → real grid field. Returns the largest discarded imaginary part via `imag_residue`.
inline Vector ks_inverse(const ComplexVector& v, double* imag_residue = nullptr) {
  Eigen::FFT<double> fft;
  ComplexVector out;
  fft.inv(out, v);
  Vector u(out.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    u[static_cast<Eigen::Index>(i)] = out[i].real();
    worst = std::max(worst, std::abs(out[i].imag()));
  }
  if (imag_residue) *imag_residue = worst;
  return u;
}

}  // namespace koopgen

#include "koopgen/kuramoto.hpp"
#include "koopgen/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace koopgen;

namespace {

using ld = long double;

struct PhiOracle {
  ld q, f1, f2, f3;
};

/// ETDRK4 coefficients in extended precision: power series for |z| ≤ 2,
/// closed forms otherwise (no cancellation once e^z is small or large).
PhiOracle phi_oracle(ld z, ld dt) {
  PhiOracle o{};
  if (std::fabs(z) <= 2.0L) {
    ld fact = 1.0L;  // n!
    ld zp = 1.0L;    // z^(n-3) for f-series, handled per term
    ld q = 0.0L, f1 = 0.0L, f2 = 0.0L, f3 = 0.0L;
    std::vector<ld> factorial(80, 1.0L);
    for (int n = 1; n < 80; ++n) factorial[n] = factorial[n - 1] * n;
    for (int n = 1; n < 60; ++n) q += std::pow(0.5L, n) * std::pow(z, n - 1) / factorial[n];
    for (int n = 3; n < 60; ++n) {
      zp = std::pow(z, n - 3);
      const ld c1 = 4.0L / factorial[n] - 3.0L / factorial[n - 1] + 1.0L / factorial[n - 2];
      const ld c2 = 1.0L / factorial[n - 1] - 2.0L / factorial[n];
      const ld c3 = 4.0L / factorial[n] - 1.0L / factorial[n - 1];
      f1 += c1 * zp;
      f2 += c2 * zp;
      f3 += c3 * zp;
    }
    (void)fact;
    o = {q, f1, f2, f3};
  } else {
    const ld ez = std::exp(z), ez2 = std::exp(z / 2), z3 = z * z * z;
    o.q = (ez2 - 1.0L) / z;
    o.f1 = (-4.0L - z + ez * (4.0L - 3.0L * z + z * z)) / z3;
    o.f2 = (2.0L + z + ez * (z - 2.0L)) / z3;
    o.f3 = (-4.0L - 3.0L * z - z * z + ez * (4.0L - z)) / z3;
  }
  o.q *= dt, o.f1 *= dt, o.f2 *= dt, o.f3 *= dt;
  return o;
}

ComplexVector random_symmetric_spectrum(int n, Rng& rng, double amp) {
  ComplexVector v(n, Complex(0.0));
  v[0] = Complex(amp * standard_normal(rng), 0.0);
  for (int j = 1; j < n / 2; ++j) {
    if (is_dealiased(j, n)) continue;
    v[j] = amp * Complex(standard_normal(rng), standard_normal(rng));
    v[n - j] = std::conj(v[j]);
  }
  return v;
}

}  // namespace

TEST(Etdrk4, LinearSymbolAtKnownModes) {
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, 128, 1.0);
  EXPECT_EQ(c.linear[0], 0.0);
  EXPECT_EQ(c.e[0], 1.0);
  EXPECT_NEAR(c.wavenumber[4], 1.0, 1e-15);
  EXPECT_NEAR(c.linear[4], 0.0, 1e-14);
  EXPECT_NEAR(c.wavenumber[8], 2.0, 1e-15);
  EXPECT_NEAR(c.linear[8], -12.0, 1e-13);
  EXPECT_NEAR(c.wavenumber[128 - 8], -2.0, 1e-15);
  EXPECT_NEAR(c.linear[128 - 8], -12.0, 1e-13);
}

TEST(Etdrk4, CoefficientsMatchSeriesOracle) {
  for (double dt : {1.0, 0.25}) {
    const auto c = etdrk4_precompute(8.0 * std::numbers::pi, 128, dt);
    double worst = 0.0;
    for (int j = 0; j < 128; ++j) {
      const PhiOracle o = phi_oracle(static_cast<ld>(c.linear[j]) * dt, dt);
      auto rel = [](double a, ld b) { return static_cast<double>(std::fabs(a - b) / std::max(std::fabs(b), 1e-300L)); };
      worst = std::max({worst, rel(c.q[j], o.q), rel(c.f1[j], o.f1), rel(c.f2[j], o.f2), rel(c.f3[j], o.f3)});
      EXPECT_NEAR(c.e[j], std::exp(c.linear[j] * dt), 1e-15 * std::max(1.0, c.e[j]));
    }
    EXPECT_LE(worst, 1e-12) << "dt=" << dt;
  }
}

TEST(Etdrk4, ZeroStaysZero) {
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, 64, 1.0);
  const ComplexVector v(64, Complex(0.0));
  for (const auto& x : etdrk4_step(v, c)) EXPECT_EQ(x, Complex(0.0));
}

TEST(Etdrk4, LinearExactnessWithoutNonlinearity) {
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, 128, 1.0);
  Rng rng(3);
  const ComplexVector v = random_symmetric_spectrum(128, rng, 10.0);
  const ComplexVector out = etdrk4_step(v, c, Etdrk4Options{false});
  for (int j = 0; j < 128; ++j) {
    const Complex expect = c.e[j] * v[j];
    EXPECT_LE(std::abs(out[j] - expect), 1e-12 * std::max(1.0, std::abs(expect))) << "mode " << j;
  }
}

TEST(Etdrk4, MeanModeConservedAndDealiasingHolds) {
  const int n = 128;
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, n, 1.0);
  Rng rng(21);
  ComplexVector v = ks_initial_spectrum(n, rng);
  v[0] = Complex(0.3 * n, 0.0);
  const Complex mean0 = v[0];
  for (int s = 0; s < 100; ++s) {
    v = etdrk4_step(v, c);
    for (int j = 0; j < n; ++j) {
      if (is_dealiased(j, n)) {
        ASSERT_EQ(v[j], Complex(0.0)) << "step " << s << " mode " << j;
      }
    }
    ASSERT_LE(conjugate_symmetry_error(v), kSymmetryTolerance);
  }
  EXPECT_LE(std::abs(v[0] - mean0), 1e-10);
}

TEST(Etdrk4, StaysBoundedOnAttractor) {
  const int n = 128;
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, n, 1.0);
  Rng rng(4);
  ComplexVector v = ks_initial_spectrum(n, rng);
  for (int s = 0; s < 300; ++s) v = etdrk4_step(v, c);
  const Vector u = ks_inverse(v);
  EXPECT_TRUE(u.allFinite());
  EXPECT_LT(u.cwiseAbs().maxCoeff(), 10.0);  // KS amplitudes stay O(1) on L = 8π
  EXPECT_GT(u.cwiseAbs().maxCoeff(), 0.1);   // and do not decay to zero
}

TEST(Etdrk4, AsymmetricInputRejected) {
  const auto c = etdrk4_precompute(8.0 * std::numbers::pi, 64, 1.0);
  ComplexVector v(64, Complex(0.0));
  v[1] = Complex(1.0, 2.0);
  v[63] = Complex(1.0, 2.0);  // should be the conjugate
  EXPECT_THROW(etdrk4_step(v, c), NumericalError);
  EXPECT_THROW(etdrk4_step(ComplexVector(32), c), InputError);
}

TEST(Etdrk4, ModeNumbering) {
  EXPECT_EQ(mode_number(0, 16), 0);
  EXPECT_EQ(mode_number(7, 16), 7);
  EXPECT_EQ(mode_number(8, 16), -8);
  EXPECT_EQ(mode_number(15, 16), -1);
  EXPECT_FALSE(is_dealiased(5, 16));   // |m|=5, 15 ≤ 16
  EXPECT_TRUE(is_dealiased(6, 16));    // |m|=6
  EXPECT_TRUE(is_dealiased(8, 16));    // Nyquist
  EXPECT_FALSE(is_dealiased(11, 16));  // m=−5
}

TEST(Etdrk4, ForwardInverseRoundTrip) {
  Rng rng(8);
  Vector u(64);
  for (int i = 0; i < 64; ++i) u[i] = standard_normal(rng);
  double residue = 1.0;
  const Vector back = ks_inverse(ks_forward(u), &residue);
  EXPECT_LE((back - u).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT(residue, 1e-12);
}

#include "koopgen/objective.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

using namespace koopgen;

namespace {

Matrix random_series(int T, int C, Rng& rng) {
  Matrix m(T, C);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

using cld = std::complex<long double>;

/// Spectral derivative of each channel in long double (odd T keeps it real):
/// û by direct summation, multiply by iξ, invert.
Matrix spectral_derivative(const Matrix& u) {
  const int T = static_cast<int>(u.rows());
  const long double pi = std::numbers::pi_v<long double>;
  Matrix out(u.rows(), u.cols());
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    std::vector<cld> hat(T);
    for (int j = 0; j < T; ++j) {
      for (int t = 0; t < T; ++t) hat[j] += static_cast<long double>(u(t, c)) * std::polar(1.0L, -2 * pi * j * t / T);
    }
    for (int t = 0; t < T; ++t) {
      cld acc = 0;
      for (int j = 0; j < T; ++j) {
        const int xi = j <= T / 2 ? j : j - T;
        acc += cld(0, xi) * hat[j] * std::polar(1.0L, 2 * pi * j * t / T);
      }
      out(t, c) = static_cast<double>(acc.real() / T);
    }
  }
  return out;
}

}  // namespace

TEST(Sobolev, FrequencyIndexing) {
  EXPECT_EQ(dft_frequency(0, 30), 0);
  EXPECT_EQ(dft_frequency(14, 30), 14);
  EXPECT_EQ(dft_frequency(15, 30), -15);
  EXPECT_EQ(dft_frequency(29, 30), -1);
  EXPECT_EQ(dft_frequency(15, 31), 15);
  EXPECT_EQ(dft_frequency(16, 31), -15);
  EXPECT_EQ(sobolev_weight(3, 0), 1.0);
  EXPECT_EQ(sobolev_weight(3, 1), 10.0);
  EXPECT_EQ(sobolev_weight(3, 2), 91.0);
}

TEST(Sobolev, OrderZeroIsParseval) {
  Rng rng(1);
  for (int T : {2, 7, 30, 64}) {
    const Matrix u = random_series(T, 3, rng);
    EXPECT_NEAR(sobolev_norm(u, 0), u.norm(), 1e-12 * u.norm()) << T;
  }
}

TEST(Sobolev, PureCosineOrderOne) {
  const int T = 30;
  Matrix u(T, 1);
  for (int t = 0; t < T; ++t) u(t, 0) = std::cos(2.0 * std::numbers::pi * 3.0 * t / T);
  const double l2sq = u.squaredNorm();
  EXPECT_NEAR(l2sq, T / 2.0, 1e-12);
  const double n = sobolev_norm(u, 1);
  EXPECT_NEAR(n * n, 10.0 * l2sq, 1e-11);
}

TEST(Sobolev, OrderOneEqualsValuePlusSpectralDerivative) {
  Rng rng(2);
  for (int T : {9, 31}) {
    const Matrix u = random_series(T, 2, rng);
    const Matrix du = spectral_derivative(u);
    const double n = sobolev_norm(u, 1);
    EXPECT_NEAR(n * n, u.squaredNorm() + du.squaredNorm(), 1e-10 * n * n) << T;
    const Matrix ddu = spectral_derivative(du);
    const double n2 = sobolev_norm(u, 2);
    EXPECT_NEAR(n2 * n2, u.squaredNorm() + du.squaredNorm() + ddu.squaredNorm(), 1e-9 * n2 * n2) << T;
  }
}

TEST(Sobolev, DerivativeOracleSanity) {
  const int T = 31;
  Matrix u(T, 1);
  for (int t = 0; t < T; ++t) u(t, 0) = std::sin(2.0 * std::numbers::pi * 2.0 * t / T);
  const Matrix du = spectral_derivative(u);
  for (int t = 0; t < T; ++t) EXPECT_NEAR(du(t, 0), 2.0 * std::cos(2.0 * std::numbers::pi * 2.0 * t / T), 1e-12);
}

TEST(Sobolev, MonotoneInOrder) {
  Rng rng(3);
  const Matrix u = random_series(30, 2, rng);
  double prev = 0.0;
  for (int k = 0; k <= 4; ++k) {
    const double n = sobolev_norm(u, k);
    EXPECT_GT(n, prev);
    prev = n;
  }
  // Constant series lives at ξ = 0 only, so every order agrees.
  const Matrix c = Matrix::Constant(30, 1, 2.0);
  EXPECT_NEAR(sobolev_norm(c, 3), sobolev_norm(c, 0), 1e-12);
}

TEST(Sobolev, Errors) {
  EXPECT_THROW(sobolev_norm(Matrix::Zero(1, 2), 1), InputError);
  EXPECT_THROW(sobolev_norm(Matrix::Zero(4, 2), 5), InputError);
  EXPECT_THROW(LossConfig({-0.1, 1}).validate(), InputError);
  EXPECT_THROW(LossConfig({0.1, -1}).validate(), InputError);
}

TEST(TotalLoss, AlphaLinearityAndZeroResidual) {
  Rng rng(4);
  std::vector<Matrix> x, xh, z, zh;
  for (int b = 0; b < 3; ++b) {
    x.push_back(random_series(30, 2, rng));
    xh.push_back(random_series(30, 2, rng));
    z.push_back(random_series(30, 4, rng));
    zh.push_back(random_series(30, 4, rng));
  }
  const double l0 = total_loss(x, xh, z, zh, {0.0, 1});
  const double l1 = total_loss(x, xh, z, zh, {1.0, 1});
  const double l3 = total_loss(x, xh, z, zh, {0.3, 1});
  EXPECT_NEAR(l3, l0 + 0.3 * (l1 - l0), 1e-12 * l1);
  EXPECT_EQ(total_loss(x, x, z, z, {0.1, 1}), 0.0);
  std::vector<Matrix> short_batch(x.begin(), x.begin() + 2);
  EXPECT_THROW(total_loss(short_batch, xh, z, zh, {}), InputError);
}

TEST(TotalLoss, TapeVersionMatchesReference) {
  Rng rng(5);
  const int T = 12, B = 3;
  std::vector<Matrix> x, xh, z, zh;
  Matrix X(T * B, 2), XH(T * B, 2), Z(T * B, 4), ZH(T * B, 4);
  for (int b = 0; b < B; ++b) {
    x.push_back(random_series(T, 2, rng));
    xh.push_back(random_series(T, 2, rng));
    z.push_back(random_series(T, 4, rng));
    zh.push_back(random_series(T, 4, rng));
    for (int t = 0; t < T; ++t) {
      X.row(t * B + b) = x[b].row(t);
      XH.row(t * B + b) = xh[b].row(t);
      Z.row(t * B + b) = z[b].row(t);
      ZH.row(t * B + b) = zh[b].row(t);
    }
  }
  net::Tape tape;
  using net::Tensor;
  const LossConfig cfg{0.25, 2};
  net::Var l = net::trajectory_loss(tape.constant(Tensor::from_matrix(X)), tape.constant(Tensor::from_matrix(XH)),
                               tape.constant(Tensor::from_matrix(Z)), tape.constant(Tensor::from_matrix(ZH)), T, cfg);
  EXPECT_NEAR(l.value().data[0], total_loss(x, xh, z, zh, cfg), 1e-12);
}

#pragma once

// Structure-preserving generator algebra.
//
// A complex D×D operator A + iB is stored in real block form
//     [[A, −B],
//      [B,  A]]
// acting on real vectors of length 2D (real parts first, imaginary parts second).
// Skew-adjoint generators use A = ½(P − Pᵀ), B = ½(Q + Qᵀ); self-adjoint ones use
// A = ½(U + Uᵀ), B = ½(V − Vᵀ). The block matrix is then exactly antisymmetric
// (resp. symmetric) in floating point, not merely up to rounding.

#include "koopgen/error.hpp"
#include "koopgen/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace koopgen {

enum class OpTag : std::uint8_t { Skew, SelfAdj, Mixed };

struct SkewGenParams {
  Matrix P;
  Matrix Q;
};

struct SelfGenParams {
  Matrix U;
  Matrix V;
};

struct RealBlockOp {
  Matrix m;  // 2D × 2D
  OpTag tag = OpTag::Mixed;

  int complex_dim() const { return static_cast<int>(m.rows() / 2); }
};

struct GeneratorBank {
  std::vector<SkewGenParams> skew;
  std::vector<SelfGenParams> selfadj;  // empty when the self-adjoint bank is absent
  int dim = 0;                         // complex latent dimension D
};

namespace detail {

inline void check_square_pair(const Matrix& a, const Matrix& b) {
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows() && a.rows() > 0,
          "generator parameters must be square matrices of equal size");
}

/// ½(X − Xᵀ); antisymmetric bit-for-bit since fl(a − b) = −fl(b − a).
inline Matrix antisymmetric_part(const Matrix& x) { return 0.5 * (x - x.transpose()); }

/// ½(X + Xᵀ); symmetric bit-for-bit by commutativity of addition.
inline Matrix symmetric_part(const Matrix& x) { return 0.5 * (x + x.transpose()); }

inline Matrix block_form(const Matrix& a, const Matrix& b) {
  const auto d = a.rows();
  Matrix m(2 * d, 2 * d);
  m.topLeftCorner(d, d) = a;
  m.bottomRightCorner(d, d) = a;
  m.bottomLeftCorner(d, d) = b;
  m.topRightCorner(d, d) = -b;
  return m;
}

}  // namespace detail

inline RealBlockOp build_skew(const SkewGenParams& p) {
  detail::check_square_pair(p.P, p.Q);
  return {detail::block_form(detail::antisymmetric_part(p.P), detail::symmetric_part(p.Q)), OpTag::Skew};
}

inline RealBlockOp build_selfadj(const SelfGenParams& p) {
  detail::check_square_pair(p.U, p.V);
  return {detail::block_form(detail::symmetric_part(p.U), detail::antisymmetric_part(p.V)), OpTag::SelfAdj};
}

/// True when `m` has the [[A, −B],[B, A]] layout exactly.
inline bool has_block_structure(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() % 2 != 0) return false;
  const auto d = m.rows() / 2;
  return m.topLeftCorner(d, d) == m.bottomRightCorner(d, d) &&
         m.topRightCorner(d, d) == -m.bottomLeftCorner(d, d);
}

/// Checks the exact structural invariant carried by the tag.
inline bool satisfies_tag(const RealBlockOp& op) {
  if (!has_block_structure(op.m)) return false;
  switch (op.tag) {
    case OpTag::Skew: return (op.m + op.m.transpose()).cwiseAbs().maxCoeff() == 0.0;
    case OpTag::SelfAdj: return op.m == op.m.transpose();
    case OpTag::Mixed: return true;
  }
  return false;
}

inline constexpr double kSimplexTolerance = 1e-6;

/// Convex combination Σ wᵢ opᵢ; the tag is preserved since both classes are convex.
inline RealBlockOp mix(std::span<const RealBlockOp> ops, std::span<const double> w) {
  detail::require(!ops.empty() && ops.size() == w.size(), "mix needs one weight per operator");
  double total = 0.0;
  for (double wi : w) {
    detail::require(std::isfinite(wi) && wi >= 0.0, "mix weights must be nonnegative");
    total += wi;
  }
  detail::require(std::abs(total - 1.0) <= kSimplexTolerance, "mix weights must sum to 1");
  const OpTag tag = ops.front().tag;
  const auto n = ops.front().m.rows();
  for (const auto& op : ops) {
    detail::require(op.tag == tag, "mix requires operators of a single class");
    detail::require(op.m.rows() == n && op.m.cols() == n, "mix requires operators of equal size");
  }
  RealBlockOp out{Matrix::Zero(n, n), tag};
  for (std::size_t i = 0; i < ops.size(); ++i) out.m += w[i] * ops[i].m;
  return out;
}

/// G = Ĝ + G̃; an absent self-adjoint part returns Ĝ unchanged.
inline RealBlockOp combine(const RealBlockOp& g_hat, const std::optional<RealBlockOp>& g_tilde) {
  if (!g_tilde) return {g_hat.m, OpTag::Skew};
  detail::require(g_hat.m.rows() == g_tilde->m.rows() && g_hat.m.cols() == g_tilde->m.cols(),
                  "combine requires operators of equal size");
  return {g_hat.m + g_tilde->m, OpTag::Mixed};
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with a Taylor polynomial of degree
// at most 18, truncated once the remainder bound drops below unit roundoff.

inline constexpr int kTaylorOrder = 18;

/// Smallest degree m ≤ 18 with θ^{m+1}/(m+1)!·e^{2θ} ≤ 2⁻⁵⁴ for θ = ‖A‖₁ ≤ ½.
inline int taylor_degree(double theta) {
  const double tol = std::ldexp(1.0, -54) * std::exp(-2.0 * theta);
  double term = theta;  // θ^{m+1}/(m+1)! at m = 0
  for (int m = 1; m <= kTaylorOrder; ++m) {
    term *= theta / (m + 1);
    if (term <= tol) return m;
  }
  return kTaylorOrder;
}

/// Number of squarings s = max(0, ⌈log₂‖A‖₁⌉ + 1), which leaves ‖A/2ˢ‖₁ ≤ ½.
inline int squaring_count(double norm1) {
  if (!(norm1 > 0.0)) return 0;
  return std::max(0, static_cast<int>(std::ceil(std::log2(norm1))) + 1);
}

namespace detail {

/// C = A·B for n×n row-major blocks.
inline void gemm_small(int n, const double* a, const double* b, double* c) {
  for (int i = 0; i < n; ++i) {
    double* ci = c + i * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      const double* bk = b + k * n;
      for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

/// C += Aᵀ·B
inline void gemm_small_tn_acc(int n, const double* a, const double* b, double* c) {
  for (int k = 0; k < n; ++k) {
    const double* ak = a + k * n;
    const double* bk = b + k * n;
    for (int i = 0; i < n; ++i) {
      const double aki = ak[i];
      double* ci = c + i * n;
      for (int j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
}

/// C += A·Bᵀ
inline void gemm_small_nt_acc(int n, const double* a, const double* b, double* c) {
  for (int i = 0; i < n; ++i) {
    const double* ai = a + i * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + j * n;
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += ai[k] * bj[k];
      c[i * n + j] += s;
    }
  }
}

inline double norm1_small(int n, const double* a) {
  double best = 0.0;
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::abs(a[i * n + j]);
    best = std::max(best, s);
  }
  return best;
}

/// Workspace holding every intermediate of one exponential evaluation so that
/// the reverse pass can replay it.
struct ExpmTrace {
  int n = 0;
  int squarings = 0;
  int order = kTaylorOrder;
  double scale = 0.0;                  // A = scale · G
  std::vector<double> a;               // scaled argument
  std::vector<double> horner;          // H_1..H_order, H_j = I + (A/j) H_{j+1}
  std::vector<double> powers;          // E_0 = H_1, E_{i+1} = E_i²; s+1 matrices
};

/// Evaluates exp(dt·G) for one n×n block into `out`, recording the trace.
inline void expm_forward(int n, const double* g, double dt, double* out, ExpmTrace& tr) {
  const int nn = n * n;
  tr.n = n;
  tr.a.assign(g, g + nn);
  for (double& x : tr.a) x *= dt;
  tr.squarings = squaring_count(norm1_small(n, tr.a.data()));
  tr.scale = dt * std::ldexp(1.0, -tr.squarings);
  const double shrink = std::ldexp(1.0, -tr.squarings);
  for (double& x : tr.a) x *= shrink;
  tr.order = taylor_degree(norm1_small(n, tr.a.data()));
  const int order = tr.order;

  tr.horner.resize(static_cast<std::size_t>(order) * nn);
  // H_order = I + A/order
  double* h_last = tr.horner.data() + static_cast<std::size_t>(order - 1) * nn;
  for (int i = 0; i < nn; ++i) h_last[i] = tr.a[i] / order;
  for (int i = 0; i < n; ++i) h_last[i * n + i] += 1.0;
  for (int j = order - 1; j >= 1; --j) {
    double* hj = tr.horner.data() + static_cast<std::size_t>(j - 1) * nn;
    const double* hnext = hj + nn;
    gemm_small(n, tr.a.data(), hnext, hj);
    const double inv = 1.0 / j;
    for (int i = 0; i < nn; ++i) hj[i] *= inv;
    for (int i = 0; i < n; ++i) hj[i * n + i] += 1.0;
  }

  tr.powers.resize(static_cast<std::size_t>(tr.squarings + 1) * nn);
  std::copy(tr.horner.begin(), tr.horner.begin() + nn, tr.powers.begin());
  for (int s = 0; s < tr.squarings; ++s) {
    const double* e = tr.powers.data() + static_cast<std::size_t>(s) * nn;
    gemm_small(n, e, e, tr.powers.data() + static_cast<std::size_t>(s + 1) * nn);
  }
  const double* last = tr.powers.data() + static_cast<std::size_t>(tr.squarings) * nn;
  std::copy(last, last + nn, out);
}

/// Reverse pass: given ∂L/∂exp(dt·G), accumulates ∂L/∂G into `dg`.
inline void expm_backward(const ExpmTrace& tr, const double* dout, double* dg) {
  const int n = tr.n;
  const int nn = n * n;
  std::vector<double> de(dout, dout + nn), tmp(static_cast<std::size_t>(nn));
  // E_{s+1} = E_s² ⇒ dE_s = dE_{s+1} E_sᵀ + E_sᵀ dE_{s+1}
  for (int s = tr.squarings - 1; s >= 0; --s) {
    const double* e = tr.powers.data() + static_cast<std::size_t>(s) * nn;
    std::fill(tmp.begin(), tmp.end(), 0.0);
    gemm_small_nt_acc(n, de.data(), e, tmp.data());
    gemm_small_tn_acc(n, e, de.data(), tmp.data());
    de.swap(tmp);
  }
  // H_j = I + (1/j) A H_{j+1}
  std::vector<double> da(static_cast<std::size_t>(nn), 0.0), dh(std::move(de)), dnext(static_cast<std::size_t>(nn));
  for (int j = 1; j < tr.order; ++j) {
    const double inv = 1.0 / j;
    const double* hnext = tr.horner.data() + static_cast<std::size_t>(j) * nn;
    for (double& x : dh) x *= inv;
    gemm_small_nt_acc(n, dh.data(), hnext, da.data());
    std::fill(dnext.begin(), dnext.end(), 0.0);
    gemm_small_tn_acc(n, tr.a.data(), dh.data(), dnext.data());
    dh.swap(dnext);
  }
  for (int i = 0; i < nn; ++i) da[i] += dh[i] / tr.order;
  for (int i = 0; i < nn; ++i) dg[i] += tr.scale * da[i];
}

}  // namespace detail

/// exp(dt·M).
inline Matrix matrix_exp(const Matrix& m, double dt) {
  detail::require(m.rows() == m.cols(), "matrix_exp needs a square matrix");
  detail::require(dt > 0.0, "dt must be positive");
  if (!m.allFinite()) throw NumericalError("matrix_exp: non-finite generator entries");
  const int n = static_cast<int>(m.rows());
  Matrix out(n, n);
  detail::ExpmTrace tr;
  detail::expm_forward(n, m.data(), dt, out.data(), tr);
  if (!out.allFinite()) throw NumericalError("matrix_exp: result overflowed");
  return out;
}

inline Matrix matrix_exp(const RealBlockOp& g, double dt) { return matrix_exp(g.m, dt); }

/// z(t+1) = K z(t)
inline Vector apply(const Matrix& k, const Vector& z) {
  detail::require(k.cols() == z.size() && k.rows() == k.cols(), "apply: dimension mismatch");
  return k * z;
}

struct SpectrumResult {
  std::vector<Complex> eigenvalues;
  double max_residual = 0.0;  // max ‖Kv − λv‖/‖v‖
};

inline constexpr double kSpectrumResidualTolerance = 1e-8;

/// Eigenvalues via Hessenberg reduction and shifted QR, sorted by descending
/// modulus then ascending argument.
inline SpectrumResult spectrum(const Matrix& k) {
  detail::require(k.rows() == k.cols() && k.rows() > 0, "spectrum needs a square matrix");
  detail::require(k.rows() <= 1024, "spectrum is limited to matrices of size 1024");
  if (!k.allFinite()) throw NumericalError("spectrum: non-finite matrix entries");
  const Eigen::MatrixXd kc = k;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(kc, true);
  if (solver.info() != Eigen::Success) throw NumericalError("spectrum: QR iteration did not converge");

  SpectrumResult out;
  const Eigen::VectorXcd lambda = solver.eigenvalues();
  const Eigen::MatrixXcd vecs = solver.eigenvectors();
  const Eigen::MatrixXcd kcx = kc.cast<Complex>();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const Eigen::VectorXcd v = vecs.col(i);
    const double res = (kcx * v - lambda[i] * v).norm() / v.norm();
    out.max_residual = std::max(out.max_residual, res);
    out.eigenvalues.push_back(lambda[i]);
  }
  const double scale = std::max(1.0, kc.cwiseAbs().maxCoeff());
  if (out.max_residual > kSpectrumResidualTolerance * scale) {
    throw NumericalError("spectrum: eigenpair residual above tolerance");
  }
  // Moduli are compared on a 1e-10 grid so rounding noise does not override the argument order.
  auto modulus_key = [](const Complex& a) { return std::llround(std::abs(a) * 1e10); };
  std::sort(out.eigenvalues.begin(), out.eigenvalues.end(), [&](const Complex& a, const Complex& b) {
    const auto ka = modulus_key(a), kb = modulus_key(b);
    if (ka != kb) return ka > kb;
    return std::arg(a) < std::arg(b);
  });
  return out;
}

}  // namespace koopgen

#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>

namespace koopgen {

/// Row-major dense matrix; everything in the library shares this layout so that
/// tensors and matrices can alias the same storage.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `index` of a run seeded with `master`.
constexpr std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix_seed(mix_seed(master) ^ mix_seed(index + 0x51ed270b27e5f3a1ULL));
}

/// Uniform double in [lo, hi) from the top 53 bits of one draw. Portable across
/// standard libraries, unlike std::uniform_real_distribution.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Standard normal via Box-Muller (one value per call, second discarded).
inline double standard_normal(Rng& rng) {
  double u1 = 0.0;
  do {
    u1 = uniform(rng, 0.0, 1.0);
  } while (u1 <= 0.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace koopgen

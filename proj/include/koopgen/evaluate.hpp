#pragma once

// Rollout metrics, operator spectra, latent grids and CSV I/O.

#include "koopgen/checkpoint.hpp"
#include "koopgen/dataset.hpp"
#include "koopgen/genops.hpp"
#include "koopgen/models.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace koopgen {

/// Maps a batch of initial states [B, d] to predicted states for steps 0..steps.
using Predictor = std::function<std::vector<Matrix>(const Matrix& x0, int steps)>;

inline Predictor model_predictor(const LatentModel& model) {
  return [&model](const Matrix& x0, int steps) { return rollout_batch(model, x0, steps).states; };
}

/// Predictor that returns ground truth, for tests and sanity checks.
inline Predictor oracle_predictor(const std::vector<const Trajectory*>& trajs, int intervals_per_step = 1) {
  return [trajs, intervals_per_step](const Matrix& x0, int steps) {
    std::vector<Matrix> out;
    for (int s = 0; s <= steps; ++s) {
      Matrix m(x0.rows(), x0.cols());
      for (Eigen::Index b = 0; b < x0.rows(); ++b) {
        const Trajectory* match = nullptr;
        for (const auto* t : trajs) {
          if (t->states.row(0) == x0.row(b)) match = t;
        }
        detail::require(match != nullptr, "oracle predictor: unknown initial state");
        m.row(b) = match->states.row(s * intervals_per_step);
      }
      out.push_back(std::move(m));
    }
    return out;
  };
}

inline constexpr int kEvalChunk = 256;

/// Per-step NRMSE: sqrt(Σ_i ‖x̂_i(t) − x_i(t)‖²) / sqrt(Σ_i ‖x_i(t)‖²), sums over
/// test trajectories i. Returns horizon + 1 values, starting at the encoded
/// initial state.
inline std::vector<double> nrmse_curve(const Predictor& predict, const std::vector<const Trajectory*>& trajs,
                                       int horizon, int intervals_per_step = 1) {
  detail::require(!trajs.empty(), "nrmse_curve: no trajectories");
  detail::require(horizon >= 1, "horizon must be at least 1");
  detail::require(intervals_per_step >= 1, "intervals_per_step must be positive");
  const int T = static_cast<int>(trajs.front()->states.rows());
  detail::require(horizon * intervals_per_step <= T - 1,
                  "horizon " + std::to_string(horizon) + " exceeds trajectory length " + std::to_string(T));
  const auto d = trajs.front()->states.cols();
  std::vector<double> err(static_cast<std::size_t>(horizon) + 1, 0.0), ref(err.size(), 0.0);
  for (std::size_t start = 0; start < trajs.size(); start += kEvalChunk) {
    const std::size_t end = std::min(trajs.size(), start + kEvalChunk);
    Matrix x0(static_cast<Eigen::Index>(end - start), d);
    for (std::size_t i = start; i < end; ++i) x0.row(static_cast<Eigen::Index>(i - start)) = trajs[i]->states.row(0);
    const auto pred = predict(x0, horizon);
    detail::require(static_cast<int>(pred.size()) == horizon + 1, "predictor returned the wrong number of steps");
    for (int s = 0; s <= horizon; ++s) {
      for (std::size_t i = start; i < end; ++i) {
        const auto truth = trajs[i]->states.row(s * intervals_per_step);
        err[static_cast<std::size_t>(s)] += (pred[static_cast<std::size_t>(s)].row(static_cast<Eigen::Index>(i - start)) - truth).squaredNorm();
        ref[static_cast<std::size_t>(s)] += truth.squaredNorm();
      }
    }
  }
  std::vector<double> out(err.size());
  for (std::size_t s = 0; s < err.size(); ++s) {
    if (!(ref[s] > 0.0)) throw NumericalError("nrmse_curve: ground truth vanishes at step " + std::to_string(s));
    out[s] = std::sqrt(err[s] / ref[s]);
    if (!std::isfinite(out[s])) throw NumericalError("nrmse_curve: non-finite error at step " + std::to_string(s));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v, std::size_t from = 0) {
  detail::require(from < v.size(), "mean_of: empty range");
  double s = 0.0;
  for (std::size_t i = from; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(v.size() - from);
}

/// |x̂ − x| over (step, component) for one trajectory.
inline Matrix error_field(const Predictor& predict, const Trajectory& traj, int horizon, int intervals_per_step = 1) {
  detail::require(horizon >= 0 && horizon * intervals_per_step <= traj.states.rows() - 1, "horizon exceeds trajectory");
  const auto pred = predict(traj.states.row(0), horizon);
  Matrix out(horizon + 1, traj.states.cols());
  for (int s = 0; s <= horizon; ++s) {
    out.row(s) = (pred[static_cast<std::size_t>(s)].row(0) - traj.states.row(s * intervals_per_step)).cwiseAbs();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operator inspection.

/// Latent operator K(z) applied by one step at latent z.
inline Matrix operator_at(const LatentModel& model, const Vector& z) {
  detail::require(z.size() == model.latent_size(), "operator_at: latent dimension mismatch");
  const int L = model.latent_size();
  if (const auto* lran = dynamic_cast<const LranModel*>(&model)) return lran->transfer_matrix();
  Tape tape;
  Var zv = tape.constant(Tensor::from_matrix(z.transpose()));
  if (const auto* kg = dynamic_cast<const KoopGenModel*>(&model)) {
    auto [wh, wt] = kg->gate_weights(tape, zv);
    Var g = net::mix(wh, kg->skew_bank(tape));
    if (kg->has_selfadj()) g = net::add(g, net::mix(wt, kg->selfadj_bank(tape)));
    return net::expm(g, kg->arch().dt).value().mat(0);
  }
  const auto* dk = dynamic_cast<const DeepKoopmanModel*>(&model);
  detail::require(dk != nullptr, "operator_at: unsupported model");
  const Tensor spec = dk->eigen_parameters(tape, zv).value();
  Matrix k = Matrix::Identity(L, L);
  // Columns of K are the images of the basis vectors under the fixed spectrum.
  Var basis = tape.constant(Tensor::from_matrix(Matrix::Identity(L, L)));
  Tensor rep({L, L});
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) rep.data[static_cast<std::size_t>(i * L + j)] = spec.data[static_cast<std::size_t>(j)];
  }
  const Tensor img = dk->step_with_spectrum(basis, tape.constant(std::move(rep))).value();
  for (int i = 0; i < L; ++i) k.col(i) = img.mat().row(i).transpose();
  return k;
}

struct OperatorSpectrum {
  std::string id;  // "K(z)", "skew_<n>", "selfadj_<m>" or "K"
  std::vector<Complex> eigenvalues;
  double max_residual = 0.0;
};

/// Spectrum of K(z) and, for KoopGen, of every one-hot operator exp(dt·G).
inline std::vector<OperatorSpectrum> inspect_spectrum(const LatentModel& model, const Vector& z) {
  std::vector<OperatorSpectrum> out;
  auto add = [&](std::string id, const Matrix& k) {
    const SpectrumResult s = spectrum(k);
    out.push_back({std::move(id), s.eigenvalues, s.max_residual});
  };
  add(model.kind() == ModelKind::Lran ? "K" : "K(z)", operator_at(model, z));
  if (const auto* kg = dynamic_cast<const KoopGenModel*>(&model)) {
    const GeneratorBank bank = kg->bank();
    for (std::size_t n = 0; n < bank.skew.size(); ++n) {
      add("skew_" + std::to_string(n), matrix_exp(build_skew(bank.skew[n]), kg->arch().dt));
    }
    for (std::size_t m = 0; m < bank.selfadj.size(); ++m) {
      add("selfadj_" + std::to_string(m), matrix_exp(build_selfadj(bank.selfadj[m]), kg->arch().dt));
    }
  }
  return out;
}

/// Mean of the one-hot skew operators (KoopGen) or K itself (LRAN); the basis
/// for eigenvector projections in grid inspection.
inline Matrix mean_onehot_operator(const LatentModel& model) {
  if (const auto* kg = dynamic_cast<const KoopGenModel*>(&model)) {
    const GeneratorBank bank = kg->bank();
    Matrix acc = Matrix::Zero(model.latent_size(), model.latent_size());
    for (const auto& p : bank.skew) acc += matrix_exp(build_skew(p), kg->arch().dt);
    return acc / static_cast<double>(bank.skew.size());
  }
  if (const auto* lran = dynamic_cast<const LranModel*>(&model)) return lran->transfer_matrix();
  throw InputError("eigenvector projections need a KoopGen or LRAN model");
}

struct GridSpec {
  int axis1 = 0, axis2 = 1;
  double lo1 = -3.1, hi1 = 3.1, lo2 = -2.0, hi2 = 2.0;
  int n1 = 50, n2 = 50;
  Vector base;  // other coordinates; empty = zeros

  void validate(int state_dim) const {
    detail::require(state_dim >= 2, "grid inspection needs state dimension >= 2");
    detail::require(axis1 >= 0 && axis1 < state_dim && axis2 >= 0 && axis2 < state_dim && axis1 != axis2,
                    "grid axes must be two distinct state coordinates");
    detail::require(n1 >= 1 && n2 >= 1, "grid needs at least one cell per axis");
    detail::require(std::isfinite(lo1) && std::isfinite(hi1) && std::isfinite(lo2) && std::isfinite(hi2) &&
                        lo1 <= hi1 && lo2 <= hi2 && (n1 == 1 || lo1 < hi1) && (n2 == 1 || lo2 < hi2),
                    "invalid grid bounds");
    detail::require(base.size() == 0 || base.size() == state_dim, "base state has the wrong dimension");
  }

  static double coord(double lo, double hi, int n, int i) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
};

struct GridTable {
  std::vector<std::string> header;
  Matrix rows;  // one row per cell, columns per header
};

/// Per-cell latent magnitude/phase of each complex coordinate plus gate weights.
inline GridTable inspect_grid(const LatentModel& model, const GridSpec& g) {
  g.validate(model.state_dim());
  const int L = model.latent_size();
  const int D = L / 2;
  const auto* kg = dynamic_cast<const KoopGenModel*>(&model);
  const int N = kg ? kg->n_skew() : 0, M = kg ? kg->n_selfadj() : 0;

  GridTable t;
  t.header = {"x1", "x2"};
  for (int i = 0; i < D; ++i) t.header.push_back("mag_" + std::to_string(i));
  for (int i = 0; i < D; ++i) t.header.push_back("phase_" + std::to_string(i));
  for (int i = 0; i < N; ++i) t.header.push_back("w_hat_" + std::to_string(i));
  for (int i = 0; i < M; ++i) t.header.push_back("w_tilde_" + std::to_string(i));

  const int cells = g.n1 * g.n2;
  Matrix x(cells, model.state_dim());
  const Vector base = g.base.size() ? g.base : Vector::Zero(model.state_dim());
  for (int i = 0; i < g.n1; ++i) {
    for (int j = 0; j < g.n2; ++j) {
      const int r = i * g.n2 + j;
      x.row(r) = base.transpose();
      x(r, g.axis1) = GridSpec::coord(g.lo1, g.hi1, g.n1, i);
      x(r, g.axis2) = GridSpec::coord(g.lo2, g.hi2, g.n2, j);
    }
  }
  Tape tape;
  Var z = model.encode(tape, tape.constant(Tensor::from_matrix(model.normalizer().normalize(x))));
  Matrix wh, wt;
  if (kg) {
    auto [a, b] = kg->gate_weights(tape, z);
    wh = a.value().to_matrix();
    if (M > 0) wt = b.value().to_matrix();
  }
  const Matrix zm = z.value().to_matrix();
  t.rows.resize(cells, static_cast<Eigen::Index>(t.header.size()));
  for (int r = 0; r < cells; ++r) {
    int c = 0;
    t.rows(r, c++) = x(r, g.axis1);
    t.rows(r, c++) = x(r, g.axis2);
    for (int i = 0; i < D; ++i) t.rows(r, c++) = std::hypot(zm(r, i), zm(r, i + D));
    for (int i = 0; i < D; ++i) t.rows(r, c++) = std::atan2(zm(r, i + D), zm(r, i));
    for (int i = 0; i < N; ++i) t.rows(r, c++) = wh(r, i);
    for (int i = 0; i < M; ++i) t.rows(r, c++) = wt(r, i);
  }
  return t;
}

/// Projections of the grid latents onto the eigenvectors of the mean one-hot
/// operator: c = V⁻¹ z, reported as |c_i| and arg c_i.
inline GridTable inspect_grid_eigen(const LatentModel& model, const GridSpec& g) {
  g.validate(model.state_dim());
  const Matrix kbar = mean_onehot_operator(model);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(kbar.cast<Complex>());
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of the mean operator failed");
  const Eigen::MatrixXcd vinv = es.eigenvectors().inverse();
  if (!vinv.allFinite()) throw NumericalError("mean operator eigenvectors are singular");
  const int L = model.latent_size();

  GridTable t;
  t.header = {"x1", "x2"};
  for (int i = 0; i < L; ++i) t.header.push_back("eig_re_" + std::to_string(i));
  for (int i = 0; i < L; ++i) t.header.push_back("eig_im_" + std::to_string(i));
  for (int i = 0; i < L; ++i) t.header.push_back("proj_mag_" + std::to_string(i));
  for (int i = 0; i < L; ++i) t.header.push_back("proj_phase_" + std::to_string(i));

  const int cells = g.n1 * g.n2;
  Matrix x(cells, model.state_dim());
  const Vector base = g.base.size() ? g.base : Vector::Zero(model.state_dim());
  for (int i = 0; i < g.n1; ++i) {
    for (int j = 0; j < g.n2; ++j) {
      const int r = i * g.n2 + j;
      x.row(r) = base.transpose();
      x(r, g.axis1) = GridSpec::coord(g.lo1, g.hi1, g.n1, i);
      x(r, g.axis2) = GridSpec::coord(g.lo2, g.hi2, g.n2, j);
    }
  }
  Tape tape;
  const Matrix zm =
      model.encode(tape, tape.constant(Tensor::from_matrix(model.normalizer().normalize(x)))).value().to_matrix();
  t.rows.resize(cells, static_cast<Eigen::Index>(t.header.size()));
  for (int r = 0; r < cells; ++r) {
    const Eigen::VectorXcd c = vinv * zm.row(r).transpose().cast<Complex>();
    int col = 0;
    t.rows(r, col++) = x(r, g.axis1);
    t.rows(r, col++) = x(r, g.axis2);
    for (int i = 0; i < L; ++i) t.rows(r, col++) = es.eigenvalues()[i].real();
    for (int i = 0; i < L; ++i) t.rows(r, col++) = es.eigenvalues()[i].imag();
    for (int i = 0; i < L; ++i) t.rows(r, col++) = std::abs(c[i]);
    for (int i = 0; i < L; ++i) t.rows(r, col++) = std::arg(c[i]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// CSV.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError("CSV has no column '" + name + "'");
  }
  double number(std::size_t row, std::size_t col) const {
    const std::string& s = rows.at(row).at(col);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw FormatError("CSV cell '" + s + "' is not a number");
    }
    if (used != s.size()) throw FormatError("CSV cell '" + s + "' is not a number");
    return v;
  }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_csv(const CsvTable& t) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\n\"") != std::string::npos) throw InputError("CSV cells may not contain , \" or newlines");
      out += (i ? "," : "") + cells[i];
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) {
    detail::require(r.size() == t.header.size(), "CSV row width differs from header");
    line(r);
  }
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = s.find(',', pos);
      cells.push_back(s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    return cells;
  };
  if (!std::getline(in, line)) throw FormatError("CSV is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) throw FormatError("CSV row width differs from header");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline CsvTable table_from(const std::vector<std::string>& header, const Matrix& m) {
  detail::require(static_cast<std::size_t>(m.cols()) == header.size(), "table width differs from header");
  CsvTable t{header, {}};
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<std::string> row;
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(format_double(m(r, c)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable nrmse_table(const std::vector<double>& curve) {
  CsvTable t{{"step", "nrmse"}, {}};
  for (std::size_t s = 0; s < curve.size(); ++s) t.rows.push_back({std::to_string(s), format_double(curve[s])});
  return t;
}

inline CsvTable error_field_table(const Matrix& field) {
  CsvTable t{{"step"}, {}};
  for (Eigen::Index c = 0; c < field.cols(); ++c) t.header.push_back("c" + std::to_string(c));
  for (Eigen::Index s = 0; s < field.rows(); ++s) {
    std::vector<std::string> row{std::to_string(s)};
    for (Eigen::Index c = 0; c < field.cols(); ++c) row.push_back(format_double(field(s, c)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable spectrum_table(const std::vector<OperatorSpectrum>& spectra) {
  CsvTable t{{"generator_id", "re", "im", "abs_dev"}, {}};
  for (const auto& s : spectra) {
    for (const auto& l : s.eigenvalues) {
      t.rows.push_back({s.id, format_double(l.real()), format_double(l.imag()), format_double(std::abs(std::abs(l) - 1.0))});
    }
  }
  return t;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) { detail::write_file(path, to_csv(t)); }

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(detail::read_file(path)); }

}  // namespace koopgen

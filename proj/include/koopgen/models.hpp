#pragma once

// KoopGen and the two baselines (LRAN, DeepKoopman) sharing one
// encoder/decoder layout.

#include "koopgen/genops.hpp"
#include "koopgen/nn.hpp"
#include "koopgen/objective.hpp"
#include "koopgen/systems.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace koopgen {

using net::Activation;
using net::Mlp;
using net::ParamStore;
using net::Partition;
using net::Tape;
using net::Tensor;
using net::Var;

enum class ModelKind : std::uint8_t { KoopGen = 0, Lran = 1, DeepKoopman = 2 };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::KoopGen: return "koopgen";
    case ModelKind::Lran: return "lran";
    case ModelKind::DeepKoopman: return "deepkoopman";
  }
  return "unknown";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "koopgen") return ModelKind::KoopGen;
  if (s == "lran") return ModelKind::Lran;
  if (s == "deepkoopman") return ModelKind::DeepKoopman;
  throw InputError("unknown model '" + std::string(s) + "'");
}

struct ArchConfig {
  int state_dim = 2;
  int latent_dim = 2;  // complex dimension D; real latent vectors have length 2D
  int main_depth = 3;
  int main_width = 32;
  int gate_depth = 2;
  int gate_width = 32;
  int n_skew = 2;
  int n_selfadj = 0;
  int n_complex_eig = 1;  // DeepKoopman conjugate pairs
  int n_real_eig = 0;     // DeepKoopman real eigenvalues
  double dt = 0.1;
  double generator_init_scale = 1e-2;
  Activation activation = Activation::Tanh;

  int latent_size(ModelKind kind) const {
    return kind == ModelKind::DeepKoopman ? 2 * n_complex_eig + n_real_eig : 2 * latent_dim;
  }

  void validate(ModelKind kind) const {
    detail::require(state_dim > 0, "state_dim must be positive");
    detail::require(main_depth >= 1 && main_width > 0, "main network needs depth >= 1 and width > 0");
    detail::require(dt > 0.0, "model dt must be positive");
    if (kind == ModelKind::DeepKoopman) {
      detail::require(n_complex_eig >= 0 && n_real_eig >= 0 && n_complex_eig + n_real_eig > 0,
                      "DeepKoopman needs at least one eigenvalue");
      detail::require(gate_depth >= 1 && gate_width > 0, "auxiliary network needs depth >= 1");
    } else {
      detail::require(latent_dim >= 1, "latent dimension must be positive");
    }
    if (kind == ModelKind::KoopGen) {
      detail::require(n_skew >= 1, "KoopGen needs at least one skew-adjoint generator");
      detail::require(n_selfadj >= 0, "self-adjoint bank size must be nonnegative");
      detail::require(gate_depth >= 1 && gate_width > 0, "gating network needs depth >= 1");
    }
  }

  /// Architecture per system; latent_dim counts complex coordinates.
  static ArchConfig preset(SystemKind system, ModelKind kind) {
    ArchConfig a;
    switch (system) {
      case SystemKind::Pendulum:
        a.state_dim = 2;
        a.main_depth = 3, a.main_width = 32, a.latent_dim = 2;
        a.gate_depth = 2, a.gate_width = 32, a.n_skew = 2, a.n_selfadj = 0;
        a.n_complex_eig = 1;
        break;
      case SystemKind::Lorenz63:
        a.state_dim = 3;
        a.main_depth = 4, a.main_width = 128, a.latent_dim = 3;
        a.gate_depth = 2, a.gate_width = 128, a.n_skew = 6, a.n_selfadj = 2;
        a.n_complex_eig = 3;
        break;
      case SystemKind::Lorenz96:
        a.state_dim = 36;
        a.main_depth = 4, a.main_width = 256, a.latent_dim = 32;
        a.gate_depth = 2, a.gate_width = 256, a.n_skew = 64, a.n_selfadj = 8;
        a.n_complex_eig = 32;
        break;
      case SystemKind::KS:
        a.state_dim = 128;
        a.main_depth = 4, a.main_width = 1024, a.latent_dim = 128;
        a.gate_depth = 2, a.gate_width = 1024, a.n_skew = 32, a.n_selfadj = 16;
        a.n_complex_eig = 512;
        break;
    }
    (void)kind;
    a.n_real_eig = 0;
    a.dt = 0.1;
    return a;
  }
};

/// Fixed per-channel affine map applied to states before encoding.
struct Normalizer {
  Vector mean;
  Vector scale;

  static Normalizer identity(int d) { return {Vector::Zero(d), Vector::Ones(d)}; }

  Matrix normalize(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
  Matrix denormalize(const Matrix& x) const {
    return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
  }
};

/// Autoencoder with a latent propagator. Tape-level methods work on normalized
/// states; the free functions below handle normalization.
class LatentModel {
 public:
  virtual ~LatentModel() = default;

  virtual ModelKind kind() const = 0;

  /// Returns a one-step propagator bound to `tape`; precomputes anything
  /// shared across steps (e.g. the generator banks).
  virtual std::function<Var(Var)> stepper(Tape& tape) const = 0;

  Var encode(Tape& tape, Var x) const { return encoder_.forward(tape, params_, x); }
  Var decode(Tape& tape, Var z) const { return decoder_.forward(tape, params_, z); }

  const ArchConfig& arch() const { return arch_; }
  int latent_size() const { return arch_.latent_size(kind()); }
  int state_dim() const { return arch_.state_dim; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n) {
    detail::require(n.mean.size() == arch_.state_dim && n.scale.size() == arch_.state_dim,
                    "normalizer does not match state dimension");
    detail::require((n.scale.array() > 0.0).all(), "normalizer scales must be positive");
    normalizer_ = std::move(n);
  }

  /// Copies parameter values from `other`; names and shapes must agree.
  void assign_parameters(const ParamStore& other) {
    detail::require(other.size() == params_.size(), "parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      detail::require(other[i].name == params_[i].name && other[i].value.shape == params_[i].value.shape &&
                          other[i].partition == params_[i].partition,
                      "parameter '" + other[i].name + "' does not match the model layout");
      params_[i].value = other[i].value;
    }
  }

 protected:
  LatentModel(const ArchConfig& arch, ModelKind kind, Rng& rng) : arch_(arch) {
    arch_.validate(kind);
    normalizer_ = Normalizer::identity(arch.state_dim);
    const int latent = arch_.latent_size(kind);
    encoder_ = Mlp::create(params_, "encoder", Partition::Main, arch.state_dim, latent, arch.main_depth,
                           arch.main_width, arch.activation, rng);
    decoder_ = Mlp::create(params_, "decoder", Partition::Main, latent, arch.state_dim, arch.main_depth,
                           arch.main_width, arch.activation, rng);
  }

  ArchConfig arch_;
  ParamStore params_;
  Mlp encoder_, decoder_;
  Normalizer normalizer_;
};

// ---------------------------------------------------------------------------

class KoopGenModel final : public LatentModel {
 public:
  KoopGenModel(const ArchConfig& arch, Rng& rng) : LatentModel(arch, ModelKind::KoopGen, rng) {
    const int z = 2 * arch.latent_dim;
    gate_hat_ = Mlp::create(params_, "gate_hat", Partition::Gate, z, arch.n_skew, arch.gate_depth, arch.gate_width,
                            arch.activation, rng);
    if (arch.n_selfadj > 0) {
      gate_tilde_ = Mlp::create(params_, "gate_tilde", Partition::Gate, z, arch.n_selfadj, arch.gate_depth,
                                arch.gate_width, arch.activation, rng);
    }
    const int d = arch.latent_dim;
    const double s = arch.generator_init_scale;
    auto raw = [&] {
      Tensor t({d, d});
      for (double& v : t.data) v = uniform(rng, -s, s);
      return t;
    };
    for (int n = 0; n < arch.n_skew; ++n) {
      const std::string base = "bank.skew." + std::to_string(n);
      skew_.push_back({params_.add(base + ".P", Partition::Generator, raw()),
                       params_.add(base + ".Q", Partition::Generator, raw())});
    }
    for (int m = 0; m < arch.n_selfadj; ++m) {
      const std::string base = "bank.selfadj." + std::to_string(m);
      selfadj_.push_back({params_.add(base + ".U", Partition::Generator, raw()),
                          params_.add(base + ".V", Partition::Generator, raw())});
    }
  }

  ModelKind kind() const override { return ModelKind::KoopGen; }
  bool has_selfadj() const { return !selfadj_.empty(); }
  int n_skew() const { return static_cast<int>(skew_.size()); }
  int n_selfadj() const { return static_cast<int>(selfadj_.size()); }

  /// Stacked skew-adjoint generators [N, 2D, 2D] built from (P, Q) on the tape.
  Var skew_bank(Tape& tape) const {
    std::vector<Var> ops;
    for (const auto& [p, q] : skew_) {
      ops.push_back(net::block_form(net::antisymmetric_part(tape.parameter(params_, p)),
                                    net::symmetric_part(tape.parameter(params_, q))));
    }
    return net::stack(ops);
  }

  /// Stacked self-adjoint generators [M, 2D, 2D] built from (U, V); requires M > 0.
  Var selfadj_bank(Tape& tape) const {
    detail::require(has_selfadj(), "model has no self-adjoint bank");
    std::vector<Var> ops;
    for (const auto& [u, v] : selfadj_) {
      ops.push_back(net::block_form(net::symmetric_part(tape.parameter(params_, u)),
                                    net::antisymmetric_part(tape.parameter(params_, v))));
    }
    return net::stack(ops);
  }

  /// Gate weights (ŵ, w̃) for latent rows z [B, 2D]; w̃ is invalid when M = 0.
  std::pair<Var, Var> gate_weights(Tape& tape, Var z) const {
    Var w_hat = net::softmax_gate(gate_hat_.forward(tape, params_, z));
    Var w_tilde;
    if (has_selfadj()) w_tilde = net::softmax_gate(gate_tilde_->forward(tape, params_, z));
    return {w_hat, w_tilde};
  }

  /// One step with caller-supplied mixture weights (test and inspection hook).
  Var step_with_weights(Tape& tape, Var z, Var w_hat, Var w_tilde) const {
    return apply_generator(z, mixed_generator(tape, skew_bank(tape), has_selfadj() ? selfadj_bank(tape) : Var{},
                                              w_hat, w_tilde));
  }

  std::function<Var(Var)> stepper(Tape& tape) const override {
    Var skew = skew_bank(tape);
    Var self = has_selfadj() ? selfadj_bank(tape) : Var{};
    return [this, &tape, skew, self](Var z) {
      auto [w_hat, w_tilde] = gate_weights(tape, z);
      return apply_generator(z, mixed_generator(tape, skew, self, w_hat, w_tilde));
    };
  }

  /// Raw generator parameters in genops form.
  GeneratorBank bank() const {
    GeneratorBank b;
    b.dim = arch_.latent_dim;
    for (const auto& [p, q] : skew_) b.skew.push_back({params_[p].value.to_matrix(), params_[q].value.to_matrix()});
    for (const auto& [u, v] : selfadj_) {
      b.selfadj.push_back({params_[u].value.to_matrix(), params_[v].value.to_matrix()});
    }
    return b;
  }

  const Mlp& gate_hat() const { return gate_hat_; }
  const std::optional<Mlp>& gate_tilde() const { return gate_tilde_; }

 private:
  Var mixed_generator(Tape&, Var skew, Var self, Var w_hat, Var w_tilde) const {
    Var g = net::mix(w_hat, skew);
    if (self.valid()) {
      detail::require(w_tilde.valid(), "self-adjoint weights are required when M > 0");
      g = net::add(g, net::mix(w_tilde, self));
    }
    return g;
  }

  Var apply_generator(Var z, Var g) const { return net::batched_matvec(net::expm(g, arch_.dt), z); }

  Mlp gate_hat_;
  std::optional<Mlp> gate_tilde_;
  std::vector<std::pair<std::size_t, std::size_t>> skew_, selfadj_;
};

// ---------------------------------------------------------------------------

/// Single state-independent transfer matrix K: z(t+1) = K z(t).
class LranModel final : public LatentModel {
 public:
  LranModel(const ArchConfig& arch, Rng& rng) : LatentModel(arch, ModelKind::Lran, rng) {
    const int n = 2 * arch.latent_dim;
    Tensor k({n, n});
    const double s = arch.generator_init_scale * arch.dt;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) k.data[static_cast<std::size_t>(i * n + j)] = (i == j ? 1.0 : 0.0) + uniform(rng, -s, s);
    }
    k_ = params_.add("lran.K", Partition::Generator, std::move(k));
  }

  ModelKind kind() const override { return ModelKind::Lran; }

  std::function<Var(Var)> stepper(Tape& tape) const override {
    Var kt = net::transpose(tape.parameter(params_, k_));
    return [kt](Var z) { return net::matmul(z, kt); };
  }

  Matrix transfer_matrix() const { return params_[k_].value.to_matrix(); }
  std::size_t transfer_index() const { return k_; }

 private:
  std::size_t k_;
};

// ---------------------------------------------------------------------------

namespace net {

/// Radius √(a² + b²) of each conjugate pair (z_j, z_{j+P}) for z [B, 2P + R]; returns [B, P].
inline Var pair_radius(Var z, int pairs) {
  const Tensor& zv = z.value();
  detail::check(zv.ndim() == 2 && zv.cols() >= 2 * pairs, "pair_radius", "latent too short");
  const int B = zv.rows(), L = zv.cols();
  Tensor out({B, pairs});
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < pairs; ++j) {
      const double a = zv.data[static_cast<std::size_t>(b * L + j)];
      const double c = zv.data[static_cast<std::size_t>(b * L + j + pairs)];
      out.data[static_cast<std::size_t>(b * pairs + j)] = std::hypot(a, c);
    }
  }
  return z.tape->record(std::move(out), {z}, [iz = z.id, pairs, B, L](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& r = t.value(self);
    const Tensor& zv = t.value(iz);
    auto& dz = t.grad(iz).data;
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < pairs; ++j) {
        const double rad = r.data[static_cast<std::size_t>(b * pairs + j)];
        if (rad == 0.0) continue;
        const double gj = g.data[static_cast<std::size_t>(b * pairs + j)] / rad;
        dz[static_cast<std::size_t>(b * L + j)] += gj * zv.data[static_cast<std::size_t>(b * L + j)];
        dz[static_cast<std::size_t>(b * L + j + pairs)] += gj * zv.data[static_cast<std::size_t>(b * L + j + pairs)];
      }
    }
  });
}

/// Applies e^{μΔt} R(ωΔt) to each pair and e^{λΔt} to each real coordinate.
/// `spec` [B, 2P + R] holds (μ_0..μ_{P−1}, ω_0..ω_{P−1}, λ_0..λ_{R−1}).
inline Var eigen_block_apply(Var z, Var spec, int pairs, double dt) {
  const Tensor& zv = z.value();
  const Tensor& sv = spec.value();
  detail::check(zv.same_shape(sv) && zv.ndim() == 2 && zv.cols() >= 2 * pairs, "eigen_block_apply",
                "latent " + zv.shape_string() + " and spectrum " + sv.shape_string() + " disagree");
  const int B = zv.rows(), L = zv.cols();
  Tensor out(zv.shape);
  for (int b = 0; b < B; ++b) {
    const double* zb = zv.data.data() + static_cast<long>(b) * L;
    const double* sb = sv.data.data() + static_cast<long>(b) * L;
    double* ob = out.data.data() + static_cast<long>(b) * L;
    for (int j = 0; j < pairs; ++j) {
      const double s = std::exp(sb[j] * dt), c = std::cos(sb[j + pairs] * dt), sn = std::sin(sb[j + pairs] * dt);
      ob[j] = s * (c * zb[j] - sn * zb[j + pairs]);
      ob[j + pairs] = s * (sn * zb[j] + c * zb[j + pairs]);
    }
    for (int j = 2 * pairs; j < L; ++j) ob[j] = std::exp(sb[j] * dt) * zb[j];
  }
  return z.tape->record(std::move(out), {z, spec}, [iz = z.id, is = spec.id, pairs, dt, B, L](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& o = t.value(self);
    const Tensor& zv = t.value(iz);
    const Tensor& sv = t.value(is);
    const bool gz = t.needs_grad(iz), gs = t.needs_grad(is);
    double* dz = gz ? t.grad(iz).data.data() : nullptr;
    double* ds = gs ? t.grad(is).data.data() : nullptr;
    for (int b = 0; b < B; ++b) {
      const long off = static_cast<long>(b) * L;
      const double* sb = sv.data.data() + off;
      for (int j = 0; j < pairs; ++j) {
        const double s = std::exp(sb[j] * dt), c = std::cos(sb[j + pairs] * dt), sn = std::sin(sb[j + pairs] * dt);
        const double ga = g.data[static_cast<std::size_t>(off + j)];
        const double gb = g.data[static_cast<std::size_t>(off + j + pairs)];
        const double oa = o.data[static_cast<std::size_t>(off + j)];
        const double ob = o.data[static_cast<std::size_t>(off + j + pairs)];
        if (gz) {
          dz[off + j] += s * (c * ga + sn * gb);
          dz[off + j + pairs] += s * (-sn * ga + c * gb);
        }
        if (gs) {
          ds[off + j] += dt * (oa * ga + ob * gb);
          ds[off + j + pairs] += dt * (-ob * ga + oa * gb);
        }
      }
      for (int j = 2 * pairs; j < L; ++j) {
        const double gj = g.data[static_cast<std::size_t>(off + j)];
        if (gz) dz[off + j] += std::exp(sb[j] * dt) * gj;
        if (gs) ds[off + j] += dt * o.data[static_cast<std::size_t>(off + j)] * gj;
      }
      (void)zv;
    }
  });
}

}  // namespace net

/// Block-diagonal propagator whose eigenvalues come from an auxiliary network
/// fed with the pair radii (and the real coordinates).
class DeepKoopmanModel final : public LatentModel {
 public:
  DeepKoopmanModel(const ArchConfig& arch, Rng& rng) : LatentModel(arch, ModelKind::DeepKoopman, rng) {
    const int in = arch.n_complex_eig + arch.n_real_eig;
    aux_ = Mlp::create(params_, "aux", Partition::Gate, in, arch.latent_size(ModelKind::DeepKoopman), arch.gate_depth,
                       arch.gate_width, arch.activation, rng);
  }

  ModelKind kind() const override { return ModelKind::DeepKoopman; }

  /// Eigenvalue parameters (μ, ω, λ) predicted for latent rows z.
  Var eigen_parameters(Tape& tape, Var z) const {
    const int p = arch_.n_complex_eig, r = arch_.n_real_eig;
    Var features = net::pair_radius(z, p);
    if (r > 0) {
      const int L = 2 * p + r;
      // Real coordinates are appended column-wise via a constant selector.
      Tensor sel({L, r});
      for (int j = 0; j < r; ++j) sel.data[static_cast<std::size_t>((2 * p + j) * r + j)] = 1.0;
      Var reals = net::matmul(z, tape.constant(std::move(sel)));
      Tensor left({p, p + r}), right({r, p + r});
      for (int j = 0; j < p; ++j) left.data[static_cast<std::size_t>(j * (p + r) + j)] = 1.0;
      for (int j = 0; j < r; ++j) right.data[static_cast<std::size_t>(j * (p + r) + p + j)] = 1.0;
      features = net::add(net::matmul(features, tape.constant(std::move(left))),
                          net::matmul(reals, tape.constant(std::move(right))));
    }
    return aux_.forward(tape, params_, features);
  }

  /// Step with explicitly supplied eigenvalue parameters (test hook).
  Var step_with_spectrum(Var z, Var spec) const {
    return net::eigen_block_apply(z, spec, arch_.n_complex_eig, arch_.dt);
  }

  std::function<Var(Var)> stepper(Tape& tape) const override {
    return [this, &tape](Var z) { return step_with_spectrum(z, eigen_parameters(tape, z)); };
  }

 private:
  Mlp aux_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<LatentModel> make_model(ModelKind kind, const ArchConfig& arch, std::uint64_t seed) {
  Rng rng(seed);
  switch (kind) {
    case ModelKind::KoopGen: return std::make_unique<KoopGenModel>(arch, rng);
    case ModelKind::Lran: return std::make_unique<LranModel>(arch, rng);
    case ModelKind::DeepKoopman: return std::make_unique<DeepKoopmanModel>(arch, rng);
  }
  throw InputError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Inference helpers (state space, normalization applied).

/// z = Φ(x)
inline Vector encode(const LatentModel& model, const Vector& x) {
  detail::require(x.size() == model.state_dim(), "encode: state dimension mismatch");
  Tape tape;
  const Matrix xn = model.normalizer().normalize(x.transpose());
  Var z = model.encode(tape, tape.constant(Tensor::from_matrix(xn)));
  return z.value().mat().row(0).transpose();
}

inline Vector decode(const LatentModel& model, const Vector& z) {
  detail::require(z.size() == model.latent_size(), "decode: latent dimension mismatch");
  Tape tape;
  Var x = model.decode(tape, tape.constant(Tensor::from_matrix(z.transpose())));
  return model.normalizer().denormalize(x.value().to_matrix()).row(0).transpose();
}

/// One latent step of any model.
inline Vector latent_step(const LatentModel& model, const Vector& z) {
  detail::require(z.size() == model.latent_size(), "step: latent dimension mismatch");
  Tape tape;
  auto step = model.stepper(tape);
  return step(tape.constant(Tensor::from_matrix(z.transpose()))).value().mat().row(0).transpose();
}

inline Vector koopgen_step(const KoopGenModel& model, const Vector& z) { return latent_step(model, z); }
inline Vector deepkoopman_step(const DeepKoopmanModel& model, const Vector& z) { return latent_step(model, z); }

struct BatchRollout {
  std::vector<Matrix> states;   // steps + 1 entries, each [B, state_dim]
  std::vector<Matrix> latents;  // steps + 1 entries, each [B, latent]
};

/// Rolls a batch of initial states forward; decoded output at every step.
inline BatchRollout rollout_batch(const LatentModel& model, const Matrix& x0, int steps) {
  detail::require(steps >= 0, "rollout steps must be nonnegative");
  detail::require(x0.cols() == model.state_dim(), "rollout: state dimension mismatch");
  BatchRollout out;
  Tape tape;
  auto step = model.stepper(tape);
  Var z = model.encode(tape, tape.constant(Tensor::from_matrix(model.normalizer().normalize(x0))));
  for (int s = 0; s <= steps; ++s) {
    if (s > 0) {
      try {
        z = step(z);
      } catch (const NumericalError& e) {
        throw NumericalError("rollout diverged at step " + std::to_string(s) + ": " + e.what());
      }
    }
    if (!z.value().all_finite()) throw NumericalError("rollout diverged at step " + std::to_string(s));
    out.latents.push_back(z.value().to_matrix());
  }
  // Decode all steps in one pass.
  std::vector<Var> zs;
  Matrix stacked(static_cast<Eigen::Index>(out.latents.size()) * x0.rows(), model.latent_size());
  for (std::size_t s = 0; s < out.latents.size(); ++s) {
    stacked.middleRows(static_cast<Eigen::Index>(s) * x0.rows(), x0.rows()) = out.latents[s];
  }
  Var xs = model.decode(tape, tape.constant(Tensor::from_matrix(stacked)));
  const Matrix decoded = model.normalizer().denormalize(xs.value().to_matrix());
  for (std::size_t s = 0; s < out.latents.size(); ++s) {
    out.states.push_back(decoded.middleRows(static_cast<Eigen::Index>(s) * x0.rows(), x0.rows()));
  }
  return out;
}

/// Predicted states x̂(0..steps) for one initial condition.
inline std::vector<Vector> rollout(const LatentModel& model, const Vector& x0, int steps) {
  const BatchRollout r = rollout_batch(model, x0.transpose(), steps);
  std::vector<Vector> out;
  for (const auto& m : r.states) out.push_back(m.row(0).transpose());
  return out;
}

// ---------------------------------------------------------------------------

/// Training objective on one batch of windows.
///
/// `windows` holds B normalized windows of n samples each (n × state_dim).
/// Consecutive samples are `steps_between` latent steps apart. The latent is
/// rolled from ẑ(0) = Φ(x(0)) and compared at the sampled instants:
///     mean_b ‖x − ψ(ẑ)‖_{k,2} + α ‖Φ(x) − ẑ‖_{k,2}.
inline Var window_loss(Tape& tape, const LatentModel& model, std::span<const Matrix* const> windows,
                       int steps_between, const LossConfig& cfg) {
  detail::require(!windows.empty(), "window_loss: empty batch");
  detail::require(steps_between >= 1, "window_loss: steps_between must be positive");
  const int B = static_cast<int>(windows.size());
  const int n = static_cast<int>(windows.front()->rows());
  const int d = model.state_dim();
  Matrix x(static_cast<Eigen::Index>(n) * B, d);
  for (int b = 0; b < B; ++b) {
    detail::require(windows[static_cast<std::size_t>(b)]->rows() == n && windows[static_cast<std::size_t>(b)]->cols() == d,
                    "window_loss: windows differ in shape");
    for (int t = 0; t < n; ++t) x.row(static_cast<Eigen::Index>(t) * B + b) = windows[static_cast<std::size_t>(b)]->row(t);
  }
  Var xv = tape.constant(Tensor::from_matrix(x));
  Var z = model.encode(tape, xv);
  auto step = model.stepper(tape);

  std::vector<Var> z_hat{net::slice_rows(z, 0, B)};
  Var cur = z_hat.front();
  for (int t = 1; t < n; ++t) {
    for (int s = 0; s < steps_between; ++s) cur = step(cur);
    z_hat.push_back(cur);
  }
  Var zh = net::concat_rows(z_hat);
  Var xh = model.decode(tape, zh);
  return net::trajectory_loss(xv, xh, z, zh, n, cfg);
}

}  // namespace koopgen

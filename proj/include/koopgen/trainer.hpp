#pragma once

// Training loop: window subsampling, partitioned AdamW, OneCycle schedule,
// best/final checkpoints and a per-epoch metrics log.

#include "koopgen/checkpoint.hpp"
#include "koopgen/dataset.hpp"
#include "koopgen/models.hpp"
#include "koopgen/objective.hpp"
#include "koopgen/optim.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace koopgen {

struct TrainConfig {
  double lr_main = 0.005;
  double lr_gate = 0.001;
  double lr_gen = 0.005;
  double alpha = 0.1;
  int sobolev_k = 1;
  int epochs = 100;
  int batch_size = 128;
  int samples_per_traj = 30;
  int steps_per_sample = 0;  // latent steps between sampled instants; 0 = sampling stride
  /// Snapshot intervals between sampled instants. Each epoch draws a random
  /// window start per training trajectory. 0 instead spreads the window over
  /// the whole trajectory from its first snapshot.
  int sample_stride = 1;
  double warmup_ratio = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;
  bool normalize = true;
  std::uint64_t seed = 0;

  PartitionRates max_rates() const { return {lr_main, lr_gate, lr_gen}; }
  LossConfig loss() const { return {alpha, sobolev_k}; }
  AdamHyper adam() const { return {beta1, beta2, eps}; }

  void validate() const {
    detail::require(lr_main > 0.0 && lr_gate > 0.0 && lr_gen > 0.0, "learning rates must be positive");
    detail::require(warmup_ratio > 0.0 && warmup_ratio < 1.0, "warmup_ratio must lie in (0, 1)");
    detail::require(samples_per_traj >= 2, "samples_per_traj must be at least 2");
    detail::require(epochs >= 1, "epochs must be at least 1");
    detail::require(batch_size >= 1, "batch_size must be at least 1");
    detail::require(steps_per_sample >= 0, "steps_per_sample must be nonnegative");
    detail::require(sample_stride >= 0, "sample_stride must be nonnegative");
    detail::require(weight_decay >= 0.0 && clip_norm >= 0.0, "weight_decay and clip_norm must be nonnegative");
    detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0,
                    "invalid Adam hyperparameters");
    loss().validate();
  }

  static TrainConfig preset(SystemKind system, ModelKind model) {
    TrainConfig c;
    switch (system) {
      case SystemKind::Pendulum: c.alpha = 0.1, c.epochs = 100; break;
      case SystemKind::Lorenz63: c.alpha = 1.0, c.epochs = 200; break;
      case SystemKind::Lorenz96: c.alpha = 0.1, c.epochs = 500; break;
      case SystemKind::KS: c.alpha = 1.0, c.epochs = 500; break;
    }
    if (system == SystemKind::KS) c.lr_main = c.lr_gate = c.lr_gen = 0.001;
    if (model == ModelKind::Lran) {
      c.lr_main = c.lr_gate = c.lr_gen = 0.001;
      if (system == SystemKind::KS) c.alpha = 0.1;
    } else if (model == ModelKind::DeepKoopman) {
      const double lr = system == SystemKind::KS ? 1e-4 : 1e-3;
      c.lr_main = c.lr_gate = c.lr_gen = lr;
    }
    return c;
  }

  Json to_json() const {
    Json j;
    j["lr_main"] = lr_main;
    j["lr_gate"] = lr_gate;
    j["lr_gen"] = lr_gen;
    j["alpha"] = alpha;
    j["sobolev_k"] = sobolev_k;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["samples_per_traj"] = samples_per_traj;
    j["steps_per_sample"] = steps_per_sample;
    j["sample_stride"] = sample_stride;
    j["warmup_ratio"] = warmup_ratio;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["clip_norm"] = clip_norm;
    j["normalize"] = normalize;
    j["seed"] = seed;
    return j;
  }

  /// Overrides fields present in `j`; unknown keys are rejected.
  static TrainConfig from_json(const Json& j, TrainConfig c) {
    detail::require(j.is_object(), "training config must be a JSON object");
    for (const auto& [key, val] : j.items()) {
      try {
        if (key == "lr_main") c.lr_main = val.get<double>();
        else if (key == "lr_gate") c.lr_gate = val.get<double>();
        else if (key == "lr_gen") c.lr_gen = val.get<double>();
        else if (key == "alpha") c.alpha = val.get<double>();
        else if (key == "sobolev_k") c.sobolev_k = val.get<int>();
        else if (key == "epochs") c.epochs = val.get<int>();
        else if (key == "batch_size") c.batch_size = val.get<int>();
        else if (key == "samples_per_traj") c.samples_per_traj = val.get<int>();
        else if (key == "steps_per_sample") c.steps_per_sample = val.get<int>();
        else if (key == "sample_stride") c.sample_stride = val.get<int>();
        else if (key == "warmup_ratio") c.warmup_ratio = val.get<double>();
        else if (key == "weight_decay") c.weight_decay = val.get<double>();
        else if (key == "beta1") c.beta1 = val.get<double>();
        else if (key == "beta2") c.beta2 = val.get<double>();
        else if (key == "eps") c.eps = val.get<double>();
        else if (key == "clip_norm") c.clip_norm = val.get<double>();
        else if (key == "normalize") c.normalize = val.get<bool>();
        else if (key == "seed") c.seed = val.get<std::uint64_t>();
        else throw InputError("unknown training key '" + key + "'");
      } catch (const nlohmann::json::exception& e) {
        throw InputError("training key '" + key + "': " + e.what());
      }
    }
    return c;
  }
};

// ---------------------------------------------------------------------------

/// Index stride for n equally spaced samples out of T.
inline int subsample_stride(int T, int n) {
  detail::require(n >= 2, "need at least two samples");
  detail::require(n <= T, "cannot take " + std::to_string(n) + " samples from " + std::to_string(T) + " snapshots");
  return (T - 1) / (n - 1);
}

inline std::vector<int> subsample_indices(int T, int n) {
  const int stride = subsample_stride(T, n);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i * stride;
  return idx;
}

inline Matrix subsample_trajectory(const Matrix& states, int n) {
  const auto idx = subsample_indices(static_cast<int>(states.rows()), n);
  Matrix out(n, states.cols());
  for (int i = 0; i < n; ++i) out.row(i) = states.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

/// Snapshot stride between the n sampled instants of a window.
inline int window_stride(int T, int n, int sample_stride) {
  if (sample_stride == 0) return subsample_stride(T, n);
  detail::require(n >= 2, "need at least two samples");
  detail::require(static_cast<long>(n - 1) * sample_stride <= T - 1,
                  "a window of " + std::to_string(n) + " samples at stride " + std::to_string(sample_stride) +
                      " does not fit in " + std::to_string(T) + " snapshots");
  return sample_stride;
}

inline Matrix window_at(const Matrix& states, int n, int stride, int start) {
  detail::require(start >= 0 && start + (n - 1) * stride < states.rows(), "window out of range");
  Matrix out(n, states.cols());
  for (int i = 0; i < n; ++i) out.row(i) = states.row(start + i * stride);
  return out;
}

/// Per-channel mean and standard deviation over every snapshot of `trajs`.
inline Normalizer fit_normalizer(const std::vector<const Trajectory*>& trajs) {
  detail::require(!trajs.empty(), "cannot fit a normalizer on an empty split");
  const auto d = trajs.front()->states.cols();
  Vector sum = Vector::Zero(d), sq = Vector::Zero(d);
  double count = 0.0;
  for (const auto* t : trajs) {
    sum += t->states.colwise().sum().transpose();
    count += static_cast<double>(t->states.rows());
  }
  const Vector mean = sum / count;
  for (const auto* t : trajs) sq += (t->states.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  Vector scale = (sq / count).cwiseSqrt();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;
  }
  return {mean, scale};
}

/// Subsampled, normalized training windows.
inline std::vector<Matrix> make_windows(const std::vector<const Trajectory*>& trajs, int n, const Normalizer& norm) {
  std::vector<Matrix> out;
  out.reserve(trajs.size());
  for (const auto* t : trajs) out.push_back(norm.normalize(subsample_trajectory(t->states, n)));
  return out;
}

/// Normalized windows of n samples `stride` snapshots apart, starting at a
/// uniformly drawn offset per trajectory.
inline std::vector<Matrix> make_windows(const std::vector<const Trajectory*>& trajs, int n, int stride,
                                        const Normalizer& norm, Rng& rng) {
  std::vector<Matrix> out;
  out.reserve(trajs.size());
  for (const auto* t : trajs) {
    const auto starts = static_cast<std::uint64_t>(t->states.rows() - (n - 1) * stride);
    out.push_back(norm.normalize(window_at(t->states, n, stride, static_cast<int>(rng() % starts))));
  }
  return out;
}

/// Windows as the trainer builds them; `stream` selects the draw of random starts.
inline std::vector<Matrix> training_windows(const std::vector<const Trajectory*>& trajs, const TrainConfig& cfg,
                                            const Normalizer& norm, std::uint64_t stream) {
  if (cfg.sample_stride == 0) return make_windows(trajs, cfg.samples_per_traj, norm);
  Rng rng(child_seed(cfg.seed, stream));
  return make_windows(trajs, cfg.samples_per_traj, cfg.sample_stride, norm, rng);
}

/// Mean window loss over `windows`, evaluated in chunks of `batch` (no gradients).
inline double dataset_loss(const LatentModel& model, const std::vector<Matrix>& windows, int steps_between,
                           const LossConfig& cfg, int batch) {
  detail::require(!windows.empty(), "dataset_loss: no windows");
  double acc = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Matrix*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&windows[i]);
    Tape tape;
    acc += window_loss(tape, model, ptrs, steps_between, cfg).value().data[0] * static_cast<double>(ptrs.size());
  }
  return acc / static_cast<double>(windows.size());
}

/// Re-asserts the exact generator structure after parameter updates.
inline void check_generator_structure(const LatentModel& model) {
  const auto* kg = dynamic_cast<const KoopGenModel*>(&model);
  if (!kg) return;
  const GeneratorBank bank = kg->bank();
  for (std::size_t i = 0; i < bank.skew.size(); ++i) {
    if (!satisfies_tag(build_skew(bank.skew[i]))) {
      throw NumericalError("skew-adjoint generator " + std::to_string(i) + " lost its structure");
    }
  }
  for (std::size_t i = 0; i < bank.selfadj.size(); ++i) {
    if (!satisfies_tag(build_selfadj(bank.selfadj[i]))) {
      throw NumericalError("self-adjoint generator " + std::to_string(i) + " lost its structure");
    }
  }
}

inline constexpr std::uint64_t kTrainWindowStream = 5000;  // + epoch for epochs after the first
inline constexpr std::uint64_t kValWindowStream = 4000;

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr_main = 0.0, lr_gate = 0.0, lr_gen = 0.0;
  int clipped = 0;  // batches whose gradient norm exceeded clip_norm
  double wall_ms = 0.0;

  Json to_json() const {
    Json j;
    j["epoch"] = epoch;
    j["train_loss"] = train_loss;
    j["val_loss"] = val_loss;
    j["lr_main"] = lr_main;
    j["lr_gate"] = lr_gate;
    j["lr_gen"] = lr_gen;
    j["clipped"] = clipped;
    j["wall_ms"] = wall_ms;
    return j;
  }
};

struct TrainOptions {
  std::ostream* metrics = nullptr;  // JSON lines, one per epoch
  std::function<void(const EpochRecord&)> on_epoch;
  bool keep_optimizer = true;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint final;
  std::vector<EpochRecord> log;
  double initial_train_loss = 0.0;
  double initial_val_loss = 0.0;
  bool aborted = false;
  std::string diagnostic;
};

/// Trains a fresh model of `kind` on `ds`.
inline TrainResult train(const TrajectoryDataset& ds, ModelKind kind, ArchConfig arch, const TrainConfig& cfg,
                         const TrainOptions& opt = {}) {
  cfg.validate();
  detail::require(!ds.splits.train.empty() && !ds.splits.val.empty(), "dataset needs train and val splits");
  detail::require(arch.state_dim == ds.state_dim(), "architecture state_dim does not match the dataset");

  const int T = ds.snapshot_count();
  const int n = cfg.samples_per_traj;
  const int stride = window_stride(T, n, cfg.sample_stride);
  const int steps_between = cfg.steps_per_sample > 0 ? cfg.steps_per_sample : stride;
  detail::require(stride % steps_between == 0,
                  "steps_per_sample must divide the sampling stride " + std::to_string(stride));

  auto model = make_model(kind, arch, child_seed(cfg.seed, 1));
  const auto train_trajs = ds.subset(ds.splits.train);
  const auto val_trajs = ds.subset(ds.splits.val);
  if (cfg.normalize) model->set_normalizer(fit_normalizer(train_trajs));
  auto train_w = training_windows(train_trajs, cfg, model->normalizer(), kTrainWindowStream);
  const auto val_w = training_windows(val_trajs, cfg, model->normalizer(), kValWindowStream);
  const LossConfig lcfg = cfg.loss();

  auto snapshot = [&](double val_loss, int epoch, const OptimizerState* state) {
    Checkpoint c = make_checkpoint(*model);
    c.train_config = cfg.to_json();
    c.system = std::string(to_string(ds.system.kind()));
    c.dt_sample = ds.system.dt_sample;
    c.intervals_per_step = stride / steps_between;
    c.steps_between = steps_between;
    c.samples_per_traj = n;
    c.dataset_hash = dataset_hash(ds);
    c.val_loss = val_loss;
    c.epoch = epoch;
    if (state && opt.keep_optimizer) c.optimizer = *state;
    return c;
  };

  TrainResult res;
  res.initial_train_loss = dataset_loss(*model, train_w, steps_between, lcfg, cfg.batch_size);
  res.initial_val_loss = dataset_loss(*model, val_w, steps_between, lcfg, cfg.batch_size);
  if (!std::isfinite(res.initial_val_loss) || !std::isfinite(res.initial_train_loss)) {
    throw NumericalError("initial loss is not finite");
  }

  OptimizerState state = OptimizerState::for_params(model->params());
  res.best = snapshot(res.initial_val_loss, 0, nullptr);
  Checkpoint last_good = res.best;

  const int n_train = static_cast<int>(train_w.size());
  const int batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(batches) * cfg.epochs;
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  PartitionRates lr{};
  long global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs && !res.aborted; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.sample_stride > 0 && epoch > 1) {
      train_w = training_windows(train_trajs, cfg, model->normalizer(), kTrainWindowStream + static_cast<std::uint64_t>(epoch));
    }
    Rng rng(child_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (int i = n_train - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(i + 1))]);
    }
    double loss_sum = 0.0;
    int clipped = 0;
    for (int b = 0; b < batches; ++b, ++global_step) {
      std::vector<const Matrix*> batch;
      for (int i = b * cfg.batch_size; i < std::min(n_train, (b + 1) * cfg.batch_size); ++i) {
        batch.push_back(&train_w[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      }
      try {
        Tape tape;
        Var loss = window_loss(tape, *model, batch, steps_between, lcfg);
        const double lv = loss.value().data[0];
        if (!std::isfinite(lv)) throw NumericalError("non-finite training loss");
        tape.backward(loss);
        Gradients g = tape.parameter_gradients(model->params());
        const double gnorm = clip_global_norm(g, cfg.clip_norm);
        if (!std::isfinite(gnorm)) throw NumericalError("non-finite gradient norm");
        if (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) ++clipped;
        const auto maxr = cfg.max_rates();
        for (std::size_t p = 0; p < 3; ++p) {
          lr[p] = onecycle_lr(static_cast<double>(global_step), total_steps, maxr[p], cfg.warmup_ratio);
        }
        adamw_step(model->params(), g, state, lr, cfg.weight_decay, cfg.adam());
        loss_sum += lv * static_cast<double>(batch.size());
      } catch (const NumericalError& e) {
        res.aborted = true;
        res.diagnostic = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what();
        break;
      }
    }
    if (res.aborted) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / n_train;
    rec.lr_main = lr[0], rec.lr_gate = lr[1], rec.lr_gen = lr[2];
    rec.clipped = clipped;
    try {
      check_generator_structure(*model);
      rec.val_loss = dataset_loss(*model, val_w, steps_between, lcfg, cfg.batch_size);
      if (!std::isfinite(rec.val_loss)) throw NumericalError("non-finite validation loss");
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.diagnostic = "epoch " + std::to_string(epoch) + " validation: " + e.what();
      break;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(rec);
    if (opt.metrics) *opt.metrics << rec.to_json().dump() << '\n' << std::flush;
    if (opt.on_epoch) opt.on_epoch(rec);

    last_good = snapshot(rec.val_loss, epoch, &state);
    if (rec.val_loss < res.best.val_loss) res.best = last_good;
  }
  res.final = std::move(last_good);
  return res;
}

/// Validation loss of a loaded checkpoint on the val split (re-evaluation oracle).
inline double checkpoint_val_loss(const Checkpoint& c, const TrajectoryDataset& ds) {
  const auto model = instantiate(c);
  const TrainConfig cfg = TrainConfig::from_json(c.train_config, {});
  const auto val_w = training_windows(ds.subset(ds.splits.val), cfg, model->normalizer(), kValWindowStream);
  return dataset_loss(*model, val_w, c.steps_between, cfg.loss(), cfg.batch_size);
}

}  // namespace koopgen

#pragma once

// Initial-condition sampling, trajectory generation and the KGDS dataset file.

#include "koopgen/error.hpp"
#include "koopgen/kuramoto.hpp"
#include "koopgen/systems.hpp"
#include "koopgen/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace koopgen {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline constexpr int kMaxPendulumDraws = 10'000;

/// KS initial spectrum: random complex amplitudes on modes 1..3 and their conjugates.
inline ComplexVector ks_initial_spectrum(int n, Rng& rng) {
  ComplexVector v(n, Complex(0.0));
  for (int m = 1; m <= 3; ++m) {
    const Complex a(standard_normal(rng), standard_normal(rng));
    // Unnormalized DFT: a grid field of amplitude |a| on mode m carries n·a/2 per bin.
    v[m] = 0.5 * n * a;
    v[n - m] = std::conj(v[m]);
  }
  return v;
}

/// Draws one initial state for `system`.
inline Vector sample_initial(const SystemSpec& system, Rng& rng) {
  switch (system.kind()) {
    case SystemKind::Pendulum: {
      const auto& p = std::get<PendulumParams>(system.params);
      Vector x(2);
      for (int draw = 0; draw < kMaxPendulumDraws; ++draw) {
        x[0] = uniform(rng, -p.angle_bound, p.angle_bound);
        x[1] = uniform(rng, -p.velocity_bound, p.velocity_bound);
        if (pendulum_energy(x) < p.energy_bound) return x;
      }
      throw InputError("pendulum rejection sampler exhausted its draw budget");
    }
    case SystemKind::Lorenz63: {
      Vector x(3);
      x[0] = uniform(rng, -18.0, 18.0);
      x[1] = uniform(rng, -20.0, 20.0);
      x[2] = uniform(rng, 0.0, 50.0);
      return x;
    }
    case SystemKind::Lorenz96: {
      const int K = std::get<Lorenz96Params>(system.params).K;
      Vector x(K);
      for (int i = 0; i < K; ++i) x[i] = uniform(rng, -5.0, 5.0);
      return x;
    }
    case SystemKind::KS: {
      const int n = std::get<KsParams>(system.params).N;
      return ks_inverse(ks_initial_spectrum(n, rng));
    }
  }
  throw InputError("unknown system kind");
}

struct Trajectory {
  Matrix states;  // snapshot_count × state_dim
  double dt_sample = 0.0;
  std::uint64_t seed = 0;
};

/// Integrates one trajectory from a sampled initial condition. Returns false if
/// any state became non-finite.
inline bool simulate_trajectory(const SystemSpec& system, std::uint64_t seed, Trajectory& out) {
  Rng rng(seed);
  Vector x = sample_initial(system, rng);
  const int d = system.state_dim();
  const int substeps = system.substeps();
  out.states.resize(system.snapshot_count, d);
  out.dt_sample = system.dt_sample;
  out.seed = seed;

  const long burn_steps = std::lround(system.burn_in / system.integrator_dt);
  if (system.kind() == SystemKind::KS) {
    const auto& p = std::get<KsParams>(system.params);
    const Etdrk4Coeffs coeffs = etdrk4_precompute(p.L, p.N, system.integrator_dt);
    ComplexVector v = ks_forward(x);
    for (int j = 0; j < p.N; ++j) {
      if (is_dealiased(j, p.N)) v[j] = 0.0;
    }
    try {
      for (long s = 0; s < burn_steps; ++s) v = etdrk4_step(v, coeffs);
      for (int t = 0; t < system.snapshot_count; ++t) {
        if (t > 0) {
          for (int s = 0; s < substeps; ++s) v = etdrk4_step(v, coeffs);
        }
        out.states.row(t) = ks_inverse(v).transpose();
      }
    } catch (const NumericalError&) {
      return false;
    }
  } else {
    x = integrate_ode(system, x, burn_steps);
    for (int t = 0; t < system.snapshot_count; ++t) {
      if (t > 0) x = integrate_ode(system, x, substeps);
      if (!x.allFinite()) return false;
      out.states.row(t) = x.transpose();
    }
  }
  if (!out.states.allFinite()) return false;
  // Snapshots are kept at float32 precision so that file round trips are lossless.
  out.states = out.states.cast<float>().cast<double>();
  return true;
}

struct SplitFractions {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
};

struct DatasetSplits {
  std::vector<int> train, val, test;
};

struct TrajectoryDataset {
  SystemSpec system;
  std::vector<Trajectory> trajectories;
  DatasetSplits splits;
  std::uint64_t master_seed = 0;
  int resampled = 0;  // trajectories regenerated after a non-finite integration

  int state_dim() const { return system.state_dim(); }
  int snapshot_count() const { return system.snapshot_count; }

  std::vector<const Trajectory*> subset(const std::vector<int>& idx) const {
    std::vector<const Trajectory*> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(&trajectories.at(static_cast<std::size_t>(i)));
    return out;
  }
};

inline constexpr int kMaxResamples = 64;

/// Generates `n_traj` trajectories. Storage order is train, then val, then test,
/// so the split lists are contiguous index ranges; assignment to a split comes
/// from a seeded shuffle of generation indices.
inline TrajectoryDataset generate_dataset(const SystemSpec& system, int n_traj,
                                          std::uint64_t master_seed,
                                          SplitFractions fractions = {}) {
  system.validate();
  detail::require(n_traj >= 10, "at least 10 trajectories are required");
  detail::require(fractions.train > 0 && fractions.val >= 0 && fractions.test > 0 &&
                      std::abs(fractions.train + fractions.val + fractions.test - 1.0) < 1e-9,
                  "split fractions must be positive and sum to 1");

  TrajectoryDataset ds;
  ds.system = system;
  ds.master_seed = master_seed;

  std::vector<Trajectory> generated(static_cast<std::size_t>(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    std::uint64_t seed = child_seed(master_seed, static_cast<std::uint64_t>(i));
    int attempt = 0;
    while (!simulate_trajectory(system, seed, generated[static_cast<std::size_t>(i)])) {
      if (++attempt > kMaxResamples) throw NumericalError("trajectory generation keeps diverging");
      ++ds.resampled;
      seed = child_seed(seed, static_cast<std::uint64_t>(attempt));
    }
  }

  std::vector<int> order(static_cast<std::size_t>(n_traj));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(child_seed(master_seed, 0xffffffffULL));
  for (int i = n_traj - 1; i > 0; --i) {
    const auto j = static_cast<int>(shuffle_rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  const int n_train = static_cast<int>(std::lround(fractions.train * n_traj));
  const int n_val = static_cast<int>(std::lround(fractions.val * n_traj));
  detail::require(n_train + n_val < n_traj, "split fractions leave no test trajectories");

  ds.trajectories.reserve(static_cast<std::size_t>(n_traj));
  for (int i : order) ds.trajectories.push_back(std::move(generated[static_cast<std::size_t>(i)]));
  for (int i = 0; i < n_traj; ++i) {
    if (i < n_train) ds.splits.train.push_back(i);
    else if (i < n_train + n_val) ds.splits.val.push_back(i);
    else ds.splits.test.push_back(i);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// KGDS file format (little endian):
//   "KGDS" | u16 version | u8 kind | u32 state_dim | u32 snapshot_count | u32 n_traj
//   | f64 dt_sample | u64 master_seed | u32 n_train | u32 n_val | u32 n_test
//   | f64 integrator_dt | f64 burn_in | f64 param[4] | u32 resampled | u64 seed[n_traj]
//   | f32 states[n_traj][snapshot_count][state_dim]
// Trajectories are stored in split order: train, val, test.

inline constexpr char kDatasetMagic[4] = {'K', 'G', 'D', 'S'};
inline constexpr std::uint16_t kDatasetVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::string& bytes() const { return bytes_; }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("file is truncated");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > bytes_.size() - pos_) throw FormatError("file is truncated");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

inline std::array<double, 4> pack_params(const SystemSpec& s) {
  std::array<double, 4> p{};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, PendulumParams>) p = {v.angle_bound, v.velocity_bound, v.energy_bound, 0.0};
        else if constexpr (std::is_same_v<T, Lorenz63Params>) p = {v.sigma, v.rho, v.beta, 0.0};
        else if constexpr (std::is_same_v<T, Lorenz96Params>) p = {static_cast<double>(v.K), v.F, 0.0, 0.0};
        else p = {v.L, static_cast<double>(v.N), 0.0, 0.0};
      },
      s.params);
  return p;
}

inline SystemParams unpack_params(SystemKind kind, const std::array<double, 4>& p) {
  switch (kind) {
    case SystemKind::Pendulum: return PendulumParams{p[0], p[1], p[2]};
    case SystemKind::Lorenz63: return Lorenz63Params{p[0], p[1], p[2]};
    case SystemKind::Lorenz96: return Lorenz96Params{static_cast<int>(p[0]), p[1]};
    case SystemKind::KS: return KsParams{p[0], static_cast<int>(p[1])};
  }
  throw FormatError("unknown system kind in dataset header");
}

inline std::string encode_dataset_header(const TrajectoryDataset& ds) {
  ByteWriter w;
  w.put_bytes(kDatasetMagic, 4);
  w.put(kDatasetVersion);
  w.put(static_cast<std::uint8_t>(ds.system.kind()));
  w.put(static_cast<std::uint32_t>(ds.state_dim()));
  w.put(static_cast<std::uint32_t>(ds.snapshot_count()));
  w.put(static_cast<std::uint32_t>(ds.trajectories.size()));
  w.put(ds.system.dt_sample);
  w.put(ds.master_seed);
  w.put(static_cast<std::uint32_t>(ds.splits.train.size()));
  w.put(static_cast<std::uint32_t>(ds.splits.val.size()));
  w.put(static_cast<std::uint32_t>(ds.splits.test.size()));
  w.put(ds.system.integrator_dt);
  w.put(ds.system.burn_in);
  for (double v : pack_params(ds.system)) w.put(v);
  w.put(static_cast<std::uint32_t>(ds.resampled));
  for (const auto& t : ds.trajectories) w.put(t.seed);
  return w.bytes();
}

}  // namespace detail

/// Hash of the binary header; checkpoints record it to detect dataset mismatches.
inline std::uint64_t dataset_hash(const TrajectoryDataset& ds) {
  const std::string h = detail::encode_dataset_header(ds);
  return fnv1a(h.data(), h.size());
}

inline std::string serialize_dataset(const TrajectoryDataset& ds) {
  detail::ByteWriter w;
  w.bytes() = detail::encode_dataset_header(ds);
  const int d = ds.state_dim();
  const int T = ds.snapshot_count();
  std::vector<float> row(static_cast<std::size_t>(T) * static_cast<std::size_t>(d));
  for (const auto& traj : ds.trajectories) {
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < d; ++c) {
        row[static_cast<std::size_t>(t * d + c)] = static_cast<float>(traj.states(t, c));
      }
    }
    w.put_bytes(row.data(), row.size() * sizeof(float));
  }
  return std::move(w.bytes());
}

inline TrajectoryDataset deserialize_dataset(const std::string& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("not a KGDS dataset (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kDatasetVersion) throw FormatError("unsupported KGDS version " + std::to_string(version));
  const auto kind_raw = r.get<std::uint8_t>();
  if (kind_raw > 3) throw FormatError("unknown system kind in dataset header");
  const auto kind = static_cast<SystemKind>(kind_raw);
  const auto state_dim = r.get<std::uint32_t>();
  const auto snapshots = r.get<std::uint32_t>();
  const auto n_traj = r.get<std::uint32_t>();

  TrajectoryDataset ds;
  ds.system.dt_sample = r.get<double>();
  ds.master_seed = r.get<std::uint64_t>();
  const auto n_train = r.get<std::uint32_t>();
  const auto n_val = r.get<std::uint32_t>();
  const auto n_test = r.get<std::uint32_t>();
  ds.system.integrator_dt = r.get<double>();
  ds.system.burn_in = r.get<double>();
  std::array<double, 4> p{};
  for (auto& v : p) v = r.get<double>();
  ds.resampled = static_cast<int>(r.get<std::uint32_t>());
  ds.system.params = detail::unpack_params(kind, p);
  ds.system.snapshot_count = static_cast<int>(snapshots);
  if (n_train + n_val + n_test != n_traj) throw FormatError("split boundaries do not cover the dataset");
  if (static_cast<std::uint32_t>(ds.system.state_dim()) != state_dim) {
    throw FormatError("state_dim does not match system parameters");
  }

  const std::uint64_t payload = static_cast<std::uint64_t>(n_traj) *
                                (8u + static_cast<std::uint64_t>(snapshots) * state_dim * sizeof(float));
  if (payload > bytes.size() - r.position()) throw FormatError("file is truncated");

  std::vector<std::uint64_t> seeds(n_traj);
  for (auto& s : seeds) s = r.get<std::uint64_t>();

  std::vector<float> row(static_cast<std::size_t>(snapshots) * state_dim);
  ds.trajectories.resize(n_traj);
  for (std::uint32_t i = 0; i < n_traj; ++i) {
    r.get_bytes(row.data(), row.size() * sizeof(float));
    auto& t = ds.trajectories[i];
    t.seed = seeds[i];
    t.dt_sample = ds.system.dt_sample;
    t.states.resize(snapshots, state_dim);
    for (std::uint32_t s = 0; s < snapshots; ++s) {
      for (std::uint32_t c = 0; c < state_dim; ++c) t.states(s, c) = row[s * state_dim + c];
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after dataset payload");
  for (int i = 0; i < static_cast<int>(n_traj); ++i) {
    if (i < static_cast<int>(n_train)) ds.splits.train.push_back(i);
    else if (i < static_cast<int>(n_train + n_val)) ds.splits.val.push_back(i);
    else ds.splits.test.push_back(i);
  }
  return ds;
}

/// Human-readable mirror of the header.
inline nlohmann::ordered_json dataset_sidecar(const TrajectoryDataset& ds) {
  nlohmann::ordered_json j;
  j["format"] = "KGDS";
  j["version"] = kDatasetVersion;
  j["system"] = std::string(to_string(ds.system.kind()));
  j["state_dim"] = ds.state_dim();
  j["snapshot_count"] = ds.snapshot_count();
  j["n_traj"] = ds.trajectories.size();
  j["dt_sample"] = ds.system.dt_sample;
  j["integrator_dt"] = ds.system.integrator_dt;
  j["burn_in"] = ds.system.burn_in;
  j["master_seed"] = ds.master_seed;
  j["splits"] = {{"train", ds.splits.train.size()},
                 {"val", ds.splits.val.size()},
                 {"test", ds.splits.test.size()}};
  const auto p = detail::pack_params(ds.system);
  j["params"] = p;
  j["resampled"] = ds.resampled;
  j["payload"] = "float32 little-endian [n_traj, snapshot_count, state_dim]";
  j["header_hash"] = dataset_hash(ds);
  return j;
}

inline void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, serialize_dataset(ds));
  detail::write_file(path.string() + ".json", dataset_sidecar(ds).dump(2) + "\n");
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(detail::read_file(path));
}

}  // namespace koopgen

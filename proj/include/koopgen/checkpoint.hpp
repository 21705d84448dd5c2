#pragma once

// KGCK checkpoint file.
//
//   "KGCK" | u16 version | u8 model kind | string metadata (JSON)
//   | u32 n_params | per param: string name, u8 partition, u32 ndim, u32 dims[ndim], f64 data[]
//   | u32 state_dim | f64 norm_mean[state_dim] | f64 norm_scale[state_dim]
//   | u8 has_optimizer | [i64 step | f64 m[] | f64 v[] per param]
//
// Strings are u32 length + bytes. Doubles are stored bit-exactly; metadata is
// dumped with shortest round-trip formatting so save→load→save is byte-stable.

#include "koopgen/dataset.hpp"
#include "koopgen/models.hpp"
#include "koopgen/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

namespace koopgen {

inline constexpr char kCheckpointMagic[4] = {'K', 'G', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

using Json = nlohmann::ordered_json;

inline Json arch_to_json(const ArchConfig& a) {
  Json j;
  j["state_dim"] = a.state_dim;
  j["latent_dim"] = a.latent_dim;
  j["main_depth"] = a.main_depth;
  j["main_width"] = a.main_width;
  j["gate_depth"] = a.gate_depth;
  j["gate_width"] = a.gate_width;
  j["n_skew"] = a.n_skew;
  j["n_selfadj"] = a.n_selfadj;
  j["n_complex_eig"] = a.n_complex_eig;
  j["n_real_eig"] = a.n_real_eig;
  j["dt"] = a.dt;
  j["generator_init_scale"] = a.generator_init_scale;
  j["activation"] = std::string(net::to_string(a.activation));
  return j;
}

/// Overrides fields of `base` that are present in `j`; unknown keys are rejected.
inline ArchConfig arch_from_json(const Json& j, ArchConfig base = {}) {
  detail::require(j.is_object(), "architecture config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "state_dim") base.state_dim = val.get<int>();
      else if (key == "latent_dim") base.latent_dim = val.get<int>();
      else if (key == "main_depth") base.main_depth = val.get<int>();
      else if (key == "main_width") base.main_width = val.get<int>();
      else if (key == "gate_depth") base.gate_depth = val.get<int>();
      else if (key == "gate_width") base.gate_width = val.get<int>();
      else if (key == "n_skew") base.n_skew = val.get<int>();
      else if (key == "n_selfadj") base.n_selfadj = val.get<int>();
      else if (key == "n_complex_eig") base.n_complex_eig = val.get<int>();
      else if (key == "n_real_eig") base.n_real_eig = val.get<int>();
      else if (key == "dt") base.dt = val.get<double>();
      else if (key == "generator_init_scale") base.generator_init_scale = val.get<double>();
      else if (key == "activation") base.activation = net::parse_activation(val.get<std::string>());
      else throw InputError("unknown architecture key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InputError("architecture key '" + key + "': " + e.what());
    }
  }
  return base;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Checkpoint {
  ModelKind model_kind = ModelKind::KoopGen;
  ArchConfig arch;
  ParamStore params;
  Normalizer normalizer;
  Json train_config = Json::object();
  std::string system;
  double dt_sample = 0.0;
  int intervals_per_step = 1;  // dataset sampling intervals per model step
  int steps_between = 1;       // latent steps between subsampled training instants
  int samples_per_traj = 30;
  std::uint64_t dataset_hash = 0;
  double val_loss = 0.0;
  int epoch = 0;
  std::optional<OptimizerState> optimizer;

  Json metadata() const {
    Json j;
    j["arch"] = arch_to_json(arch);
    j["train_config"] = train_config;
    j["system"] = system;
    j["dt_sample"] = dt_sample;
    j["intervals_per_step"] = intervals_per_step;
    j["steps_between"] = steps_between;
    j["samples_per_traj"] = samples_per_traj;
    j["dataset_hash"] = hex64(dataset_hash);
    j["val_loss"] = val_loss;
    j["epoch"] = epoch;
    return j;
  }
};

inline Checkpoint make_checkpoint(const LatentModel& model) {
  Checkpoint c;
  c.model_kind = model.kind();
  c.arch = model.arch();
  c.params = model.params();
  c.normalizer = model.normalizer();
  return c;
}

/// Rebuilds a model from the architecture and parameter values in `c`.
inline std::unique_ptr<LatentModel> instantiate(const Checkpoint& c) {
  auto model = make_model(c.model_kind, c.arch, 0);
  model->assign_parameters(c.params);
  model->set_normalizer(c.normalizer);
  return model;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(c.model_kind));
  w.put_string(c.metadata().dump());
  w.put(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    w.put_string(p.name);
    w.put(static_cast<std::uint8_t>(p.partition));
    w.put(static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes(p.value.data.data(), p.value.data.size() * sizeof(double));
  }
  const auto d = static_cast<std::uint32_t>(c.normalizer.mean.size());
  detail::require(c.normalizer.scale.size() == static_cast<Eigen::Index>(d), "normalizer sizes differ");
  w.put(d);
  w.put_bytes(c.normalizer.mean.data(), d * sizeof(double));
  w.put_bytes(c.normalizer.scale.data(), d * sizeof(double));
  w.put(static_cast<std::uint8_t>(c.optimizer.has_value()));
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    detail::require(o.m.size() == c.params.size() && o.v.size() == c.params.size(),
                    "optimizer state does not match parameters");
    w.put(o.step);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      detail::require(o.m[i].size() == c.params[i].value.size() && o.v[i].size() == c.params[i].value.size(),
                      "optimizer state shape mismatch");
      w.put_bytes(o.m[i].data.data(), o.m[i].size() * sizeof(double));
      w.put_bytes(o.v[i].data.data(), o.v[i].size() * sizeof(double));
    }
  }
  return std::move(w.bytes());
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto kind = r.get<std::uint8_t>();
  if (kind > 2) throw FormatError("unknown model kind " + std::to_string(kind));
  c.model_kind = static_cast<ModelKind>(kind);

  Json meta;
  try {
    meta = Json::parse(r.get_string());
    c.arch = arch_from_json(meta.at("arch"));
    c.train_config = meta.at("train_config");
    c.system = meta.at("system").get<std::string>();
    c.dt_sample = meta.at("dt_sample").get<double>();
    c.intervals_per_step = meta.at("intervals_per_step").get<int>();
    c.steps_between = meta.at("steps_between").get<int>();
    c.samples_per_traj = meta.at("samples_per_traj").get<int>();
    c.dataset_hash = std::stoull(meta.at("dataset_hash").get<std::string>(), nullptr, 16);
    c.val_loss = meta.at("val_loss").get<double>();
    c.epoch = meta.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }

  const auto n_params = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.get_string();
    const auto part = r.get<std::uint8_t>();
    if (part > 2) throw FormatError("parameter '" + name + "' has an unknown partition");
    const auto ndim = r.get<std::uint32_t>();
    if (ndim == 0 || ndim > 3) throw FormatError("parameter '" + name + "' has invalid rank");
    std::vector<int> shape;
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      const auto d = r.get<std::uint32_t>();
      if (d == 0 || d > (1u << 24)) throw FormatError("parameter '" + name + "' has invalid shape");
      shape.push_back(static_cast<int>(d));
      count *= d;
    }
    if (count * sizeof(double) > bytes.size()) throw FormatError("file is truncated");
    Tensor t(std::move(shape));
    r.get_bytes(t.data.data(), count * sizeof(double));
    try {
      c.params.add(std::move(name), static_cast<Partition>(part), std::move(t));
    } catch (const InputError& e) {
      throw FormatError(e.what());
    }
  }
  const auto d = r.get<std::uint32_t>();
  if (d * sizeof(double) * 2 > bytes.size()) throw FormatError("file is truncated");
  c.normalizer.mean.resize(d);
  c.normalizer.scale.resize(d);
  r.get_bytes(c.normalizer.mean.data(), d * sizeof(double));
  r.get_bytes(c.normalizer.scale.data(), d * sizeof(double));
  const auto has_opt = r.get<std::uint8_t>();
  if (has_opt > 1) throw FormatError("invalid optimizer flag");
  if (has_opt) {
    OptimizerState o = OptimizerState::for_params(c.params);
    o.step = r.get<std::int64_t>();
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      r.get_bytes(o.m[i].data.data(), o.m[i].size() * sizeof(double));
      r.get_bytes(o.v[i].data.data(), o.v[i].size() * sizeof(double));
    }
    c.optimizer = std::move(o);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace koopgen

// koopgen command-line tool: generate, train, evaluate, inspect.

#include "koopgen/koopgen.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace koopgen;

namespace {

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

Vector parse_vector(const std::vector<double>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory '" + dir + "': " + ec.message());
}

struct GenerateArgs {
  std::string system = "pendulum";
  int n = 1000;
  std::uint64_t seed = 0;
  std::string out;
  int snapshots = 0;
  double dt_sample = 0.0;
  std::string config;
};

/// Applies optional overrides: integrator_dt, dt_sample, snapshot_count, burn_in, split.
SplitFractions apply_system_config(const Json& j, SystemSpec& spec) {
  detail::require(j.is_object(), "system config must be a JSON object");
  SplitFractions f;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "integrator_dt") spec.integrator_dt = val.get<double>();
      else if (key == "dt_sample") spec.dt_sample = val.get<double>();
      else if (key == "snapshot_count") spec.snapshot_count = val.get<int>();
      else if (key == "burn_in") spec.burn_in = val.get<double>();
      else if (key == "split") {
        f.train = val.at("train").get<double>();
        f.val = val.at("val").get<double>();
        f.test = val.at("test").get<double>();
      } else if (key != "system") {
        throw InputError("unknown generation key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError("generation key '" + key + "': " + e.what());
    }
  }
  return f;
}

int run_generate(const GenerateArgs& a) {
  SystemSpec spec = SystemSpec::preset(parse_system_kind(a.system));
  SplitFractions fractions;
  if (!a.config.empty()) fractions = apply_system_config(read_json_file(a.config), spec);
  if (a.snapshots > 0) spec.snapshot_count = a.snapshots;
  if (a.dt_sample > 0.0) spec.dt_sample = a.dt_sample;
  const TrajectoryDataset ds = generate_dataset(spec, a.n, a.seed, fractions);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.trajectories.size() << " " << to_string(spec.kind()) << " trajectories ("
            << ds.splits.train.size() << "/" << ds.splits.val.size() << "/" << ds.splits.test.size()
            << " train/val/test, " << ds.resampled << " resampled) to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, model = "koopgen", config, out;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const TrajectoryDataset ds = load_dataset(a.data);
  const ModelKind kind = parse_model_kind(a.model);
  ArchConfig arch = ArchConfig::preset(ds.system.kind(), kind);
  TrainConfig cfg = TrainConfig::preset(ds.system.kind(), kind);
  if (!a.config.empty()) {
    const Json j = read_json_file(a.config);
    detail::require(j.is_object(), "config must be a JSON object");
    for (const auto& [key, val] : j.items()) {
      if (key == "arch") arch = arch_from_json(val, arch);
      else if (key == "train") cfg = TrainConfig::from_json(val, cfg);
      else throw InputError("unknown config section '" + key + "' (expected 'arch' or 'train')");
    }
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;

  const std::string metrics_path = a.out + ".metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw InputError("cannot write '" + metrics_path + "'");
  TrainOptions opt;
  opt.metrics = &metrics;
  if (!a.quiet) {
    opt.on_epoch = [&](const EpochRecord& r) {
      std::cout << "epoch " << r.epoch << "/" << cfg.epochs << "  train " << r.train_loss << "  val " << r.val_loss;
      if (r.clipped) std::cout << "  (clipped " << r.clipped << " batches)";
      std::cout << "\n" << std::flush;
    };
  }
  const TrainResult res = train(ds, kind, arch, cfg, opt);
  save_checkpoint(res.best, a.out);
  save_checkpoint(res.final, a.out + ".final");
  std::cout << "best val loss " << res.best.val_loss << " at epoch " << res.best.epoch << " -> " << a.out << "\n";
  if (res.aborted) {
    std::cerr << "error: training aborted (" << res.diagnostic << "); last good checkpoint kept in " << a.out
              << ".final\n";
    return 3;
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, out;
  int horizon = 50;
  int fields = 3;
};

int run_evaluate(const EvalArgs& a) {
  const Checkpoint c = load_checkpoint(a.ckpt);
  const TrajectoryDataset ds = load_dataset(a.data);
  const std::uint64_t hash = dataset_hash(ds);
  if (hash != c.dataset_hash) {
    std::cerr << "warning: dataset header hash " << hex64(hash) << " differs from the checkpoint's "
              << hex64(c.dataset_hash) << "\n";
  }
  detail::require(ds.state_dim() == c.arch.state_dim, "dataset state dimension does not match the model");
  const auto model = instantiate(c);
  const auto test = ds.subset(ds.splits.test);
  detail::require(!test.empty(), "dataset has no test split");
  ensure_dir(a.out);

  const auto predict = model_predictor(*model);
  const auto curve = nrmse_curve(predict, test, a.horizon, c.intervals_per_step);
  write_csv(fs::path(a.out) / "nrmse.csv", nrmse_table(curve));
  const int nf = std::min<int>(a.fields, static_cast<int>(test.size()));
  for (int i = 0; i < nf; ++i) {
    write_csv(fs::path(a.out) / ("error_field_" + std::to_string(i) + ".csv"),
              error_field_table(error_field(predict, *test[static_cast<std::size_t>(i)], a.horizon, c.intervals_per_step)));
  }
  Json report;
  report["model"] = std::string(to_string(c.model_kind));
  report["system"] = c.system;
  report["checkpoint_epoch"] = c.epoch;
  report["horizon"] = a.horizon;
  report["test_trajectories"] = test.size();
  report["nrmse_definition"] =
      "per step: sqrt(sum_i |xhat_i - x_i|^2) / sqrt(sum_i |x_i|^2) over test trajectories i";
  report["mean_nrmse"] = mean_of(curve, 1);
  report["final_nrmse"] = curve.back();
  report["dataset_hash"] = hex64(hash);
  report["dataset_hash_matches"] = hash == c.dataset_hash;
  detail::write_file(fs::path(a.out) / "report.json", report.dump(2) + "\n");
  std::cout << "mean NRMSE over steps 1.." << a.horizon << ": " << mean_of(curve, 1) << "\n";
  return 0;
}

struct InspectArgs {
  std::string ckpt, out;
  std::vector<double> state;
  std::vector<int> axes{0, 1};
  std::vector<double> range1{-3.1, 3.1}, range2{-2.0, 2.0};
  int n1 = 50, n2 = 50;
  std::vector<double> base;
};

int run_spectrum(const InspectArgs& a) {
  const Checkpoint c = load_checkpoint(a.ckpt);
  const auto model = instantiate(c);
  const Vector x = a.state.empty() ? model->normalizer().mean : parse_vector(a.state);
  const Vector z = encode(*model, x);
  const auto spectra = inspect_spectrum(*model, z);
  ensure_dir(a.out);
  write_csv(fs::path(a.out) / "spectrum.csv", spectrum_table(spectra));
  for (const auto& s : spectra) {
    double dev = 0.0;
    for (const auto& l : s.eigenvalues) dev = std::max(dev, std::abs(std::abs(l) - 1.0));
    std::cout << s.id << ": " << s.eigenvalues.size() << " eigenvalues, max ||l|-1| = " << dev << "\n";
  }
  return 0;
}

int run_grid(const InspectArgs& a) {
  const Checkpoint c = load_checkpoint(a.ckpt);
  const auto model = instantiate(c);
  detail::require(a.axes.size() == 2 && a.range1.size() == 2 && a.range2.size() == 2,
                  "--axes, --range1 and --range2 take two values each");
  GridSpec g;
  g.axis1 = a.axes[0], g.axis2 = a.axes[1];
  g.lo1 = a.range1[0], g.hi1 = a.range1[1];
  g.lo2 = a.range2[0], g.hi2 = a.range2[1];
  g.n1 = a.n1, g.n2 = a.n2;
  if (!a.base.empty()) g.base = parse_vector(a.base);
  ensure_dir(a.out);
  const GridTable t = inspect_grid(*model, g);
  write_csv(fs::path(a.out) / "grid.csv", table_from(t.header, t.rows));
  if (model->kind() != ModelKind::DeepKoopman) {
    const GridTable e = inspect_grid_eigen(*model, g);
    write_csv(fs::path(a.out) / "grid_eig.csv", table_from(e.header, e.rows));
  }
  std::cout << "wrote " << t.rows.rows() << " grid cells to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman generator learning: data generation, training, evaluation and inspection"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "simulate a trajectory dataset");
  gen->add_option("--system", ga.system, "pendulum | lorenz63 | lorenz96 | ks")->required();
  gen->add_option("--n-traj", ga.n, "number of trajectories")->required();
  gen->add_option("--seed", ga.seed, "master seed");
  gen->add_option("--out", ga.out, "output dataset path")->required();
  gen->add_option("--snapshots", ga.snapshots, "override snapshots per trajectory");
  gen->add_option("--dt-sample", ga.dt_sample, "override sampling interval");
  gen->add_option("--config", ga.config, "JSON overrides: integrator_dt, dt_sample, snapshot_count, burn_in, split");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", ta.data, "dataset path")->required();
  tr->add_option("--model", ta.model, "koopgen | lran | deepkoopman");
  tr->add_option("--config", ta.config, "JSON with optional 'arch' and 'train' sections");
  tr->add_option("--out", ta.out, "checkpoint path (best); final goes to PATH.final")->required();
  tr->add_option("--epochs", ta.epochs, "override epochs");
  tr->add_option("--seed", ta.seed, "override training seed");
  tr->add_flag("--quiet", ta.quiet, "no per-epoch output");

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "rollout metrics on the test split");
  ev->add_option("--ckpt", ea.ckpt, "checkpoint path")->required();
  ev->add_option("--data", ea.data, "dataset path")->required();
  ev->add_option("--horizon", ea.horizon, "rollout steps");
  ev->add_option("--out", ea.out, "output directory")->required();
  ev->add_option("--fields", ea.fields, "number of per-trajectory error fields to write");

  InspectArgs ia;
  auto* in = app.add_subcommand("inspect", "operator spectra and latent grids");
  in->add_option("--ckpt", ia.ckpt, "checkpoint path")->required();
  in->require_subcommand(1);
  auto* sp = in->add_subcommand("spectrum", "eigenvalues of K(z) and the one-hot operators");
  sp->add_option("--state", ia.state, "state at which K(z) is evaluated (default: data mean)")->delimiter(',');
  sp->add_option("--out", ia.out, "output directory")->required();
  auto* gr = in->add_subcommand("grid", "latent magnitude/phase and gate weights over a 2-D state grid");
  gr->add_option("--axes", ia.axes, "two state coordinates")->delimiter(',');
  gr->add_option("--range1", ia.range1, "lo,hi for the first axis")->delimiter(',');
  gr->add_option("--range2", ia.range2, "lo,hi for the second axis")->delimiter(',');
  gr->add_option("--n1", ia.n1, "cells along the first axis");
  gr->add_option("--n2", ia.n2, "cells along the second axis");
  gr->add_option("--base", ia.base, "values of the other coordinates")->delimiter(',');
  gr->add_option("--out", ia.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_generate(ga);
    if (tr->parsed()) return run_train(ta);
    if (ev->parsed()) return run_evaluate(ea);
    if (sp->parsed()) return run_spectrum(ia);
    if (gr->parsed()) return run_grid(ia);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

#include "koopgen/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

using namespace koopgen;

namespace {

SystemSpec short_pendulum(int snapshots = 11) {
  SystemSpec s = SystemSpec::pendulum();
  s.snapshot_count = snapshots;
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("koopgen_test_" + name);
}

}  // namespace

TEST(Dataset, SplitCountsAtFullScale) {
  const auto ds = generate_dataset(short_pendulum(2), 20000, 1);
  EXPECT_EQ(ds.splits.train.size(), 14000u);
  EXPECT_EQ(ds.splits.val.size(), 2000u);
  EXPECT_EQ(ds.splits.test.size(), 4000u);
}

TEST(Dataset, SplitsDisjointAndExhaustive) {
  const auto ds = generate_dataset(short_pendulum(), 37, 2);
  std::set<int> all;
  for (const auto* s : {&ds.splits.train, &ds.splits.val, &ds.splits.test}) {
    for (int i : *s) EXPECT_TRUE(all.insert(i).second);
  }
  EXPECT_EQ(all.size(), 37u);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), 36);
}

TEST(Dataset, CustomFractions) {
  const auto ds = generate_dataset(short_pendulum(), 100, 3, SplitFractions{0.5, 0.25, 0.25});
  EXPECT_EQ(ds.splits.train.size(), 50u);
  EXPECT_EQ(ds.splits.val.size(), 25u);
  EXPECT_EQ(ds.splits.test.size(), 25u);
  EXPECT_THROW(generate_dataset(short_pendulum(), 100, 3, SplitFractions{0.5, 0.5, 0.5}), InputError);
}

TEST(Dataset, RequiresTenTrajectories) { EXPECT_THROW(generate_dataset(short_pendulum(), 9, 0), InputError); }

TEST(Dataset, BitIdenticalRegeneration) {
  const auto a = generate_dataset(SystemSpec::lorenz63(), 12, 77);
  const auto b = generate_dataset(SystemSpec::lorenz63(), 12, 77);
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
  const auto c = generate_dataset(SystemSpec::lorenz63(), 12, 78);
  EXPECT_NE(serialize_dataset(a), serialize_dataset(c));
}

TEST(Dataset, ShapesMatchPresets) {
  const auto l63 = generate_dataset(SystemSpec::lorenz63(), 10, 4);
  for (const auto& t : l63.trajectories) {
    EXPECT_EQ(t.states.rows(), 401);
    EXPECT_EQ(t.states.cols(), 3);
    EXPECT_TRUE(t.states.allFinite());
  }
  const auto pend = generate_dataset(SystemSpec::pendulum(), 10, 4);
  EXPECT_EQ(pend.trajectories.front().states.rows(), 301);
}

TEST(Dataset, PendulumSnapshotsBelowEnergyBound) {
  const auto ds = generate_dataset(SystemSpec::pendulum(), 200, 5);
  for (const auto& t : ds.trajectories) {
    for (Eigen::Index s = 0; s < t.states.rows(); ++s) {
      ASSERT_LT(pendulum_energy(t.states.row(s).transpose()), 0.99);
    }
  }
}

TEST(Dataset, Lorenz63SettlesOntoAttractor) {
  const auto ds = generate_dataset(SystemSpec::lorenz63(), 10, 6);
  for (const auto& t : ds.trajectories) {
    // After burn-in the attractor occupies |x|,|y| < 30 and 0 < z < 55.
    EXPECT_LT(t.states.col(0).cwiseAbs().maxCoeff(), 30.0);
    EXPECT_LT(t.states.col(1).cwiseAbs().maxCoeff(), 30.0);
    EXPECT_GT(t.states.col(2).minCoeff(), 0.0);
    EXPECT_LT(t.states.col(2).maxCoeff(), 55.0);
  }
}

TEST(Dataset, TrajectoryFollowsIntegrator) {
  const SystemSpec s = short_pendulum(5);
  Trajectory t;
  ASSERT_TRUE(simulate_trajectory(s, 1234, t));
  Rng rng(1234);
  Vector x = sample_initial(s, rng);
  for (int i = 0; i < 5; ++i) {
    if (i > 0) x = integrate_ode(s, x, s.substeps());
    for (int c = 0; c < 2; ++c) EXPECT_EQ(t.states(i, c), static_cast<double>(static_cast<float>(x[c])));
  }
}

TEST(Dataset, KsTrajectoriesAreFiniteAndDealiased) {
  SystemSpec s = SystemSpec::ks();
  s.snapshot_count = 20;
  const auto ds = generate_dataset(s, 10, 8);
  for (const auto& t : ds.trajectories) {
    EXPECT_TRUE(t.states.allFinite());
    EXPECT_EQ(t.states.cols(), 128);
    const ComplexVector v = ks_forward(t.states.row(19).transpose());
    double high = 0.0, low = 0.0;
    for (int j = 0; j < 128; ++j) (is_dealiased(j, 128) ? high : low) = std::max(is_dealiased(j, 128) ? high : low, std::abs(v[j]));
    EXPECT_LT(high, 1e-4 * low);  // float32 storage leaves only rounding noise above N/3
  }
}

TEST(Dataset, DivergentIntegrationIsRejected) {
  SystemSpec s = SystemSpec::lorenz63();
  s.integrator_dt = 0.5;  // far outside RK4 stability on the attractor
  s.dt_sample = 0.5;
  s.snapshot_count = 5;
  EXPECT_THROW(generate_dataset(s, 10, 1), NumericalError);
}

TEST(DatasetFile, RoundTripIsLossless) {
  const auto ds = generate_dataset(SystemSpec::lorenz96(), 10, 9);
  const std::string bytes = serialize_dataset(ds);
  const auto back = deserialize_dataset(bytes);
  EXPECT_EQ(serialize_dataset(back), bytes);
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i].states, ds.trajectories[i].states);
    EXPECT_EQ(back.trajectories[i].seed, ds.trajectories[i].seed);
  }
  EXPECT_EQ(back.splits.train, ds.splits.train);
  EXPECT_EQ(back.splits.test, ds.splits.test);
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
  EXPECT_EQ(back.system.kind(), SystemKind::Lorenz96);
  EXPECT_EQ(back.system.state_dim(), 36);
}

TEST(DatasetFile, HeaderLayout) {
  const auto ds = generate_dataset(short_pendulum(), 10, 10);
  const std::string b = serialize_dataset(ds);
  EXPECT_EQ(b.substr(0, 4), "KGDS");
  std::uint16_t version;
  std::memcpy(&version, b.data() + 4, 2);
  EXPECT_EQ(version, kDatasetVersion);
  EXPECT_EQ(static_cast<std::uint8_t>(b[6]), 0);  // pendulum
  std::uint32_t dims[3];
  std::memcpy(dims, b.data() + 7, 12);
  EXPECT_EQ(dims[0], 2u);
  EXPECT_EQ(dims[1], 11u);
  EXPECT_EQ(dims[2], 10u);
  // Payload: n_traj × snapshots × dims float32 at the end.
  const std::size_t payload = 10u * 11u * 2u * sizeof(float);
  float first;
  std::memcpy(&first, b.data() + b.size() - payload, sizeof first);
  EXPECT_EQ(static_cast<double>(first), ds.trajectories[0].states(0, 0));
}

TEST(DatasetFile, MalformedInputsAreFormatErrors) {
  const auto ds = generate_dataset(short_pendulum(), 10, 11);
  const std::string good = serialize_dataset(ds);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_dataset(bad_magic), FormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_dataset(bad_version), FormatError);

  EXPECT_THROW(deserialize_dataset(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(deserialize_dataset(good.substr(0, 10)), FormatError);
  EXPECT_THROW(deserialize_dataset(good + "x"), FormatError);
  EXPECT_THROW(deserialize_dataset(""), FormatError);

  std::string huge = good;
  const std::uint32_t big = 0xffffffffu;
  std::memcpy(huge.data() + 15, &big, 4);  // n_traj
  EXPECT_THROW(deserialize_dataset(huge), FormatError);
}

TEST(DatasetFile, SaveWritesSidecar) {
  const auto ds = generate_dataset(short_pendulum(), 10, 12);
  const auto path = temp_path("ds.kgds");
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(serialize_dataset(back), serialize_dataset(ds));
  const auto side = nlohmann::json::parse(detail::read_file(path.string() + ".json"));
  EXPECT_EQ(side["format"], "KGDS");
  EXPECT_EQ(side["system"], "pendulum");
  EXPECT_EQ(side["splits"]["train"], 7);
  EXPECT_EQ(side["header_hash"].get<std::uint64_t>(), dataset_hash(ds));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
  EXPECT_THROW(load_dataset(path), InputError);
}

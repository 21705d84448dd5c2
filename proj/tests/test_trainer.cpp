#include "koopgen/trainer.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace koopgen;

namespace {

ArchConfig tiny_arch(ModelKind kind) {
  ArchConfig a = ArchConfig::preset(SystemKind::Pendulum, kind);
  a.main_width = 16;
  a.gate_width = 8;
  a.main_depth = 2;
  a.latent_dim = 1;
  return a;
}

TrajectoryDataset tiny_pendulum(int n = 40, int snapshots = 59, std::uint64_t seed = 3) {
  SystemSpec s = SystemSpec::pendulum();
  s.snapshot_count = snapshots;
  return generate_dataset(s, n, seed);
}

TrainConfig tiny_config(int epochs) {
  TrainConfig c = TrainConfig::preset(SystemKind::Pendulum, ModelKind::KoopGen);
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

std::string strip_wall(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_ms");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST(AdamW, FirstStepIsSignedLearningRate) {
  ParamStore p;
  p.add("x", Partition::Main, Tensor({2}, 1.0));
  Gradients g{Tensor({2})};
  g[0].data = {3.0, -0.5};
  OptimizerState st = OptimizerState::for_params(p);
  adamw_step(p, g, st, 0.1, 0.0);
  // m̂ = g, v̂ = g² after bias correction, so the update is lr·g/(|g| + ε).
  EXPECT_NEAR(p[0].value.data[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0].value.data[1], 1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, SecondStepAndDecoupledDecay) {
  ParamStore p;
  p.add("x", Partition::Main, Tensor({1}, 2.0));
  OptimizerState st = OptimizerState::for_params(p);
  Gradients g1{Tensor({1}, 1.0)}, g2{Tensor({1}, -2.0)};
  const double lr = 0.01, wd = 0.1;
  adamw_step(p, g1, st, lr, wd);
  double theta = 2.0;
  theta -= lr * (1.0 / (1.0 + 1e-8) + wd * 2.0);
  EXPECT_NEAR(p[0].value.data[0], theta, 1e-15);
  adamw_step(p, g2, st, lr, wd);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0, v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  theta -= lr * (mh / (std::sqrt(vh) + 1e-8) + wd * theta);
  EXPECT_NEAR(p[0].value.data[0], theta, 1e-14);
}

TEST(AdamW, PartitionRatesAreRespected) {
  ParamStore p;
  p.add("a", Partition::Main, Tensor({2}, 1.0));
  p.add("b", Partition::Gate, Tensor({2}, 1.0));
  p.add("c", Partition::Generator, Tensor({2}, 1.0));
  Gradients g{Tensor({2}, 1.0), Tensor({2}, 1.0), Tensor({2}, 1.0)};
  OptimizerState st = OptimizerState::for_params(p);
  adamw_step(p, g, st, PartitionRates{0.0, 0.1, 0.01}, 0.0);
  EXPECT_EQ(p[0].value.data[0], 1.0);
  EXPECT_NEAR(p[1].value.data[0], 0.9, 1e-8);
  EXPECT_NEAR(p[2].value.data[0], 0.99, 1e-9);
  Gradients bad{Tensor({2})};
  EXPECT_THROW(adamw_step(p, bad, st, 0.1, 0.0), InputError);
}

TEST(OneCycle, EndpointsAndShape) {
  const double max = 0.005, total = 1000.0;
  EXPECT_NEAR(onecycle_lr(0, total, max, 0.1), max / 25.0, 1e-18);
  EXPECT_NEAR(onecycle_lr(100, total, max, 0.1), max, 1e-18);
  EXPECT_NEAR(onecycle_lr(50, total, max, 0.1), (max / 25.0 + max) / 2.0, 1e-15);
  EXPECT_NEAR(onecycle_lr(total, total, max, 0.1), max / 1e4, 1e-18);
  EXPECT_NEAR(onecycle_lr(550, total, max, 0.1), max / 1e4 + (max - max / 1e4) * 0.5, 1e-15);
  double prev = 0.0;
  for (int s = 0; s <= 100; ++s) {
    const double v = onecycle_lr(s, total, max, 0.1);
    EXPECT_GE(v, prev);
    prev = v;
  }
  for (int s = 101; s <= 1000; ++s) {
    const double v = onecycle_lr(s, total, max, 0.1);
    EXPECT_LE(v, prev);
    prev = v;
  }
  EXPECT_THROW(onecycle_lr(-1, total, max, 0.1), InputError);
  EXPECT_THROW(onecycle_lr(0, total, max, 1.0), InputError);
}

TEST(Clip, GlobalNorm) {
  Gradients g{Tensor({2}), Tensor({1})};
  g[0].data = {3.0, 0.0};
  g[1].data = {4.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[1].data[0], 4.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0].data[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1].data[0], 0.8, 1e-15);
}

TEST(Subsample, Indices) {
  const auto idx = subsample_indices(401, 30);
  ASSERT_EQ(idx.size(), 30u);
  EXPECT_EQ(idx[0], 0);
  EXPECT_EQ(idx[1], 13);
  EXPECT_EQ(idx[29], 377);
  EXPECT_EQ(subsample_stride(301, 30), 10);
  EXPECT_EQ(subsample_stride(30, 30), 1);
  EXPECT_THROW(subsample_stride(20, 30), InputError);
  EXPECT_THROW(subsample_stride(20, 1), InputError);
  Matrix m(7, 1);
  for (int i = 0; i < 7; ++i) m(i, 0) = i;
  const Matrix s = subsample_trajectory(m, 4);
  EXPECT_EQ(s(3, 0), 6.0);
  EXPECT_EQ(s(1, 0), 2.0);
}

TEST(Subsample, WindowStrideAndPlacement) {
  EXPECT_EQ(window_stride(401, 30, 0), 13);
  EXPECT_EQ(window_stride(401, 30, 1), 1);
  EXPECT_EQ(window_stride(401, 30, 13), 13);
  EXPECT_THROW(window_stride(401, 30, 14), InputError);  // 29·14 > 400
  Matrix m(10, 1);
  for (int i = 0; i < 10; ++i) m(i, 0) = i;
  const Matrix w = window_at(m, 3, 2, 3);
  EXPECT_EQ(w(0, 0), 3.0);
  EXPECT_EQ(w(1, 0), 5.0);
  EXPECT_EQ(w(2, 0), 7.0);
  EXPECT_NO_THROW(window_at(m, 3, 2, 5));
  EXPECT_THROW(window_at(m, 3, 2, 6), InputError);
}

TEST(Subsample, RandomWindowStartsCoverEveryOffset) {
  Trajectory t;
  t.states = Matrix(59, 1);
  for (int i = 0; i < 59; ++i) t.states(i, 0) = i;
  const std::vector<const Trajectory*> trajs(500, &t);
  Rng rng(11);
  const auto ws = make_windows(trajs, 30, 1, Normalizer::identity(1), rng);
  std::vector<int> seen(30, 0);
  for (const auto& w : ws) {
    const int start = static_cast<int>(w(0, 0));
    ASSERT_GE(start, 0);
    ASSERT_LE(start, 29);
    for (int i = 0; i < 30; ++i) ASSERT_EQ(w(i, 0), start + i);
    ++seen[static_cast<std::size_t>(start)];
  }
  for (int s = 0; s < 30; ++s) EXPECT_GT(seen[static_cast<std::size_t>(s)], 0) << s;

  TrainConfig c;
  c.sample_stride = 1;
  c.seed = 4;
  const auto a = training_windows(trajs, c, Normalizer::identity(1), 7);
  const auto b = training_windows(trajs, c, Normalizer::identity(1), 7);
  const auto d = training_windows(trajs, c, Normalizer::identity(1), 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    differs = differs || a[i] != d[i];
  }
  EXPECT_TRUE(differs);
  c.sample_stride = 0;  // spread mode ignores the stream
  EXPECT_EQ(training_windows(trajs, c, Normalizer::identity(1), 7)[0], subsample_trajectory(t.states, 30));
}

TEST(Normalizer, FitOnTrainSplit) {
  Trajectory a, b;
  a.states = Matrix(2, 2);
  a.states << 0, 5, 2, 5;
  b.states = Matrix(2, 2);
  b.states << 4, 5, 6, 5;
  const Normalizer n = fit_normalizer({&a, &b});
  EXPECT_DOUBLE_EQ(n.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(n.scale[0], std::sqrt(5.0));
  EXPECT_EQ(n.scale[1], 1.0);  // constant channel keeps unit scale
  EXPECT_LE((n.denormalize(n.normalize(a.states)) - a.states).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TrainConfig, PresetsAndJson) {
  const auto l63 = TrainConfig::preset(SystemKind::Lorenz63, ModelKind::KoopGen);
  EXPECT_EQ(l63.alpha, 1.0);
  EXPECT_EQ(l63.epochs, 200);
  const auto lran = TrainConfig::preset(SystemKind::Pendulum, ModelKind::Lran);
  EXPECT_EQ(lran.lr_main, 0.001);
  const auto ks = TrainConfig::preset(SystemKind::KS, ModelKind::DeepKoopman);
  EXPECT_EQ(ks.lr_gen, 1e-4);

  TrainConfig c = tiny_config(7);
  c.lr_gate = 0.0123;
  const TrainConfig back = TrainConfig::from_json(c.to_json(), {});
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json(nlohmann::ordered_json{{"lr_mian", 1.0}}, {}), InputError);
  c.warmup_ratio = 0.0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Train, OneEpochSmoke) {
  const auto ds = tiny_pendulum();
  std::ostringstream metrics;
  TrainOptions opt;
  opt.metrics = &metrics;
  int calls = 0;
  opt.on_epoch = [&](const EpochRecord& r) { EXPECT_EQ(r.epoch, ++calls); };
  const auto r = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), tiny_config(1), opt);
  EXPECT_FALSE(r.aborted) << r.diagnostic;
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(calls, 1);
  EXPECT_TRUE(std::isfinite(r.log[0].train_loss));
  EXPECT_EQ(r.final.epoch, 1);
  EXPECT_EQ(r.final.steps_between, 1);
  EXPECT_EQ(r.final.intervals_per_step, 1);
  EXPECT_TRUE(r.final.optimizer.has_value());
  const auto line = nlohmann::json::parse(metrics.str());
  EXPECT_EQ(line["epoch"], 1);
  for (const char* key : {"train_loss", "val_loss", "lr_main", "lr_gate", "lr_gen", "clipped", "wall_ms"}) {
    EXPECT_TRUE(line.contains(key)) << key;
  }
}

TEST(Train, DeterministicGivenSeed) {
  const auto ds = tiny_pendulum();
  std::ostringstream a, b;
  TrainOptions oa, ob;
  oa.metrics = &a;
  ob.metrics = &b;
  const auto ra = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), tiny_config(2), oa);
  const auto rb = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), tiny_config(2), ob);
  EXPECT_EQ(strip_wall(a.str()), strip_wall(b.str()));
  EXPECT_EQ(serialize_checkpoint(ra.final), serialize_checkpoint(rb.final));
  TrainConfig other = tiny_config(2);
  other.seed = 6;
  const auto rc = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), other);
  EXPECT_NE(serialize_checkpoint(ra.final), serialize_checkpoint(rc.final));
}

TEST(Train, ValidationLossDecreasesAndStructureHolds) {
  const auto ds = tiny_pendulum(60);
  for (auto kind : {ModelKind::KoopGen, ModelKind::Lran, ModelKind::DeepKoopman}) {
    const auto r = train(ds, kind, tiny_arch(kind), tiny_config(15));
    ASSERT_FALSE(r.aborted) << r.diagnostic;
    EXPECT_LT(r.best.val_loss, 0.8 * r.initial_val_loss) << to_string(kind);
    EXPECT_LE(r.best.val_loss, r.final.val_loss);
    auto m = instantiate(r.final);
    EXPECT_NO_THROW(check_generator_structure(*m));
    EXPECT_NEAR(checkpoint_val_loss(r.final, ds), r.final.val_loss, 1e-12);
  }
}

TEST(Train, RandomWindowsTrainReproducibly) {
  const auto ds = tiny_pendulum(60);
  TrainConfig c = tiny_config(15);
  const auto r = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c);
  ASSERT_FALSE(r.aborted) << r.diagnostic;
  EXPECT_EQ(r.final.steps_between, 1);
  EXPECT_EQ(r.final.intervals_per_step, 1);
  EXPECT_LT(r.best.val_loss, 0.8 * r.initial_val_loss);
  EXPECT_NEAR(checkpoint_val_loss(r.final, ds), r.final.val_loss, 1e-12);
  c.epochs = 2;
  const auto a = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c);
  const auto b = train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c);
  EXPECT_EQ(serialize_checkpoint(a.final), serialize_checkpoint(b.final));
}

TEST(Train, SpreadWindowsUseTheSamplingStride) {
  const auto ds = tiny_pendulum();
  TrainConfig c = tiny_config(1);
  c.sample_stride = 0;
  auto r = train(ds, ModelKind::Lran, tiny_arch(ModelKind::Lran), c);
  EXPECT_EQ(r.final.steps_between, 2);  // (59 − 1)/(30 − 1)
  EXPECT_EQ(r.final.intervals_per_step, 1);
  c.steps_per_sample = 1;
  r = train(ds, ModelKind::Lran, tiny_arch(ModelKind::Lran), c);
  EXPECT_EQ(r.final.steps_between, 1);
  EXPECT_EQ(r.final.intervals_per_step, 2);
  EXPECT_NEAR(checkpoint_val_loss(r.final, ds), r.final.val_loss, 1e-12);
}

TEST(Train, NormalizerFittedOnTrainSplit) {
  const auto ds = tiny_pendulum();
  const auto r = train(ds, ModelKind::Lran, tiny_arch(ModelKind::Lran), tiny_config(1));
  const Normalizer expect = fit_normalizer(ds.subset(ds.splits.train));
  EXPECT_EQ(r.final.normalizer.mean, expect.mean);
  EXPECT_EQ(r.final.normalizer.scale, expect.scale);
}

TEST(Train, DivergenceAbortsAndKeepsLastGoodCheckpoint) {
  const auto ds = tiny_pendulum();
  TrainConfig c = tiny_config(3);
  c.lr_main = c.lr_gate = c.lr_gen = 1e6;  // guaranteed blow-up
  c.clip_norm = 0.0;
  const auto r = train(ds, ModelKind::Lran, tiny_arch(ModelKind::Lran), c);
  ASSERT_TRUE(r.aborted);
  EXPECT_NE(r.diagnostic.find("epoch 1"), std::string::npos) << r.diagnostic;
  EXPECT_EQ(r.final.epoch, 0);
  EXPECT_TRUE(r.log.empty());
  for (const auto& p : instantiate(r.final)->params()) EXPECT_TRUE(p.value.all_finite());
}

TEST(Train, InputErrors) {
  const auto ds = tiny_pendulum();
  ArchConfig wrong = tiny_arch(ModelKind::KoopGen);
  wrong.state_dim = 3;
  EXPECT_THROW(train(ds, ModelKind::KoopGen, wrong, tiny_config(1)), InputError);
  TrainConfig c = tiny_config(1);
  c.sample_stride = 0;
  c.steps_per_sample = 3;  // does not divide the stride 2
  EXPECT_THROW(train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c), InputError);
  c.steps_per_sample = 0;
  c.sample_stride = 2;  // 29·2 = 58 fits exactly
  EXPECT_NO_THROW(train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c));
  c.sample_stride = 3;
  EXPECT_THROW(train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c), InputError);
  c.sample_stride = 1;
  c.steps_per_sample = 0;
  c.samples_per_traj = 100;
  EXPECT_THROW(train(ds, ModelKind::KoopGen, tiny_arch(ModelKind::KoopGen), c), InputError);
}

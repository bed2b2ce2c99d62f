// Copyright 2026 The lindpo Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "lindpo/training.hpp"
#include "test_util.hpp"

namespace {

using namespace lindpo;
using lindpo::testing::scratch_dir;
using lindpo::testing::slurp;

MlpModel small_model(std::uint64_t seed = 3) { return mlp_init({6, 16, 16, 2}, Activation::SiLU, seed); }

TrainConfig small_config(Method method = Method::LinearDpo) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.batch_size = 16;
  cfg.seed = 21;
  cfg.warmup_steps = 5;
  cfg.eval_pairs = 32;
  cfg.eval_samples = 16;
  cfg.eval_draws = 2;
  cfg.sample_steps = 10;
  cfg.task = two_mode_task(256, 4);
  return cfg;
}

TEST(Ema, Examples) {
  MlpModel ref = small_model(1), policy = small_model(2);
  const MlpModel ref0 = ref;
  ema_update(ref, policy, 1.0);
  EXPECT_EQ(ref.params, ref0.params);
  ema_update(ref, policy, 0.5);
  for (std::size_t i = 0; i < ref.params.size(); ++i)
    EXPECT_NEAR(ref.params[i], 0.5 * ref0.params[i] + 0.5 * policy.params[i], 1e-15);
  ema_update(ref, policy, 0.0);
  EXPECT_EQ(ref.params, policy.params);
}

TEST(Ema, ErrorCases) {
  MlpModel ref = small_model();
  EXPECT_THROW(ema_update(ref, mlp_init({6, 8, 2}, Activation::SiLU, 0), 0.5), ContractError);
  EXPECT_THROW(ema_update(ref, ref, 1.5), DomainError);
}

TEST(Warmup, LinearRampThenFlat) {
  EXPECT_DOUBLE_EQ(warmup_scale(0, 200), 1.0 / 200);
  EXPECT_DOUBLE_EQ(warmup_scale(99, 200), 0.5);
  EXPECT_EQ(warmup_scale(199, 200), 1.0);
  EXPECT_EQ(warmup_scale(5000, 200), 1.0);
  EXPECT_EQ(warmup_scale(0, 0), 1.0);
}

TEST(TrainStep, ZeroLearningRateLeavesModelsUnchanged) {
  TrainConfig cfg = small_config();
  cfg.adam.lr = 0.0;
  TrainState st = init_state(small_model(), cfg);
  const auto data = gen_dataset(*cfg.task);
  const MlpModel before = st.policy;
  for (int i = 0; i < 3; ++i) train_step(st, draw_batch(data, 16, cfg.seed, st.step), Schedule::rf());
  EXPECT_EQ(st.policy.params, before.params);
  EXPECT_EQ(st.ref.params, before.params);
  EXPECT_EQ(st.step, 3);
}

TEST(TrainStep, FirstStepSeesZeroMargins) {
  for (Method m : {Method::LinearDpo, Method::Dpo}) {
    TrainConfig cfg = small_config(m);
    TrainState st = init_state(small_model(), cfg);
    const auto data = gen_dataset(*cfg.task);
    const MetricsRow row = train_step(st, draw_batch(data, 16, cfg.seed, 0), Schedule::rf());
    EXPECT_EQ(row.step, 1);
    EXPECT_EQ(row.implicit_acc, 0.5);
    EXPECT_EQ(row.mean_delta, 0.0);
    EXPECT_EQ(row.mean_weight, m == Method::LinearDpo ? 0.5 : cfg.dpo.beta_bar / 2);
    if (m == Method::Dpo) {
      EXPECT_NEAR(row.loss, std::log(2.0), 1e-15);
    }
  }
}

TEST(TrainStep, GammaZeroCopiesThePostUpdatePolicy) {
  TrainConfig cfg = small_config();
  cfg.dpo.gamma_ema = 0.0;
  TrainState st = init_state(small_model(), cfg);
  const auto data = gen_dataset(*cfg.task);
  for (int i = 0; i < 4; ++i) {
    const MlpModel before = st.policy;
    train_step(st, draw_batch(data, 16, cfg.seed, st.step), Schedule::rf());
    EXPECT_NE(st.policy.params, before.params);
    EXPECT_EQ(st.ref.params, st.policy.params);
  }
}

TEST(TrainStep, GammaOneFreezesTheReference) {
  TrainConfig cfg = small_config();
  cfg.dpo.gamma_ema = 1.0;
  const MlpModel init = small_model();
  TrainState st = init_state(init, cfg);
  const auto data = gen_dataset(*cfg.task);
  for (int i = 0; i < 20; ++i) train_step(st, draw_batch(data, 16, cfg.seed, st.step), Schedule::rf());
  EXPECT_EQ(st.ref.params, init.params);
  EXPECT_NE(st.policy.params, init.params);
}

TEST(TrainStep, SftMethodRegressesOnWinners) {
  TrainConfig cfg = small_config(Method::Sft);
  TrainState st = init_state(small_model(), cfg);
  const auto data = gen_dataset(*cfg.task);
  const auto batch = draw_batch(data, 16, cfg.seed, 0);
  Rng rng{st.rng_seed, stream::kNoise, 0};
  const auto draws = draw_noise(rng, batch.size(), 2, Schedule::rf(), st.cfg);
  const LossReport rep = batch_loss(st, batch, Schedule::rf(), draws, false);
  for (double w : rep.weights) EXPECT_EQ(w, 1.0);
  EXPECT_NEAR(rep.loss, sft_loss(st.policy, winners(batch), PredictionKind::Velocity, Schedule::rf(), draws), 1e-14);
  const MetricsRow row = train_step(st, batch, Schedule::rf());
  EXPECT_NEAR(row.loss, rep.loss, 1e-14);
}

TEST(TrainStep, NonFiniteStateRaisesTrainingError) {
  TrainConfig cfg = small_config();
  TrainState st = init_state(small_model(), cfg);
  st.policy.params[0] = std::numeric_limits<double>::quiet_NaN();
  const auto data = gen_dataset(*cfg.task);
  EXPECT_THROW(train_step(st, draw_batch(data, 16, cfg.seed, 0), Schedule::rf()), TrainingError);
  EXPECT_THROW(train_step(st, {}, Schedule::rf()), ContractError);
}

TEST(TrainStep, DeterministicForFixedSeed) {
  const TrainConfig cfg = small_config(Method::Dpo);
  const auto data = gen_dataset(*cfg.task);
  auto run = [&] {
    TrainState st = init_state(small_model(), cfg);
    for (int i = 0; i < 10; ++i) train_step(st, draw_batch(data, 16, cfg.seed, st.step), Schedule::rf());
    return st.policy.params;
  };
  EXPECT_EQ(run(), run());
}

TEST(DrawBatch, DependsOnlyOnSeedAndStep) {
  const auto data = gen_dataset(two_mode_task(100, 1));
  const auto a = draw_batch(data, 8, 5, 3), b = draw_batch(data, 8, 5, 3), c = draw_batch(data, 8, 5, 4);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i].x0_w, b[i].x0_w);
  bool differs = false;
  for (std::size_t i = 0; i < 8; ++i) differs = differs || a[i].x0_w != c[i].x0_w;
  EXPECT_TRUE(differs);
}

// ---------------------------------------------------------------------------

TEST(TrainRun, ZeroStepsWritesInitialCheckpointAndHeaderOnly) {
  const auto dir = scratch_dir();
  const TrainConfig cfg = small_config();
  const auto data = gen_dataset(*cfg.task);
  const RunResult r = train_run(cfg, Schedule::rf(), data, 0, 5, dir, init_state(small_model(), cfg));
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt_00000000.json"));
  EXPECT_EQ(slurp(dir / "metrics.csv"), std::string(kMetricsHeader) + "\n");
  EXPECT_EQ(load_state(dir / "ckpt_00000000.json").policy.params, small_model().params);
}

TEST(TrainRun, EvaluatesOnScheduleAndAtTheEnd) {
  const auto dir = scratch_dir();
  const TrainConfig cfg = small_config();
  const auto data = gen_dataset(*cfg.task);
  const RunResult r = train_run(cfg, Schedule::rf(), data, 12, 5, dir, init_state(small_model(), cfg));
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_EQ(r.metrics[0].step, 5);
  EXPECT_EQ(r.metrics[1].step, 10);
  EXPECT_EQ(r.metrics[2].step, 12);
  for (const auto& row : r.metrics) {
    ASSERT_TRUE(row.pref_mass.has_value());
    EXPECT_GE(*row.pref_mass, 0.0);
    EXPECT_LE(*row.pref_mass, 1.0);
    EXPECT_TRUE(std::filesystem::exists(checkpoint_path(dir, row.step)));
  }
  const MetricsTable t = read_csv(dir / "metrics.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2][*t.column("loss")], r.metrics[2].loss);
}

TEST(TrainRun, ResumeIsBitExact) {
  const TrainConfig cfg = small_config(Method::Dpo);
  const auto data = gen_dataset(*cfg.task);
  const auto root = scratch_dir();
  const auto whole = root / "whole", split = root / "split";
  const RunResult full = train_run(cfg, Schedule::rf(), data, 10, 5, whole, init_state(small_model(), cfg));

  train_run(cfg, Schedule::rf(), data, 5, 5, split, init_state(small_model(), cfg));
  const TrainState mid = load_state(checkpoint_path(split, 5));
  const RunResult resumed = train_run(cfg, Schedule::rf(), data, 10, 5, split, mid);

  EXPECT_EQ(resumed.state.policy.params, full.state.policy.params);
  EXPECT_EQ(resumed.state.ref.params, full.state.ref.params);
  EXPECT_EQ(resumed.state.optimizer.first_moment, full.state.optimizer.first_moment);
  EXPECT_EQ(slurp(split / "metrics.csv"), slurp(whole / "metrics.csv"));
  EXPECT_EQ(slurp(checkpoint_path(split, 10)), slurp(checkpoint_path(whole, 10)));
}

TEST(TrainRun, UnwritableOutputDirectoryIsAnIoError) {
  const auto dir = scratch_dir();
  lindpo::testing::spit(dir / "blocker", "not a directory");
  const TrainConfig cfg = small_config();
  const auto data = gen_dataset(*cfg.task);
  EXPECT_THROW(train_run(cfg, Schedule::rf(), data, 1, 1, dir / "blocker" / "out", init_state(small_model(), cfg)),
               IoError);
}

TEST(TrainRun, CheckpointStateRoundTrips) {
  const TrainConfig cfg = small_config(Method::Dpo);
  TrainState st = init_state(small_model(), cfg);
  const auto data = gen_dataset(*cfg.task);
  for (int i = 0; i < 3; ++i) train_step(st, draw_batch(data, 16, cfg.seed, st.step), Schedule::rf());
  const TrainState back = state_from_json(json::parse(state_to_json(st).dump()));
  EXPECT_EQ(back.step, st.step);
  EXPECT_EQ(back.policy.params, st.policy.params);
  EXPECT_EQ(back.ref.params, st.ref.params);
  EXPECT_EQ(back.optimizer.second_moment, st.optimizer.second_moment);
  EXPECT_EQ(back.optimizer.step_count, st.optimizer.step_count);
  EXPECT_EQ(back.method, Method::Dpo);
  EXPECT_EQ(back.rng_seed, st.rng_seed);
  EXPECT_EQ(back.cfg.beta_bar, st.cfg.beta_bar);
  EXPECT_THROW(state_from_json(json::parse(model_to_json(st.policy).dump())), ConfigError);
}

TEST(Evaluate, IdenticalModelsGiveChanceAccuracy) {
  const TrainConfig cfg = small_config();
  const TrainState st = init_state(small_model(), cfg);
  const auto data = gen_dataset(*cfg.task);
  const EvalReport r = evaluate_state(st, data, cfg, Schedule::rf());
  EXPECT_EQ(r.implicit_acc, 0.5);
  EXPECT_EQ(r.mean_delta, 0.0);
  EXPECT_EQ(r.mean_weight, 0.5);
  EXPECT_GE(r.pref_mass, 0.0);
  EXPECT_LE(r.pref_mass, 1.0);
}

// ---------------------------------------------------------------------------

TEST(TrainSft, ZeroStepsReturnsTheInitialModel) {
  const TrainConfig cfg = small_config();
  const auto data = gen_dataset(*cfg.task);
  const SftResult r = train_sft(cfg, Schedule::rf(), winners(data), 0, small_model());
  EXPECT_EQ(r.model.params, small_model().params);
  EXPECT_TRUE(r.losses.empty());
  EXPECT_THROW(train_sft(cfg, Schedule::rf(), std::vector<Sample>{}, 1, small_model()), ContractError);
}

// 1D N(0, s²) data: the Bayes-optimal velocity is linear in x_t with a closed-form slope.
TEST(TrainSft, LearnsTheGaussianVelocity) {
  const double s = 0.5;
  auto var_t = [&](double t) { return (1 - t) * (1 - t) * s * s + t * t; };
  auto v_star = [&](double x, double t) { return (t - (1 - t) * s * s) / var_t(t) * x; };

  Rng data_rng{77};
  std::vector<Sample> samples;
  for (int i = 0; i < 4096; ++i) samples.push_back({Vec{s * data_rng.normal()}, Vec{}});
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.batch_size = 64;
  cfg.adam.lr = 1e-3;
  const SftResult r =
      train_sft(cfg, Schedule::rf(), samples, 3000, mlp_init({4, 32, 32, 1}, Activation::SiLU, 2), std::nullopt);

  Rng rng{78};
  double mse = 0.0, floor = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0.01, 0.99);
    const double x = std::sqrt(var_t(t)) * rng.normal();
    const double err = mlp_forward(r.model, Vec{x}, t, Vec{})[0] - v_star(x, t);
    mse += err * err;
    // Var(v | x_t) = Var(v) − Cov(v, x_t)² / Var(x_t).
    const double cov = t - (1 - t) * s * s;
    floor += (1 + s * s) - cov * cov / var_t(t);
  }
  mse /= n;
  floor /= n;
  EXPECT_LT(mse, 10 * floor);
  EXPECT_LT(mse, 0.1 * floor);
}

TEST(TrainSft, MovingAverageLossDoesNotIncrease) {
  const auto data = gen_dataset(two_mode_task(2048, 7));
  TrainConfig cfg;
  cfg.seed = 11;
  const SftResult r = train_sft(cfg, Schedule::rf(), all_candidates(data), 3000,
                                mlp_init({6, 64, 64, 2}, Activation::SiLU, 3), std::nullopt);
  ASSERT_EQ(r.losses.size(), 3000u);
  // 100-step window means every 500 steps; later windows may exceed earlier ones only by sampling noise.
  auto window = [&](std::size_t start) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = start; i < start + 100; ++i) sum += r.losses[i], sum_sq += r.losses[i] * r.losses[i];
    const double mean = sum / 100;
    return std::pair{mean, std::sqrt((sum_sq / 100 - mean * mean) / 100)};
  };
  auto [prev, prev_se] = window(0);
  for (std::size_t start = 500; start + 100 <= r.losses.size(); start += 500) {
    const auto [avg, se] = window(start);
    EXPECT_LE(avg, prev + 3 * std::hypot(se, prev_se)) << "window starting at " << start;
    prev = avg;
    prev_se = se;
  }
}

TEST(TrainSft, WritesFinalModelWhenAskedTo) {
  const auto dir = scratch_dir();
  const TrainConfig cfg = small_config();
  const auto data = gen_dataset(*cfg.task);
  const SftResult r = train_sft(cfg, Schedule::rf(), winners(data), 3, small_model(), dir);
  EXPECT_EQ(load_model(dir / "final.json").params, r.model.params);
}

}  // namespace

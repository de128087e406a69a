// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "qmop/digest.hpp"
#include "qmop/errors.hpp"
#include "qmop/trainer.hpp"
#include "test_util.hpp"

namespace qmop {
namespace {

using testing::random_matrix;

TrainConfig toy_config(int stage, std::uint64_t seed, std::size_t steps = 200) {
  const ProjectorDims dims;
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.steps = steps;
  cfg.seed = seed;
  for (std::uint64_t i = 0; i < 4; ++i)
    cfg.batch.push_back(synth_bundle(derive_seed(seed, 100 + i), dims.grid_h, dims.grid_w,
                                     dims.c_vis, dims.c_txt));
  cfg.targets = teacher_targets(cfg.batch, dims, {}, stage, derive_seed(seed, 200));
  cfg.params = init_params(dims, {}, derive_seed(seed, 300));
  cfg.final_check_coords = 8;
  return cfg;
}

std::string router_digest(const ProjectorParams& p) {
  Fnv1a64 h;
  visit_tensors(p, [&](std::string_view name, std::span<const double> d) {
    if (name.substr(0, 7) != "router.") return;
    for (double x : d) h.update_f64(x);
  });
  return h.hex();
}

TEST(Schedule, TauExamples) {
  const AnnealSchedule def;
  EXPECT_EQ(tau_at(def, 0), def.tau0);
  EXPECT_EQ(tau_at({2.0, 0.1, 0.5, 1.0, 0.5}, 10), 0.1);
  EXPECT_EQ(tau_at(def, 100000), def.tau_min);
}

TEST(Schedule, GumbelExamples) {
  const AnnealSchedule def;
  EXPECT_EQ(gumbel_scale_at(def, 0), def.gumbel0);
  // 0.9^22 = 0.0984770902...
  EXPECT_NEAR(gumbel_scale_at({5.0, 0.5, 0.9, 1.0, 0.9}, 22), 0.0985, 5e-5);
}

TEST(ScheduleProperty, MonotoneWithFloor) {
  CounterRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    AnnealSchedule s;
    s.tau_min = 0.05 + rng.uniform01();
    s.tau0 = s.tau_min + 5.0 * rng.uniform01();
    s.decay = 0.5 + 0.49 * rng.uniform01();
    s.gumbel_decay = 0.5 + 0.49 * rng.uniform01();
    for (std::size_t t = 0; t < 300; ++t) {
      ASSERT_GE(tau_at(s, t), s.tau_min);
      ASSERT_LE(tau_at(s, t + 1), tau_at(s, t));
      ASSERT_LE(gumbel_scale_at(s, t + 1), gumbel_scale_at(s, t));
    }
  }
}

TEST(Schedule, Validation) {
  EXPECT_NO_THROW(validate_schedule({}));
  EXPECT_THROW(validate_schedule({0.1, 0.5, 0.9, 1.0, 0.9}), ConfigError);
  EXPECT_THROW(validate_schedule({5.0, 0.5, 1.0, 1.0, 0.9}), ConfigError);
}

TEST(Loss, Examples) {
  const Matrix t = random_matrix(1, 3, 4);
  EXPECT_EQ(mse(t, t), 0.0);
  Matrix plus = t;
  for (double& x : plus.data()) x += 1.0;
  EXPECT_NEAR(mse(plus, t), 1.0, 1e-12);
  // (0.01 + 0.04 + 0.09 + 0.16) / 4, cross-checked with numpy.
  EXPECT_NEAR(mse(Matrix::from_rows({{0.1, 0.2}, {0.3, 0.4}}), Matrix(2, 2)), 0.075, 1e-15);
  EXPECT_THROW(mse(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}

class GradTest : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradTest, StageOneAllTensors) {
  const ProjectorParams p = init_params({}, {}, GetParam());
  const FeatureBundle b = synth_bundle(GetParam() + 50, 4, 4, 8, 6);
  const Matrix target = random_matrix(GetParam() + 60, 4, 8);
  for (const auto& [name, err] : gradient_check(b, p, target, GradMode::stage1()))
    EXPECT_LE(err, 1e-4) << name;
}

TEST_P(GradTest, TrainModeAllTensors) {
  const ProjectorParams p = init_params({}, {}, GetParam());
  const FeatureBundle b = synth_bundle(GetParam() + 50, 4, 4, 8, 6);
  const Matrix target = random_matrix(GetParam() + 60, 4, 8);
  for (double tau : {0.5, 1.0, 3.0}) {
    for (const auto& [name, err] :
         gradient_check(b, p, target, GradMode::train(tau, 1.0, GetParam())))
      EXPECT_LE(err, 1e-4) << name << " tau=" << tau;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradTest, ::testing::Values(0, 1, 2, 3, 4));

TEST(Grad, SmallConfigAllTensors) {
  ProjectorDims d;
  d.grid_h = 2;
  d.grid_w = 2;
  d.c_vis = 3;
  d.c_txt = 2;
  d.d_llm = 3;
  d.m_tokens = 1;
  ProjectorOptions opt;
  opt.activation = Activation::kRelu;
  opt.metric = RelevanceMetric::kNegEuclidean;
  const ProjectorParams p = init_params(d, opt, 9);
  const FeatureBundle b = synth_bundle(10, 2, 2, 3, 2);
  const Matrix target = random_matrix(11, 1, 3);
  for (const auto& mode : {GradMode::stage1(), GradMode::train(1.0, 1.0, 4)})
    for (const auto& [name, err] : gradient_check(b, p, target, mode)) EXPECT_LE(err, 1e-4) << name;
}

TEST(Grad, ZeroAtOptimum) {
  const ProjectorParams p = init_params({}, {}, 5);
  const FeatureBundle b = synth_bundle(6, 4, 4, 8, 6);
  for (const GradMode& mode : {GradMode::stage1(), GradMode::train(1.0, 0.5, 3)}) {
    const Matrix target = forward(b, p, mode).tokens;
    const LossAndGrads lg = backward(b, p, target, mode);
    EXPECT_EQ(lg.loss, 0.0);
    visit_tensors(lg.grads, [](std::string_view name, std::span<const double> d) {
      for (double g : d) EXPECT_LE(std::abs(g), 1e-10) << name;
    });
  }
}

TEST(Grad, StageOneLeavesRouterUntouched) {
  const ProjectorParams p = init_params({}, {}, 7);
  const FeatureBundle b = synth_bundle(8, 4, 4, 8, 6);
  const LossAndGrads lg = backward(b, p, random_matrix(9, 4, 8), GradMode::stage1());
  visit_tensors(lg.grads, [](std::string_view name, std::span<const double> d) {
    if (name.substr(0, 7) != "router." && name.substr(0, 8) != "out_mlp.") return;
    for (double g : d) EXPECT_EQ(g, 0.0) << name;
  });
}

TEST(Grad, PruneSelectionIsDetached) {
  const ProjectorParams p = init_params({}, {}, 12);
  const FeatureBundle b = synth_bundle(13, 4, 4, 8, 6);
  const LossAndGrads lg = backward(b, p, random_matrix(14, 4, 8), GradMode::train(1.0, 0.0, 0));
  for (double g : lg.grads.relevance.g.data()) EXPECT_EQ(g, 0.0);
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  TrainConfig cfg = toy_config(1, 21, 10);
  cfg.lr = 0.0;
  const TrainReport r = train_toy(cfg);
  for (double l : r.losses) EXPECT_EQ(l, r.losses.front());
  EXPECT_EQ(r.params_digest, digest_params(cfg.params));
}

TEST(Train, StageOneHalvesLoss) {
  const TrainReport r = train_toy(toy_config(1, 22));
  ASSERT_EQ(r.losses.size(), 200u);
  EXPECT_LT(r.losses.back(), 0.5 * r.losses.front())
      << "initial " << r.losses.front() << " final " << r.losses.back();
  EXPECT_LE(r.grad_check_max_rel_err, 1e-4);
}

TEST(Train, StageOneNeverChangesRouter) {
  const TrainConfig cfg = toy_config(1, 23, 50);
  const TrainReport r = train_toy(cfg);
  EXPECT_EQ(router_digest(r.final_params), router_digest(cfg.params));
  EXPECT_NE(r.params_digest, digest_params(cfg.params));
}

TEST(Train, Deterministic) {
  const TrainConfig cfg = toy_config(2, 24, 30);
  const TrainReport a = train_toy(cfg);
  const TrainReport b = train_toy(cfg);
  EXPECT_EQ(a.params_digest, b.params_digest);
  EXPECT_EQ(a.losses, b.losses);
}

TEST(Train, StageTwoTraceMatchesSchedule) {
  const TrainConfig cfg = toy_config(2, 25);
  const TrainReport r = train_toy(cfg);
  ASSERT_EQ(r.taus.size(), 200u);
  for (std::size_t t = 0; t < r.taus.size(); ++t) {
    ASSERT_EQ(r.taus[t], tau_at(cfg.schedule, t));
    ASSERT_EQ(r.gumbel_scales[t], gumbel_scale_at(cfg.schedule, t));
  }
  EXPECT_TRUE(std::isfinite(r.losses.back()));
}

TEST(Train, StageTwoEntropyDecreasesOnMostSeeds) {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TrainReport r = train_toy(toy_config(2, 1000 + seed));
    if (r.final_gate_entropy <= r.initial_gate_entropy) ++decreased;
  }
  EXPECT_GE(decreased, 8);
}

TEST(Train, DivergenceReportsStep) {
  TrainConfig cfg = toy_config(1, 26, 200);
  cfg.lr = 1e6;
  try {
    train_toy(cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_LT(e.step(), 200u);
  }
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg = toy_config(1, 27, 1);
  cfg.targets.pop_back();
  EXPECT_THROW(train_toy(cfg), ConfigError);
  cfg = toy_config(3, 27, 1);
  EXPECT_THROW(train_toy(cfg), ConfigError);
}

}  // namespace
}  // namespace qmop

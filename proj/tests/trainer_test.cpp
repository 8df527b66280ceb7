// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dynaip/error.hpp"
#include "dynaip/trainer.hpp"
#include "test_support.hpp"

namespace dynaip {
namespace {

TEST(Flow, EndpointsAndVelocity) {
  Rng rng(1);
  const Tensor x0 = rng.normal_tensor({4, 4, 3}, 1.0, DType::F64);
  const Tensor eps = rng.normal_tensor({4, 4, 3}, 1.0, DType::F64);
  EXPECT_LT(flow_sample(x0, eps, 0.0).state.max_abs_diff(x0), 1e-7);
  EXPECT_LT(flow_sample(x0, eps, 1.0).state.max_abs_diff(eps), 1e-7);
  const FlowPoint p = flow_sample(x0, eps, 0.37);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    EXPECT_NEAR(p.velocity[i], eps[i] - x0[i], 1e-7);
    EXPECT_NEAR(p.state[i], 0.63 * x0[i] + 0.37 * eps[i], 1e-7);
  }
}

TEST(Flow, PathIsLinearInTime) {
  Rng rng(2);
  const Tensor x0 = rng.normal_tensor({3, 3, 3}, 1.0, DType::F64);
  const Tensor eps = rng.normal_tensor({3, 3, 3}, 1.0, DType::F64);
  for (int k = 0; k < 20; ++k) {
    const double a = rng.uniform(), b = rng.uniform();
    const Tensor xa = flow_sample(x0, eps, a).state, xb = flow_sample(x0, eps, b).state;
    // Moving along the path by (b - a) v reaches x_b.
    const Tensor v = flow_sample(x0, eps, a).velocity;
    EXPECT_LT(ops::add(xa, ops::scale(v, b - a)).max_abs_diff(xb), 1e-7);
  }
}

TEST(Flow, Contract) {
  const Tensor a = Tensor::zeros({2, 2, 3}), b = Tensor::zeros({2, 2, 2});
  EXPECT_THROW(flow_sample(a, a, 1.5), ContractError);
  EXPECT_THROW(flow_sample(a, a, -0.1), ContractError);
  EXPECT_THROW(flow_sample(a, b, 0.5), DimensionError);
}

TEST(Schedule, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_EQ(cosine_lr(1e-3, 99, 100), 0.0);
  EXPECT_NEAR(cosine_lr(1e-3, 33, 67), 0.5e-3, 1e-12);
  for (std::size_t s = 1; s < 100; ++s) EXPECT_LE(cosine_lr(1e-3, s, 100), cosine_lr(1e-3, s - 1, 100));
}

ParamStore single_param(const Tensor& value) {
  ParamStore p;
  p.add("w", value);
  return p;
}

TEST(Optimizer, ZeroGradientOnlyDecays) {
  Rng rng(3);
  const Tensor theta = rng.normal_tensor({5, 4}, 1.0, DType::F64);
  ParamStore p = single_param(theta);
  AdamW opt(0.9, 0.999, 1e-8, 0.01);
  opt.step(p, {{"w", Tensor::zeros({5, 4}, DType::F64)}}, 0.1);
  for (std::size_t i = 0; i < theta.numel(); ++i) EXPECT_NEAR(p.get("w")[i] - theta[i], -0.1 * 0.01 * theta[i], 1e-15);
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  Rng rng(4);
  const Tensor theta = rng.normal_tensor({3, 3}, 1.0);
  ParamStore p = single_param(theta);
  AdamW opt(0.9, 0.999, 1e-8, 0.01);
  opt.step(p, {{"w", rng.normal_tensor({3, 3}, 1.0)}}, 0.0);
  EXPECT_TRUE(p.get("w").bit_equal(theta));
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(Optimizer, FirstStepMovesBySignOfGradient) {
  // With bias correction the first update is lr * g / (|g| + eps).
  ParamStore p = single_param(Tensor({1, 3}, {0.0, 0.0, 0.0}, DType::F64));
  AdamW opt(0.9, 0.999, 1e-12, 0.0);
  opt.step(p, {{"w", Tensor({1, 3}, {2.0, -0.5, 1e-3}, DType::F64)}}, 0.01);
  EXPECT_NEAR(p.get("w")[0], -0.01, 1e-9);
  EXPECT_NEAR(p.get("w")[1], 0.01, 1e-9);
  EXPECT_NEAR(p.get("w")[2], -0.01, 1e-7);
}

TEST(Optimizer, RejectsMisshapedGradient) {
  ParamStore p = single_param(Tensor::zeros({2, 2}));
  AdamW opt(0.9, 0.999, 1e-8, 0.0);
  EXPECT_THROW(opt.step(p, {{"w", Tensor::zeros({4})}}, 0.1), DimensionError);
}

TEST(ConditionDropout, RatesWithinThreeSigma) {
  Rng rng(5);
  constexpr std::size_t kDraws = 40000;
  std::size_t counts[4] = {};
  for (std::size_t i = 0; i < kDraws; ++i) ++counts[static_cast<int>(draw_condition_drop(rng, 0.05, 0.05, 0.05))];
  const double n = kDraws;
  for (int k : {1, 2, 3}) {
    const double sigma = std::sqrt(0.05 * 0.95 / n);
    EXPECT_NEAR(counts[k] / n, 0.05, 3 * sigma) << k;
  }
  const double sigma_none = std::sqrt(0.85 * 0.15 / n);
  EXPECT_NEAR(counts[0] / n, 0.85, 3 * sigma_none);
}

TEST(ConditionDropout, TrainingInputReflectsDrop) {
  Model model(testing::small_config());
  Rng rng(6);
  const ToyScene scene = synth_scene(rng, PairingKind::Intra, model.config().image_side);
  const Tensor noise = rng.normal_tensor(scene.target.shape(), 1.0);
  const ModelInput none = training_input(model, scene, noise, 0.4, CondDrop::None, 1.0);
  EXPECT_FALSE(none.null_text);
  EXPECT_EQ(none.text, scene.text);
  EXPECT_FALSE(none.references.at(0).null_image);
  const ModelInput both = training_input(model, scene, noise, 0.4, CondDrop::Both, 1.0);
  EXPECT_TRUE(both.null_text);
  EXPECT_TRUE(both.references.at(0).null_image);
  EXPECT_TRUE(training_input(model, scene, noise, 0.4, CondDrop::Text, 1.0).null_text);
  EXPECT_FALSE(training_input(model, scene, noise, 0.4, CondDrop::Text, 1.0).references[0].null_image);
  EXPECT_TRUE(training_input(model, scene, noise, 0.4, CondDrop::Image, 1.0).references[0].null_image);
}

TEST(Scenes, SameSeedSameScenes) {
  Rng a(7), b(7);
  const auto x = synth_batch(a, PairingKind::Cross, 4, 24);
  const auto y = synth_batch(b, PairingKind::Cross, 4, 24);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(x[i].target.bit_equal(y[i].target));
    EXPECT_TRUE(x[i].reference.bit_equal(y[i].reference));
    EXPECT_EQ(x[i].text, y[i].text);
  }
}

TEST(Scenes, IntraReferenceIsSubjectOnWhite) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const ToyScene s = synth_scene(rng, PairingKind::Intra, 24);
    EXPECT_EQ(s.text.size(), kTagsPerScene);
    for (std::size_t i = 0; i < 24 * 24; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double ref = s.reference[i * 3 + ch];
        if (s.subject_mask[i] == 0.0) {
          EXPECT_EQ(ref, 1.0);
        } else {
          EXPECT_EQ(ref, s.target[i * 3 + ch]);
        }
      }
    }
  }
}

TEST(Scenes, CrossPairKeepsIdentityAndChangesPixels) {
  Rng rng(9);
  for (int k = 0; k < 20; ++k) {
    const ToyScene s = synth_scene(rng, PairingKind::Cross, 24);
    EXPECT_TRUE(s.subject.same_identity(s.reference_subject));
    const auto ref_mask = subject_coverage(s.reference_subject, 24);
    EXPECT_NE(ref_mask, s.subject_mask);
  }
}

TEST(Training, StageOneOnlyUsesIntraPairs) {
  TrainConfig c;
  c.model = testing::small_config();
  c.stage1_steps = 3;
  c.stage2_steps = 0;
  c.batch = 2;
  const TrainingResult r = run_training(c);
  EXPECT_EQ(r.cross_pairs, 0u);
  EXPECT_EQ(r.intra_pairs, 6u);
  for (const StepRecord& s : r.history) EXPECT_EQ(s.cross_pairs, 0u);
}

TEST(Training, CheckpointSinkCadence) {
  TrainConfig c;
  c.model = testing::small_config();
  c.stage1_steps = 3;
  c.stage2_steps = 4;
  c.batch = 1;
  c.checkpoint_every = 3;
  std::vector<std::pair<std::size_t, std::size_t>> calls;
  run_training(c, [&](const Model&, const AdamW& opt, std::size_t step, std::size_t stage) {
    EXPECT_EQ(opt.steps_taken(), step);
    calls.emplace_back(step, stage);
  });
  const std::vector<std::pair<std::size_t, std::size_t>> want{{3, 1}, {6, 2}, {7, 2}};
  EXPECT_EQ(calls, want);
}

TEST(Training, RepeatedBatchLossDecreases) {
  Model model(testing::small_config());
  model.set_trainable(true);
  TrainConfig c;
  c.model = model.config();
  c.drop_text = c.drop_image = c.drop_both = c.drop_expert = 0.0;
  AdamW opt(c.beta1, c.beta2, c.adam_eps, c.weight_decay);
  Rng data(10);
  const auto batch = synth_batch(data, PairingKind::Intra, 4, model.config().image_side);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 40; ++step) {
    Rng rng(11);  // same noise and times every step
    const StepStats s = train_step(model, opt, batch, c, 3e-3, rng);
    if (step == 0) first = s.loss;
    last = s.loss;
  }
  EXPECT_LT(last, 0.7 * first);
}

TEST(Training, AdapterIsActiveWithoutDropout) {
  Model model(testing::small_config());
  model.set_trainable(true);
  TrainConfig c;
  c.model = model.config();
  c.drop_text = c.drop_image = c.drop_both = c.drop_expert = 0.0;
  AdamW opt(c.beta1, c.beta2, c.adam_eps, c.weight_decay);
  Rng rng(12);
  const auto batch = synth_batch(rng, PairingKind::Intra, 2, model.config().image_side);
  const StepStats s = train_step(model, opt, batch, c, 1e-3, rng);
  EXPECT_GT(s.adapter_norm, 0.0);
  EXPECT_EQ(s.dropped_text + s.dropped_image, 0u);
}

TEST(Training, NonFiniteLossRaisesNumericError) {
  Model model(testing::small_config());
  model.set_trainable(true);
  const std::string victim = block_param(0, "img.q");
  Tensor bad = model.params().get(victim);
  bad.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  model.params().set(victim, bad);
  TrainConfig c;
  c.model = model.config();
  AdamW opt(c.beta1, c.beta2, c.adam_eps, c.weight_decay);
  Rng rng(13);
  const auto batch = synth_batch(rng, PairingKind::Intra, 2, model.config().image_side);
  try {
    train_step(model, opt, batch, c, 1e-3, rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find(victim), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(opt.steps_taken(), 0u);
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  TrainConfig c;
  c.stage1_steps = 12;
  c.lambda = 0.75;
  c.fusion = FusionMode::Concat;
  c.seed = 99;
  c.model.width = 48;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  nlohmann::json extra = j;
  extra["learning_rat"] = 1.0;
  EXPECT_THROW(extra.get<TrainConfig>(), ConfigError);
  TrainConfig bad;
  bad.drop_text = 0.5;
  bad.drop_image = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.model.heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, MeanLossWindow) {
  std::vector<StepRecord> h;
  for (std::size_t i = 0; i < 10; ++i) h.push_back(StepRecord{i, 1, static_cast<double>(i), 0.0, 0});
  EXPECT_DOUBLE_EQ(mean_loss(h, 0, 4), 1.5);
  EXPECT_DOUBLE_EQ(mean_loss(h, 8, 2), 8.5);
  EXPECT_THROW(mean_loss(h, 8, 3), ContractError);
}

}  // namespace
}  // namespace dynaip

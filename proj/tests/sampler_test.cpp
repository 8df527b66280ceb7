// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "dynaip/error.hpp"
#include "dynaip/sampler.hpp"
#include "test_support.hpp"

namespace dynaip {
namespace {

TEST(Euler, ConstantFieldIsExactForAnyStepCount) {
  Rng rng(1);
  const Tensor x1 = rng.normal_tensor({3, 3, 3}, 1.0, DType::F64);
  const Tensor v = rng.normal_tensor({3, 3, 3}, 1.0, DType::F64);
  const Tensor want = ops::sub(x1, v);
  for (std::size_t steps : {1u, 7u, 50u}) {
    const Tensor got = euler_integrate(x1, steps, [&](const Tensor&, double) { return v; });
    EXPECT_LT(got.max_abs_diff(want), 1e-12) << steps;
  }
}

TEST(Euler, StraightPathFieldAgreesAcrossStepCounts) {
  // The exact rectified-flow field toward a fixed x0 keeps Euler on the path.
  Rng rng(2);
  const Tensor x0 = rng.normal_tensor({4, 4, 3}, 1.0, DType::F64);
  const Tensor x1 = rng.normal_tensor({4, 4, 3}, 1.0, DType::F64);
  auto field = [&](const Tensor& x, double t) { return ops::scale(ops::sub(x, x0), 1.0 / t); };
  const Tensor one = euler_integrate(x1, 1, field);
  const Tensor hundred = euler_integrate(x1, 100, field);
  EXPECT_LT(one.max_abs_diff(x0), 1e-12);
  EXPECT_LT(hundred.max_abs_diff(x0), 1e-9);
}

TEST(Euler, TimeGridStartsAtOneAndStepsDown) {
  std::vector<double> times;
  euler_integrate(Tensor::zeros({1, 1, 3}), 4, [&](const Tensor& x, double t) {
    times.push_back(t);
    return Tensor::zeros(x.shape());
  });
  const std::vector<double> want{1.0, 0.75, 0.5, 0.25};
  EXPECT_EQ(times, want);
}

TEST(Euler, NonFiniteStateNamesTheStep) {
  std::size_t calls = 0;
  try {
    euler_integrate(Tensor::zeros({1, 1, 3}), 10, [&](const Tensor& x, double) {
      const double v = calls++ == 3 ? std::numeric_limits<double>::quiet_NaN() : 0.1;
      return Tensor::full(x.shape(), v);
    });
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(euler_integrate(Tensor::zeros({1, 1, 3}), 0, {}), ConfigError);
}

TEST(Guidance, Identities) {
  Rng rng(3);
  const Tensor c = rng.normal_tensor({2, 2, 3}, 1.0, DType::F64);
  const Tensor u = rng.normal_tensor({2, 2, 3}, 1.0, DType::F64);
  EXPECT_LT(cfg_velocity(c, u, 0.0).max_abs_diff(u), 1e-12);
  EXPECT_TRUE(cfg_velocity(c, u, 1.0).bit_equal(c));
  const Tensor two = cfg_velocity(c, u, 2.0);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(two[i], 2 * c[i] - u[i], 1e-12);
  EXPECT_THROW(cfg_velocity(c, Tensor::zeros({2, 2, 2}), 2.0), DimensionError);
}

class SamplerModel : public ::testing::Test {
 protected:
  void SetUp() override {
    ModelConfig c = testing::small_config();
    model_ = std::make_unique<Model>(c);
    testing::jitter(*model_, 21);
    Rng rng(22);
    for (int i = 0; i < 2; ++i) scenes_.push_back(synth_scene(rng, PairingKind::Cross, c.image_side));
  }

  SampleSpec spec(std::size_t subjects) const {
    SampleSpec s;
    s.steps = 3;
    s.text = scenes_[0].text;
    s.seed = 5;
    for (std::size_t i = 0; i < subjects; ++i) s.subjects.push_back(subject_from_scene(*model_, scenes_[i]));
    return s;
  }

  std::size_t tokens() const { return model_->config().image_tokens(); }

  std::unique_ptr<Model> model_;
  std::vector<ToyScene> scenes_;
};

TEST_F(SamplerModel, ZeroWeightSubjectIsBitIdentical) {
  const SampleSpec one = spec(1);
  SampleSpec two = spec(2);
  two.subjects[1].weight = 0.0;
  EXPECT_TRUE(euler_sample(*model_, one).bit_equal(euler_sample(*model_, two)));
}

TEST_F(SamplerModel, ManualCoefficientsEqualToRoutedAreBitIdentical) {
  const SampleSpec routed = spec(1);
  Tape tape(false);
  ModelInput in = conditioned_input(routed, initial_noise(*model_, 1), 1.0);
  const ForwardOutput out = forward(tape, *model_, in, ForwardOptions{});
  SampleSpec manual = routed;
  manual.coefficients = out.coefficients.at(0);
  manual.coefficients->source = CoefficientSource::Manual;
  EXPECT_TRUE(euler_sample(*model_, routed).bit_equal(euler_sample(*model_, manual)));
}

TEST_F(SamplerModel, FullMaskSingleSubjectMatchesUnmasked) {
  const SampleSpec plain = spec(1);
  SampleSpec masked = plain;
  masked.subjects[0].mask.assign(tokens(), 1.0);
  EXPECT_TRUE(euler_sample(*model_, plain).bit_equal(euler_sample(*model_, masked)));
}

TEST_F(SamplerModel, ComposeIsSymmetricInSubjectOrder) {
  SampleSpec ab = spec(2);
  std::vector<double> left(tokens(), 0.0);
  for (std::size_t i = 0; i < tokens(); i += 2) left[i] = 1.0;
  std::vector<double> right(tokens());
  for (std::size_t i = 0; i < tokens(); ++i) right[i] = 1.0 - left[i];
  ab.subjects[0].mask = left;
  ab.subjects[1].mask = right;
  SampleSpec ba = ab;
  std::swap(ba.subjects[0], ba.subjects[1]);
  EXPECT_LT(compose_multi(*model_, ab).max_abs_diff(compose_multi(*model_, ba)), 1e-6);
}

TEST_F(SamplerModel, ComposeReducesToMaskedSingleSubject) {
  SampleSpec pair = spec(2);
  std::vector<double> left(tokens(), 0.0);
  left[0] = 1.0;
  pair.subjects[0].mask = left;
  pair.subjects[1].mask.assign(tokens(), 1.0);
  pair.subjects[1].weight = 0.0;
  SampleSpec single = spec(1);
  single.subjects[0].mask = left;
  EXPECT_TRUE(compose_multi(*model_, pair).bit_equal(euler_sample(*model_, single)));
}

TEST_F(SamplerModel, ComplementaryMasksWithOneSubjectMatchSingleSubject) {
  const SampleSpec single = spec(1);
  SampleSpec split = single;
  split.subjects.push_back(single.subjects[0]);
  std::vector<double> left(tokens(), 0.0);
  for (std::size_t i = 0; i < tokens(); i += 3) left[i] = 1.0;
  split.subjects[0].mask = left;
  for (double& v : left) v = 1.0 - v;
  split.subjects[1].mask = left;
  EXPECT_LT(compose_multi(*model_, split).max_abs_diff(euler_sample(*model_, single)), 1e-6);
}

TEST_F(SamplerModel, GuidanceOneSkipsUnconditionalPass) {
  SampleSpec s = spec(1);
  s.guidance = 1.0;
  const Tensor x = initial_noise(*model_, 9);
  const Tensor v = guided_velocity(*model_, s, x, 0.5);
  ForwardOptions opts;
  EXPECT_TRUE(v.bit_equal(predict_velocity(*model_, conditioned_input(s, x, 0.5), opts)));
  s.guidance = 3.0;
  const Tensor u = predict_velocity(*model_, unconditional_input(x, 0.5), opts);
  EXPECT_LT(guided_velocity(*model_, s, x, 0.5).max_abs_diff(cfg_velocity(v, u, 3.0)), 1e-6);
}

TEST_F(SamplerModel, SameSeedSameSample) {
  const SampleSpec s = spec(1);
  EXPECT_TRUE(euler_sample(*model_, s).bit_equal(euler_sample(*model_, s)));
  SampleSpec other = s;
  other.seed = 6;
  EXPECT_GT(euler_sample(*model_, s).max_abs_diff(euler_sample(*model_, other)), 0.0);
}

TEST_F(SamplerModel, ContractChecks) {
  SampleSpec s = spec(1);
  EXPECT_THROW(compose_multi(*model_, s), ContractError);
  s = spec(2);
  s.subjects[0].mask.assign(tokens(), 1.0);
  EXPECT_THROW(compose_multi(*model_, s), ContractError);  // second subject unmasked
  s.subjects[1].mask.assign(tokens(), 1.0);
  s.mode = AttentionMode::BothBranchesLegacy;
  EXPECT_THROW(compose_multi(*model_, s), ContractError);
  s = spec(1);
  s.subjects[0].mask.assign(tokens() + 1, 1.0);
  EXPECT_THROW(euler_sample(*model_, s), DimensionError);
  s.subjects[0].mask.assign(tokens(), 0.5);
  EXPECT_THROW(euler_sample(*model_, s), ValidationError);
  s = spec(1);
  s.subjects[0].weight = -1.0;
  EXPECT_THROW(euler_sample(*model_, s), ValidationError);
  s.subjects[0].weight = 1.0;
  s.steps = 0;
  EXPECT_THROW(euler_sample(*model_, s), ConfigError);
}

}  // namespace
}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dynaip/error.hpp"
#include "dynaip/hmoe.hpp"
#include "test_support.hpp"

namespace dynaip {
namespace {

struct Fixture {
  ParamStore params;
  HierFeatures features;

  explicit Fixture(std::uint64_t seed, std::size_t g = 9, std::size_t d1 = 8, std::size_t d = 12) {
    Rng rng(seed);
    add_hmoe_params(params, HmoeConfig{d1, d, 0}, rng);
    // Nonzero biases and router outputs so nothing sits at a symmetric point.
    for (Param& p : params.params()) {
      std::vector<double> v(p.value.data().begin(), p.value.data().end());
      for (double& x : v) x += 0.2 * rng.normal();
      p.value = Tensor(p.value.shape(), std::move(v));
    }
    features = random_features(rng, g, d1);
  }

  static HierFeatures random_features(Rng& rng, std::size_t g, std::size_t d1) {
    HierFeatures f;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      f.full[l] = rng.normal_tensor({g, d1}, 1.0);
      f.cls[l] = rng.normal_tensor({1, d1}, 2.0);
    }
    return f;
  }
};

TEST(Routing, WeightsSumToOneOverRandomClassTokens) {
  Fixture fx(1);
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const HierFeatures f = Fixture::random_features(rng, 4, 8);
    Tape tape(false);
    const Routing r = route(tape, fx.params, f);
    double total = 0.0;
    for (double w : r.weights.value().data()) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    ASSERT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Routing, SoftmaxIsShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = rng.normal_tensor({1, 3}, 3.0, DType::F64);
    const double shift = rng.uniform(-50.0, 50.0);
    Tape tape(false);
    const Tensor a = route_from_logits(tape.constant(logits)).value();
    const Tensor b = route_from_logits(add_const(tape.constant(logits), shift)).value();
    EXPECT_LT(a.max_abs_diff(b), 1e-6);
  }
}

TEST(Routing, HandSetLogits) {
  Tape tape(false);
  const Tensor logits({1, 3}, {0.0, std::numbers::ln2, 2.0 * std::numbers::ln2}, DType::F64);
  const Tensor w = route_from_logits(tape.constant(logits)).value();
  EXPECT_NEAR(w[0], 1.0 / 7.0, 1e-6);
  EXPECT_NEAR(w[1], 2.0 / 7.0, 1e-6);
  EXPECT_NEAR(w[2], 4.0 / 7.0, 1e-6);
}

TEST(Routing, RejectsWrongLogitShape) {
  Tape tape(false);
  EXPECT_THROW(route_from_logits(tape.constant(Tensor::zeros({1, 4}))), DimensionError);
}

TEST(ManualCoefficients, Validation) {
  EXPECT_NO_THROW(manual_coefficients(0.2, 0.3, 0.5));
  EXPECT_NO_THROW(manual_coefficients(0.0, 0.0, 1.0 + 5e-7));
  EXPECT_THROW(manual_coefficients(0.5, 0.5, 0.5), ValidationError);
  EXPECT_THROW(manual_coefficients(-0.1, 0.6, 0.5), ValidationError);
  EXPECT_THROW(manual_coefficients(std::nan(""), 0.5, 0.5), ValidationError);
  EXPECT_EQ(manual_coefficients(0, 1, 0).source, CoefficientSource::Manual);
}

TEST(Fusion, OneHotSelectsExpertBitwise) {
  Fixture fx(4);
  Tape tape(false);
  const auto experts = expert_apply(tape, fx.params, fx.features);
  const Tensor high = fuse(experts, manual_coefficients(0, 0, 1)).value();
  EXPECT_TRUE(high.bit_equal(experts[2].value()));
  const Tensor low = fuse(experts, manual_coefficients(1, 0, 0)).value();
  EXPECT_TRUE(low.bit_equal(experts[0].value()));
}

TEST(Fusion, EqualExpertsAreAFixedPoint) {
  Rng rng(5);
  Tape tape(false);
  Var e = tape.constant(rng.normal_tensor({6, 4}, 1.0, DType::F64));
  const std::array<Var, kNumLevels> experts{e, e, e};
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(), b = rng.uniform() * (1 - a);
    EXPECT_LT(fuse(experts, manual_coefficients(a, b, 1 - a - b)).value().max_abs_diff(e.value()), 1e-12);
  }
}

TEST(Fusion, WeightedSumMatchesHandExpansion) {
  Fixture fx(6);
  Tape tape(false);
  const auto experts = expert_apply(tape, fx.params, fx.features);
  const FusionCoefficients w = manual_coefficients(0.2, 0.5, 0.3);
  const Tensor fused = fuse(experts, w).value();
  for (std::size_t i = 0; i < fused.numel(); ++i) {
    const double want = 0.2 * experts[0].value()[i] + 0.5 * experts[1].value()[i] + 0.3 * experts[2].value()[i];
    EXPECT_NEAR(fused[i], want, 1e-6);
  }
}

TEST(Fusion, RejectsWeightsNotSummingToOne) {
  Fixture fx(7);
  Tape tape(false);
  const auto experts = expert_apply(tape, fx.params, fx.features);
  EXPECT_THROW(fuse(experts, tape.constant(Tensor::row(std::array<double, 3>{0.5, 0.5, 0.5}))), ContractError);
}

TEST(Fusion, ExpertIsLayerNormOfGelu) {
  Fixture fx(8);
  Tape tape(false);
  const Tensor e = expert_apply(tape, fx.params, Level::Mid, tape.constant(fx.features.full_at(Level::Mid))).value();
  const Tensor pre = ops::add(ops::matmul(fx.features.full_at(Level::Mid), fx.params.get(expert_param(Level::Mid, "weight"))),
                              ops::matmul(Tensor::full({9, 1}, 1.0), fx.params.get(expert_param(Level::Mid, "bias"))));
  const Tensor want = ops::layer_norm(ops::gelu(pre), fx.params.get(expert_param(Level::Mid, "ln.gamma")),
                                      fx.params.get(expert_param(Level::Mid, "ln.beta")), 1e-5);
  EXPECT_LT(e.max_abs_diff(want), 1e-5);
}

TEST(Fusion, SingleHighEqualsOneHotFusion) {
  Fixture fx(9);
  Tape tape(false);
  FusionOptions single;
  single.mode = FusionMode::SingleHigh;
  const Tensor a = fuse_features(tape, fx.params, fx.features, single).tokens.value();
  FusionOptions manual;
  manual.override_coefficients = manual_coefficients(0, 0, 1);
  const Tensor b = fuse_features(tape, fx.params, fx.features, manual).tokens.value();
  EXPECT_LT(a.max_abs_diff(b), 1e-6);
}

TEST(Fusion, OverrideEqualToRoutedIsBitIdentical) {
  Fixture fx(10);
  Tape tape(false);
  const FusionResult routed = fuse_features(tape, fx.params, fx.features, FusionOptions{});
  FusionOptions o;
  o.override_coefficients = routed.coefficients;
  const FusionResult manual = fuse_features(tape, fx.params, fx.features, o);
  EXPECT_TRUE(routed.tokens.value().bit_equal(manual.tokens.value()));
}

TEST(Fusion, BaselinesProduceModelWidthTokens) {
  Fixture fx(11);
  for (FusionMode m : {FusionMode::Add, FusionMode::Concat, FusionMode::SingleLow, FusionMode::SingleMid}) {
    Tape tape(false);
    const Tensor t = baseline_fuse(tape, fx.params, fx.features, m).value();
    EXPECT_EQ(t.shape(), (Shape{9, 12})) << fusion_mode_name(m);
  }
  Tape tape(false);
  EXPECT_THROW(baseline_fuse(tape, fx.params, fx.features, FusionMode::Hmoe), ContractError);
  EXPECT_EQ(parse_fusion_mode("single:mid"), FusionMode::SingleMid);
  EXPECT_THROW(parse_fusion_mode("mean"), ValidationError);
}

TEST(Fusion, WidthMismatchIsConfigError) {
  Fixture fx(12);
  Rng rng(1);
  const HierFeatures wide = Fixture::random_features(rng, 9, 10);
  Tape tape(false);
  EXPECT_THROW(expert_apply(tape, fx.params, wide), ConfigError);
}

TEST(ExpertDropout, EmpiricalRateWithinThreeSigma) {
  Fixture fx(13);
  Tape tape(false);
  const auto experts = expert_apply(tape, fx.params, fx.features);
  Var weights = route(tape, fx.params, fx.features).weights;
  Rng rng(14);
  constexpr std::size_t kDraws = 10000;
  constexpr double p = 0.05;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < kDraws; ++i) {
    const DroppedExperts d = expert_dropout(experts, weights, p, rng);
    for (bool b : d.dropped) dropped += b ? 1 : 0;
    if (!d.all_dropped()) {
      double total = 0.0;
      for (double w : d.weights.value().data()) total += w;
      ASSERT_NEAR(total, 1.0, 1e-6);
    }
  }
  const double n = 3.0 * kDraws;
  const double sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(static_cast<double>(dropped) / n, p, 3 * sigma);
}

TEST(ExpertDropout, RenormalizationArithmetic) {
  const auto w = renormalize_surviving({0.2, 0.3, 0.5}, {false, true, false});
  EXPECT_NEAR(w[0], 0.2 / 0.7, 1e-15);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_NEAR(w[2], 0.5 / 0.7, 1e-15);
  const auto none = renormalize_surviving({0.2, 0.3, 0.5}, {true, true, true});
  EXPECT_EQ(none[0] + none[1] + none[2], 0.0);
}

TEST(ExpertDropout, AllDroppedGivesZeroTokens) {
  Fixture fx(15);
  Rng rng(16);
  FusionOptions o;
  o.expert_dropout = 0.9;
  o.rng = &rng;
  bool seen = false;
  for (int i = 0; i < 500 && !seen; ++i) {
    Tape tape(false);
    const FusionResult r = fuse_features(tape, fx.params, fx.features, o);
    if (r.dropped[0] && r.dropped[1] && r.dropped[2]) {
      seen = true;
      EXPECT_EQ(r.tokens.value().max_abs(), 0.0);
      EXPECT_EQ(r.tokens.shape(), (Shape{9, 12}));
    }
  }
  EXPECT_TRUE(seen);
}

TEST(ExpertDropout, ZeroProbabilityIsIdentityAndDrawsNothing) {
  Fixture fx(17);
  Tape tape(false);
  const auto experts = expert_apply(tape, fx.params, fx.features);
  Var weights = route(tape, fx.params, fx.features).weights;
  Rng a(5), b(5);
  const DroppedExperts d = expert_dropout(experts, weights, 0.0, a);
  EXPECT_EQ(d.weights.id(), weights.id());
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_THROW(expert_dropout(experts, weights, 1.0, a), ContractError);
}

}  // namespace
}  // namespace dynaip

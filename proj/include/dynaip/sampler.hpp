// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dynaip/model.hpp"

namespace dynaip {

/// One reference subject for sampling.
struct SubjectSpec {
  HierFeatures features;
  std::vector<double> mask;  // per image token, empty = all ones
  double weight = 1.0;       // lambda_i
};

struct SampleSpec {
  std::size_t steps = 20;
  double guidance = 1.0;
  std::vector<std::size_t> text;  // empty: null text
  std::vector<SubjectSpec> subjects;
  std::optional<FusionCoefficients> coefficients;  // applied to every subject
  AttentionMode mode = AttentionMode::InferImageOnly;
  FusionMode fusion = FusionMode::Hmoe;
  std::uint64_t seed = 0;

  void validate(std::size_t image_tokens) const;
};

/// v(x, t) for the integrator.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

/// Euler steps on a uniform grid from t = 1 down to t = 0:
/// x <- x - dt * v(x, t). Throws NumericError naming the step on NaN.
Tensor euler_integrate(const Tensor& x1, std::size_t steps, const VelocityField& field);

/// v_uncond + s (v_cond - v_uncond); s == 1 returns v_cond unchanged.
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double s);

/// Conditioned model input at state x and time t.
ModelInput conditioned_input(const SampleSpec& spec, const Tensor& x, double t);
/// Unconditional input: null text and no reference.
ModelInput unconditional_input(const Tensor& x, double t);

/// Starting noise drawn from spec.seed.
Tensor initial_noise(const Model& model, std::uint64_t seed);

/// Guided velocity of the model under spec.
Tensor guided_velocity(const Model& model, const SampleSpec& spec, const Tensor& x, double t);

Tensor euler_sample(const Model& model, const SampleSpec& spec);

/// Multi-subject composition with per-subject token masks; needs at least
/// two masked subjects and the image-only adapter wiring.
Tensor compose_multi(const Model& model, const SampleSpec& spec);

}  // namespace dynaip

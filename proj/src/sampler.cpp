// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/sampler.hpp"

#include "dynaip/error.hpp"

namespace dynaip {

void SampleSpec::validate(std::size_t image_tokens) const {
  if (steps == 0) throw ConfigError("sampling needs at least one step");
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectSpec& s = subjects[i];
    if (!s.mask.empty() && s.mask.size() != image_tokens) {
      throw DimensionError("mask of subject " + std::to_string(i) + " has " + std::to_string(s.mask.size()) +
                           " entries, the image has " + std::to_string(image_tokens) + " tokens");
    }
    for (double v : s.mask) {
      if (v != 0.0 && v != 1.0) throw ValidationError("mask of subject " + std::to_string(i) + " is not binary");
    }
    if (!(s.weight >= 0.0)) throw ValidationError("subject weight must be nonnegative");
  }
}

Tensor euler_integrate(const Tensor& x1, std::size_t steps, const VelocityField& field) {
  if (steps == 0) throw ConfigError("euler_integrate: steps must be positive");
  Tensor x = x1;
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = 1.0 - static_cast<double>(k) * dt;
    const Tensor v = field(x, t);
    if (v.shape() != x.shape()) {
      throw DimensionError("velocity " + shape_string(v.shape()) + " does not match state " + shape_string(x.shape()));
    }
    x = ops::sub(x, ops::scale(v, dt));
    if (!x.all_finite()) {
      throw NumericError("non-finite sampler state after step " + std::to_string(k) + " (t = " + std::to_string(t) +
                         ")");
    }
  }
  return x;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_uncond, double s) {
  if (v_cond.shape() != v_uncond.shape()) {
    throw DimensionError("guidance: conditional " + shape_string(v_cond.shape()) + " vs unconditional " +
                         shape_string(v_uncond.shape()));
  }
  if (s == 1.0) return v_cond;
  return ops::add(v_uncond, ops::scale(ops::sub(v_cond, v_uncond), s));
}

ModelInput conditioned_input(const SampleSpec& spec, const Tensor& x, double t) {
  ModelInput in;
  in.noisy = x;
  in.t = t;
  in.text = spec.text;
  in.null_text = spec.text.empty();
  for (const SubjectSpec& s : spec.subjects) {
    // A zero-weight subject contributes nothing; leaving it out keeps the
    // result bit-identical to sampling without it.
    if (s.weight == 0.0) continue;
    ReferenceInput ref;
    ref.features = s.features;
    ref.mask = s.mask;
    ref.weight = s.weight;
    ref.coefficients = spec.coefficients;
    in.references.push_back(std::move(ref));
  }
  return in;
}

ModelInput unconditional_input(const Tensor& x, double t) {
  ModelInput in;
  in.noisy = x;
  in.t = t;
  in.null_text = true;
  return in;
}

Tensor initial_noise(const Model& model, std::uint64_t seed) {
  const ModelConfig& c = model.config();
  Rng rng(seed);
  return rng.normal_tensor({c.image_side, c.image_side, c.channels}, 1.0);
}

Tensor guided_velocity(const Model& model, const SampleSpec& spec, const Tensor& x, double t) {
  ForwardOptions opts;
  opts.mode = spec.mode;
  opts.fusion = spec.fusion;
  const Tensor v_cond = predict_velocity(model, conditioned_input(spec, x, t), opts);
  if (spec.guidance == 1.0) return v_cond;
  const Tensor v_uncond = predict_velocity(model, unconditional_input(x, t), opts);
  return cfg_velocity(v_cond, v_uncond, spec.guidance);
}

Tensor euler_sample(const Model& model, const SampleSpec& spec) {
  spec.validate(model.config().image_tokens());
  return euler_integrate(initial_noise(model, spec.seed), spec.steps,
                         [&](const Tensor& x, double t) { return guided_velocity(model, spec, x, t); });
}

Tensor compose_multi(const Model& model, const SampleSpec& spec) {
  if (spec.subjects.size() < 2) throw ContractError("compose_multi needs at least two subjects");
  if (spec.mode != AttentionMode::InferImageOnly) {
    throw ContractError("compose_multi requires the image-only adapter wiring");
  }
  for (std::size_t i = 0; i < spec.subjects.size(); ++i) {
    if (spec.subjects[i].mask.empty()) throw ContractError("subject " + std::to_string(i) + " has no mask");
  }
  return euler_sample(model, spec);
}

}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/hmoe.hpp"

#include <cmath>

#include "dynaip/error.hpp"

namespace dynaip {

namespace {

constexpr double kExpertNormEps = 1e-5;

std::size_t index_of(Level l) { return static_cast<std::size_t>(l); }

void check_width(const ParamStore& params, const HierFeatures& features) {
  const std::size_t d1 = params.get(expert_param(Level::Low, "weight")).rows();
  if (features.width() != d1) {
    throw ConfigError("feature width " + std::to_string(features.width()) + " does not match expert input width " +
                      std::to_string(d1));
  }
}

Var ln_gelu_head(Tape& tape, const ParamStore& params, const std::string& prefix, Var pre) {
  return layer_norm(gelu(pre), params.bind(tape, prefix + ".ln.gamma"), params.bind(tape, prefix + ".ln.beta"),
                    kExpertNormEps);
}

}  // namespace

const char* source_name(CoefficientSource source) {
  return source == CoefficientSource::Routed ? "routed" : "manual";
}

FusionCoefficients manual_coefficients(double low, double mid, double high) {
  for (double v : {low, mid, high}) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("fusion coefficients must be finite and nonnegative");
  }
  const double total = low + mid + high;
  if (std::abs(total - 1.0) > kCoefficientTolerance) {
    throw ValidationError("fusion coefficients sum to " + std::to_string(total) + ", expected 1");
  }
  return FusionCoefficients{{low, mid, high}, CoefficientSource::Manual};
}

const char* fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::Hmoe: return "hmoe";
    case FusionMode::Add: return "add";
    case FusionMode::Concat: return "concat";
    case FusionMode::SingleLow: return "single:low";
    case FusionMode::SingleMid: return "single:mid";
    case FusionMode::SingleHigh: return "single:high";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& name) {
  for (FusionMode m : {FusionMode::Hmoe, FusionMode::Add, FusionMode::Concat, FusionMode::SingleLow,
                       FusionMode::SingleMid, FusionMode::SingleHigh}) {
    if (name == fusion_mode_name(m)) return m;
  }
  throw ValidationError("unknown fusion mode '" + name + "'");
}

std::string expert_param(Level l, const char* leaf) {
  return std::string("hmoe.expert.") + level_name(l) + "." + leaf;
}

std::string router_param(Level l, const char* leaf) {
  return std::string("hmoe.router.") + level_name(l) + "." + leaf;
}

bool is_hmoe_param(const std::string& name) { return name.rfind("hmoe.", 0) == 0; }
bool is_router_param(const std::string& name) { return name.rfind("hmoe.router.", 0) == 0; }

void add_hmoe_params(ParamStore& params, const HmoeConfig& config, Rng& rng) {
  const std::size_t d1 = config.in_width, d = config.out_width, hid = config.hidden();
  for (Level l : kLevels) {
    params.add(expert_param(l, "weight"), init_weight(rng, d1, d));
    params.add(expert_param(l, "bias"), Tensor::zeros({1, d}));
    params.add(expert_param(l, "ln.gamma"), Tensor::full({1, d}, 1.0));
    params.add(expert_param(l, "ln.beta"), Tensor::zeros({1, d}));
  }
  for (Level l : kLevels) {
    params.add(router_param(l, "w1"), init_weight(rng, d1, hid));
    params.add(router_param(l, "b1"), Tensor::zeros({1, hid}));
    params.add(router_param(l, "w2"), init_weight(rng, hid, 1));
    params.add(router_param(l, "b2"), Tensor::zeros({1, 1}));
  }
  for (Level l : kLevels) params.add(std::string("hmoe.add.w.") + level_name(l), init_weight(rng, d1, d));
  params.add("hmoe.add.bias", Tensor::zeros({1, d}));
  params.add("hmoe.add.ln.gamma", Tensor::full({1, d}, 1.0));
  params.add("hmoe.add.ln.beta", Tensor::zeros({1, d}));
  params.add("hmoe.concat.weight", init_weight(rng, 3 * d1, d));
  params.add("hmoe.concat.bias", Tensor::zeros({1, d}));
  params.add("hmoe.concat.ln.gamma", Tensor::full({1, d}, 1.0));
  params.add("hmoe.concat.ln.beta", Tensor::zeros({1, d}));
}

Var expert_apply(Tape& tape, const ParamStore& params, Level level, Var full) {
  const Tensor& w = params.get(expert_param(level, "weight"));
  if (full.cols() != w.rows()) {
    throw ConfigError(std::string("expert ") + level_name(level) + ": input width " + std::to_string(full.cols()) +
                      " vs " + std::to_string(w.rows()));
  }
  Var pre = linear(full, params.bind(tape, expert_param(level, "weight")), params.bind(tape, expert_param(level, "bias")));
  return ln_gelu_head(tape, params, std::string("hmoe.expert.") + level_name(level), pre);
}

std::array<Var, kNumLevels> expert_apply(Tape& tape, const ParamStore& params, const HierFeatures& features) {
  features.validate();
  check_width(params, features);
  std::array<Var, kNumLevels> out;
  for (Level l : kLevels) out[index_of(l)] = expert_apply(tape, params, l, tape.constant(features.full_at(l)));
  return out;
}

Var route_from_logits(Var logits) {
  if (logits.rows() != 1 || logits.cols() != kNumLevels) {
    throw DimensionError("router logits must be 1 x 3, got " + shape_string(logits.shape()));
  }
  return softmax_rows(logits);
}

Routing route(Tape& tape, const ParamStore& params, const HierFeatures& features) {
  features.validate();
  check_width(params, features);
  std::array<Var, kNumLevels> logits;
  for (Level l : kLevels) {
    Var cls = tape.constant(features.cls_at(l));
    Var hidden = tanh(linear(cls, params.bind(tape, router_param(l, "w1")), params.bind(tape, router_param(l, "b1"))));
    logits[index_of(l)] = linear(hidden, params.bind(tape, router_param(l, "w2")), params.bind(tape, router_param(l, "b2")));
  }
  Var joined = concat_cols(logits);
  return Routing{joined, route_from_logits(joined)};
}

FusionCoefficients coefficients_of(const Routing& routing) {
  const Tensor& w = routing.weights.value();
  return FusionCoefficients{{w[0], w[1], w[2]}, CoefficientSource::Routed};
}

Var fuse(const std::array<Var, kNumLevels>& experts, Var weights) {
  if (weights.value().numel() != kNumLevels) {
    throw DimensionError("fusion weights must have 3 entries, got " + shape_string(weights.shape()));
  }
  for (const Var& e : experts) {
    if (e.shape() != experts[0].shape()) throw DimensionError("expert outputs differ in shape");
  }
  double total = 0.0;
  for (double v : weights.value().data()) total += v;
  if (std::abs(total - 1.0) > kCoefficientTolerance) {
    throw ContractError("fusion weights sum to " + std::to_string(total) + ", expected 1");
  }
  Var acc = mul_scalar(experts[0], slice_cols(weights, 0, 1));
  for (std::size_t l = 1; l < kNumLevels; ++l) acc = add(acc, mul_scalar(experts[l], slice_cols(weights, l, 1)));
  return acc;
}

Var fuse(const std::array<Var, kNumLevels>& experts, const FusionCoefficients& coefficients) {
  Tape& tape = *experts[0].tape();
  const DType dtype = experts[0].value().dtype();
  return fuse(experts, tape.constant(Tensor::row(coefficients.w, dtype)));
}

std::array<double, kNumLevels> renormalize_surviving(const std::array<double, kNumLevels>& w,
                                                      const std::array<bool, kNumLevels>& dropped) {
  double kept = 0.0;
  for (std::size_t l = 0; l < kNumLevels; ++l) kept += dropped[l] ? 0.0 : w[l];
  std::array<double, kNumLevels> out{};
  if (kept <= 0.0) return out;
  for (std::size_t l = 0; l < kNumLevels; ++l) out[l] = dropped[l] ? 0.0 : w[l] / kept;
  return out;
}

DroppedExperts expert_dropout(const std::array<Var, kNumLevels>& experts, Var weights, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("expert dropout probability must be in [0, 1)");
  DroppedExperts out{experts, weights, {}};
  if (p == 0.0) return out;
  for (std::size_t l = 0; l < kNumLevels; ++l) out.dropped[l] = rng.bernoulli(p);
  if (!out.dropped[0] && !out.dropped[1] && !out.dropped[2]) return out;

  Tape& tape = *weights.tape();
  const DType dtype = weights.value().dtype();
  std::array<double, kNumLevels> keep{};
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    keep[l] = out.dropped[l] ? 0.0 : 1.0;
    if (out.dropped[l]) out.experts[l] = tape.constant(Tensor::zeros(experts[l].shape(), dtype));
  }
  if (out.all_dropped()) {
    out.weights = tape.constant(Tensor::zeros({1, kNumLevels}, dtype));
    return out;
  }
  Var kept = mul(weights, tape.constant(Tensor::row(keep, dtype)));
  out.weights = mul_scalar(kept, reciprocal(sum(kept)));
  return out;
}

Var baseline_fuse(Tape& tape, const ParamStore& params, const HierFeatures& features, FusionMode mode) {
  features.validate();
  check_width(params, features);
  switch (mode) {
    case FusionMode::SingleLow:
    case FusionMode::SingleMid:
    case FusionMode::SingleHigh: {
      const Level l = mode == FusionMode::SingleLow ? Level::Low
                      : mode == FusionMode::SingleMid ? Level::Mid
                                                      : Level::High;
      return expert_apply(tape, params, l, tape.constant(features.full_at(l)));
    }
    case FusionMode::Add: {
      Var acc;
      for (Level l : kLevels) {
        Var term = matmul(tape.constant(features.full_at(l)), params.bind(tape, std::string("hmoe.add.w.") + level_name(l)));
        acc = acc.valid() ? add(acc, term) : term;
      }
      return ln_gelu_head(tape, params, "hmoe.add", add_row(acc, params.bind(tape, "hmoe.add.bias")));
    }
    case FusionMode::Concat: {
      std::array<Var, kNumLevels> parts;
      for (Level l : kLevels) parts[index_of(l)] = tape.constant(features.full_at(l));
      Var pre = linear(concat_cols(parts), params.bind(tape, "hmoe.concat.weight"), params.bind(tape, "hmoe.concat.bias"));
      return ln_gelu_head(tape, params, "hmoe.concat", pre);
    }
    case FusionMode::Hmoe:
      break;
  }
  throw ContractError("baseline_fuse: hmoe is not a baseline mode");
}

FusionResult fuse_features(Tape& tape, const ParamStore& params, const HierFeatures& features,
                           const FusionOptions& options) {
  if (options.mode != FusionMode::Hmoe) {
    return FusionResult{baseline_fuse(tape, params, features, options.mode), {}, {}};
  }
  auto experts = expert_apply(tape, params, features);
  FusionResult result;
  Var weights;
  if (options.override_coefficients) {
    result.coefficients = *options.override_coefficients;
    weights = tape.constant(Tensor::row(result.coefficients.w, experts[0].value().dtype()));
  } else {
    Routing routing = route(tape, params, features);
    result.coefficients = coefficients_of(routing);
    weights = routing.weights;
  }
  if (options.expert_dropout > 0.0) {
    if (!options.rng) throw ContractError("expert dropout requires an rng");
    DroppedExperts dropped = expert_dropout(experts, weights, options.expert_dropout, *options.rng);
    result.dropped = dropped.dropped;
    if (dropped.all_dropped()) {
      result.tokens = tape.constant(Tensor::zeros(experts[0].shape(), experts[0].value().dtype()));
      return result;
    }
    experts = dropped.experts;
    weights = dropped.weights;
  }
  result.tokens = fuse(experts, weights);
  return result;
}

}  // namespace dynaip

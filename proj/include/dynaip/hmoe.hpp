// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>

#include "dynaip/autodiff.hpp"
#include "dynaip/encoder.hpp"
#include "dynaip/params.hpp"
#include "dynaip/rng.hpp"

namespace dynaip {

// Hierarchical mixture-of-experts feature fusion.
//
// Each level l has an expert  e_l = LN(GELU(Phi_full_l W_l + b_l))  mapping
// encoder width d1 to model width d, and a router  MLP_l(Phi_cls_l) -> scalar
// logit (d1 -> hidden -> 1, tanh in between). The three logits go through one
// softmax, so the fusion weights are a convex combination.

struct HmoeConfig {
  std::size_t in_width = 32;       // d1
  std::size_t out_width = 32;      // d
  std::size_t router_hidden = 0;   // 0 selects d1
  std::size_t hidden() const { return router_hidden ? router_hidden : in_width; }
};

enum class CoefficientSource { Routed, Manual };
const char* source_name(CoefficientSource source);

struct FusionCoefficients {
  std::array<double, kNumLevels> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
  CoefficientSource source = CoefficientSource::Routed;

  double at(Level l) const { return w[static_cast<std::size_t>(l)]; }
};

inline constexpr double kCoefficientTolerance = 1e-6;

/// Validated user-supplied weights: nonnegative and summing to 1 within 1e-6.
FusionCoefficients manual_coefficients(double low, double mid, double high);

/// Which fuser turns hierarchical features into reference tokens.
enum class FusionMode { Hmoe, Add, Concat, SingleLow, SingleMid, SingleHigh };
const char* fusion_mode_name(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

/// Registers experts, routers and the add/concat baseline projections.
void add_hmoe_params(ParamStore& params, const HmoeConfig& config, Rng& rng);

std::string expert_param(Level l, const char* leaf);
std::string router_param(Level l, const char* leaf);
bool is_hmoe_param(const std::string& name);
bool is_router_param(const std::string& name);

/// e_l for one level (g x d).
Var expert_apply(Tape& tape, const ParamStore& params, Level level, Var full);
std::array<Var, kNumLevels> expert_apply(Tape& tape, const ParamStore& params, const HierFeatures& features);

struct Routing {
  Var logits;   // 1 x 3
  Var weights;  // 1 x 3, softmax(logits)
};
Routing route(Tape& tape, const ParamStore& params, const HierFeatures& features);
/// Softmax across the three level logits.
Var route_from_logits(Var logits);
FusionCoefficients coefficients_of(const Routing& routing);

/// Sum_l w_l e_l with w given as a 1 x 3 Var whose entries sum to 1.
Var fuse(const std::array<Var, kNumLevels>& experts, Var weights);
/// Same weighted sum with fixed coefficients (router bypassed).
Var fuse(const std::array<Var, kNumLevels>& experts, const FusionCoefficients& coefficients);

struct DroppedExperts {
  std::array<Var, kNumLevels> experts;  // dropped entries replaced by zeros
  Var weights;                          // surviving weights renormalized; zeros if all dropped
  std::array<bool, kNumLevels> dropped{};
  bool all_dropped() const { return dropped[0] && dropped[1] && dropped[2]; }
};

/// Drops each expert independently with probability p and renormalizes the
/// surviving weights. p == 0 is the identity and draws nothing from rng.
DroppedExperts expert_dropout(const std::array<Var, kNumLevels>& experts, Var weights, double p, Rng& rng);
/// Renormalization arithmetic of expert_dropout on plain numbers.
std::array<double, kNumLevels> renormalize_surviving(const std::array<double, kNumLevels>& w,
                                                      const std::array<bool, kNumLevels>& dropped);

/// Table-3 style baselines. Add: LN(GELU(sum_l Phi_l A_l + b)); concat:
/// LN(GELU([Phi_low | Phi_mid | Phi_high] B + b)); single: one expert path.
Var baseline_fuse(Tape& tape, const ParamStore& params, const HierFeatures& features, FusionMode mode);

struct FusionOptions {
  FusionMode mode = FusionMode::Hmoe;
  std::optional<FusionCoefficients> override_coefficients;
  double expert_dropout = 0.0;
  Rng* rng = nullptr;  // required when expert_dropout > 0
};

struct FusionResult {
  Var tokens;                       // g x d reference tokens
  FusionCoefficients coefficients;  // weights actually applied before dropout
  std::array<bool, kNumLevels> dropped{};
};

/// Reference tokens for one subject under the selected fuser.
FusionResult fuse_features(Tape& tape, const ParamStore& params, const HierFeatures& features,
                           const FusionOptions& options);

}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynaip/encoder.hpp"
#include "dynaip/hmoe.hpp"
#include "dynaip/mmdit.hpp"
#include "dynaip/params.hpp"

namespace dynaip {

/// Complete toy velocity network: patchified pixels and text tags in, one
/// velocity per pixel out, with reference subjects injected through the
/// adapter of every block.
struct ModelConfig {
  std::size_t image_side = 24;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t mlp_ratio = 2;
  std::size_t text_tokens = 3;
  std::size_t vocab = 12;
  std::size_t router_hidden = 0;
  bool rope = true;
  std::uint64_t seed = 7;
  EncoderConfig encoder;

  std::size_t grid() const { return image_side / patch; }
  std::size_t image_tokens() const { return grid() * grid(); }
  std::size_t token_dim() const { return patch * patch * channels; }
  MmditConfig mmdit() const;
  HmoeConfig hmoe() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class Model {
 public:
  /// Fresh parameters drawn from config.seed.
  explicit Model(ModelConfig config);
  /// Parameters supplied (e.g. from a checkpoint); names and shapes must
  /// match a fresh model of the same config.
  Model(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const HierEncoder& encoder() const { return encoder_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  Model with_dtype(DType dtype) const;
  /// Marks parameters trainable: adapter K/V and fusion always; base
  /// streams only when train_base is set. The text table stays frozen.
  void set_trainable(bool train_base);

 private:
  ModelConfig config_;
  HierEncoder encoder_;
  ParamStore params_;
};

bool is_base_param(const std::string& name);

/// One reference subject for a forward pass.
struct ReferenceInput {
  HierFeatures features;
  std::vector<double> mask;  // per image token; empty = everywhere
  double weight = 1.0;       // lambda_i
  std::optional<FusionCoefficients> coefficients;  // manual granularity override
  bool null_image = false;   // zero reference tokens
};

struct ModelInput {
  Tensor noisy;  // H x W x C state x_t
  double t = 0.0;
  std::vector<std::size_t> text;  // tag ids, config.text_tokens of them (may be empty)
  bool null_text = false;
  std::vector<ReferenceInput> references;
};

struct ForwardOptions {
  AttentionMode mode = AttentionMode::InferImageOnly;
  FusionMode fusion = FusionMode::Hmoe;
  double expert_dropout = 0.0;
  Rng* rng = nullptr;
  AdapterProbe* probe = nullptr;
};

struct ForwardOutput {
  Var velocity;  // m x token_dim, patch layout
  std::vector<FusionCoefficients> coefficients;
  std::vector<Var> reference_tokens;
};

Tensor timestep_embedding(double t, std::size_t width);

ForwardOutput forward(Tape& tape, const Model& model, const ModelInput& input, const ForwardOptions& options);

/// Velocity as an H x W x C image, computed without recording gradients.
Tensor predict_velocity(const Model& model, const ModelInput& input, const ForwardOptions& options);

}  // namespace dynaip

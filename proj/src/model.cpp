// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/model.hpp"

#include <cmath>

#include "dynaip/error.hpp"
#include "dynaip/image.hpp"

namespace dynaip {

MmditConfig ModelConfig::mmdit() const {
  MmditConfig m;
  m.width = width;
  m.heads = heads;
  m.blocks = blocks;
  m.mlp_ratio = mlp_ratio;
  m.grid_h = grid();
  m.grid_w = grid();
  m.rope = rope;
  return m;
}

HmoeConfig ModelConfig::hmoe() const { return HmoeConfig{encoder.width, width, router_hidden}; }

void ModelConfig::validate() const {
  if (patch == 0 || image_side % patch != 0) throw ConfigError("image side must be divisible by patch");
  if (vocab == 0) throw ConfigError("vocabulary must be nonempty");
  if (width % 2 != 0) throw ConfigError("model width must be even");
  encoder.validate();
  mmdit().validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_side", c.image_side}, {"channels", c.channels},
                     {"patch", c.patch},           {"width", c.width},
                     {"heads", c.heads},           {"blocks", c.blocks},
                     {"mlp_ratio", c.mlp_ratio},   {"text_tokens", c.text_tokens},
                     {"vocab", c.vocab},           {"router_hidden", c.router_hidden},
                     {"rope", c.rope},             {"seed", c.seed},
                     {"encoder", c.encoder}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_side = j.value("image_side", d.image_side);
  c.channels = j.value("channels", d.channels);
  c.patch = j.value("patch", d.patch);
  c.width = j.value("width", d.width);
  c.heads = j.value("heads", d.heads);
  c.blocks = j.value("blocks", d.blocks);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.text_tokens = j.value("text_tokens", d.text_tokens);
  c.vocab = j.value("vocab", d.vocab);
  c.router_hidden = j.value("router_hidden", d.router_hidden);
  c.rope = j.value("rope", d.rope);
  c.seed = j.value("seed", d.seed);
  c.encoder = j.value("encoder", d.encoder);
}

namespace {

ParamStore fresh_params(const ModelConfig& c) {
  c.validate();
  Rng rng(c.seed);
  ParamStore p;
  const std::size_t d = c.width;
  p.add("text.table", rng.normal_tensor({c.vocab, d}, 1.0), false);
  p.add("text.null", rng.normal_tensor({1, d}, 1.0));
  p.add("text.proj.weight", init_weight(rng, d, d));
  p.add("text.proj.bias", Tensor::zeros({1, d}));
  p.add("img.in.weight", init_weight(rng, c.token_dim(), d));
  p.add("img.in.bias", Tensor::zeros({1, d}));
  p.add("time.weight", init_weight(rng, d, d));
  p.add("time.bias", Tensor::zeros({1, d}));
  add_mmdit_params(p, c.mmdit(), rng);
  p.add("final.mod.weight", Tensor::zeros({d, 2 * d}));
  p.add("final.mod.bias", Tensor::zeros({1, 2 * d}));
  p.add("final.weight", init_weight(rng, d, c.token_dim()));
  p.add("final.bias", Tensor::zeros({1, c.token_dim()}));
  add_hmoe_params(p, c.hmoe(), rng);
  return p;
}

}  // namespace

bool is_base_param(const std::string& name) { return !is_hmoe_param(name) && !is_adapter_param(name); }

Model::Model(ModelConfig config) : config_(config), encoder_(config.encoder), params_(fresh_params(config)) {
  set_trainable(true);
}

Model::Model(ModelConfig config, ParamStore params) : config_(config), encoder_(config.encoder) {
  const ParamStore reference = fresh_params(config);
  if (params.size() != reference.size()) {
    throw ConfigError("parameter set has " + std::to_string(params.size()) + " tensors, model expects " +
                      std::to_string(reference.size()));
  }
  for (const Param& p : reference.params()) {
    if (!params.contains(p.name)) throw ConfigError("missing parameter " + p.name);
    if (params.get(p.name).shape() != p.value.shape()) {
      throw DimensionError("parameter " + p.name + " has shape " + shape_string(params.get(p.name).shape()) +
                           ", model expects " + shape_string(p.value.shape()));
    }
  }
  // Keep the canonical order.
  for (const Param& p : reference.params()) params_.add(p.name, params.get(p.name), params.param(p.name).trainable);
  set_trainable(true);
}

Model Model::with_dtype(DType dtype) const { return Model(config_, params_.cast(dtype)); }

void Model::set_trainable(bool train_base) {
  params_.set_trainable([train_base](const std::string& name) {
    if (name == "text.table") return false;
    return train_base || !is_base_param(name);
  });
}

Tensor timestep_embedding(double t, std::size_t width) {
  const std::size_t half = width / 2;
  std::vector<double> out(width);
  const double tau = 1000.0 * t;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(tau * freq);
    out[half + k] = std::cos(tau * freq);
  }
  return Tensor({1, width}, std::move(out), DType::F64);
}

ForwardOutput forward(Tape& tape, const Model& model, const ModelInput& input, const ForwardOptions& options) {
  const ModelConfig& c = model.config();
  const ParamStore& params = model.params();
  const MmditConfig mc = c.mmdit();
  const std::size_t d = c.width;
  const DType dtype = params.get("img.in.weight").dtype();
  auto w = [&](const std::string& name) { return params.bind(tape, name); };

  if (input.noisy.rank() != 3 || input.noisy.dim(0) != c.image_side || input.noisy.dim(1) != c.image_side ||
      input.noisy.dim(2) != c.channels) {
    throw DimensionError("model expects a " + std::to_string(c.image_side) + "x" + std::to_string(c.image_side) +
                         "x" + std::to_string(c.channels) + " state, got " + shape_string(input.noisy.shape()));
  }
  if (!(input.t >= 0.0 && input.t <= 1.0)) throw ContractError("timestep must lie in [0, 1]");

  Var x = linear(tape.constant(patchify(input.noisy, c.patch).cast(dtype)), w("img.in.weight"), w("img.in.bias"));
  Var temb = gelu(linear(tape.constant(timestep_embedding(input.t, d).cast(dtype)), w("time.weight"), w("time.bias")));

  Var t;
  if (!input.text.empty() || input.null_text) {
    Var embedded;
    if (input.null_text) {
      std::vector<Var> rows(c.text_tokens, w("text.null"));
      embedded = concat_rows(rows);
    } else {
      if (input.text.size() != c.text_tokens) {
        throw DimensionError("expected " + std::to_string(c.text_tokens) + " text tags, got " +
                             std::to_string(input.text.size()));
      }
      const Tensor& table = params.get("text.table");
      std::vector<double> rows;
      for (std::size_t id : input.text) {
        if (id >= c.vocab) throw ValidationError("text tag id " + std::to_string(id) + " outside vocabulary");
        rows.insert(rows.end(), table.data().begin() + static_cast<std::ptrdiff_t>(id * d),
                    table.data().begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
      }
      embedded = tape.constant(Tensor({input.text.size(), d}, std::move(rows), dtype));
    }
    t = linear(embedded, w("text.proj.weight"), w("text.proj.bias"));
  }

  ForwardOutput out;
  std::vector<SubjectCondition> conditions;
  for (const ReferenceInput& ref : input.references) {
    Var tokens;
    FusionCoefficients coeffs;
    if (ref.null_image) {
      tokens = tape.constant(Tensor::zeros({ref.features.tokens(), d}, dtype));
    } else {
      FusionOptions fo;
      fo.mode = options.fusion;
      fo.override_coefficients = ref.coefficients;
      fo.expert_dropout = options.expert_dropout;
      fo.rng = options.rng;
      FusionResult fused = fuse_features(tape, params, ref.features, fo);
      tokens = fused.tokens;
      coeffs = fused.coefficients;
    }
    out.coefficients.push_back(coeffs);
    out.reference_tokens.push_back(tokens);
    conditions.push_back(SubjectCondition{tokens, ref.mask, ref.weight});
  }

  for (std::size_t b = 0; b < c.blocks; ++b) {
    auto [t_next, x_next] = block_forward(tape, params, mc, b, t, x, temb, conditions, options.mode, options.probe);
    t = t_next;
    x = x_next;
  }

  Var mod = linear(temb, w("final.mod.weight"), w("final.mod.bias"));
  Var ones = tape.constant(Tensor::full({1, d}, 1.0, dtype));
  Var zeros = tape.constant(Tensor::zeros({1, d}, dtype));
  Var xn = layer_norm(x, ones, zeros, 1e-5);
  xn = add_row(mul_row(xn, add_const(slice_cols(mod, d, d), 1.0)), slice_cols(mod, 0, d));
  out.velocity = linear(xn, w("final.weight"), w("final.bias"));
  return out;
}

Tensor predict_velocity(const Model& model, const ModelInput& input, const ForwardOptions& options) {
  Tape tape(false);
  ForwardOutput out = forward(tape, model, input, options);
  const ModelConfig& c = model.config();
  return unpatchify(out.velocity.value(), c.image_side, c.image_side, c.channels, c.patch);
}

}  // namespace dynaip

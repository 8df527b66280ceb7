// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/mmdit.hpp"

#include <array>
#include <cmath>

#include "dynaip/attention.hpp"
#include "dynaip/error.hpp"

namespace dynaip {

namespace {

constexpr double kNormEps = 1e-5;

Var block_leaf(Tape& tape, const ParamStore& params, std::size_t block, const std::string& leaf) {
  return params.bind(tape, block_param(block, leaf));
}

// LN without affine, then x * (1 + scale) + shift.
Var modulated_norm(Tape& tape, Var x, Var shift, Var scale_row) {
  const std::size_t d = x.cols();
  const DType dtype = x.value().dtype();
  Var ones = tape.constant(Tensor::full({1, d}, 1.0, dtype));
  Var zeros = tape.constant(Tensor::zeros({1, d}, dtype));
  Var normed = layer_norm(x, ones, zeros, kNormEps);
  return add_row(mul_row(normed, add_const(scale_row, 1.0)), shift);
}

Var mlp(Tape& tape, const ParamStore& params, std::size_t block, const std::string& stream, Var x) {
  Var h = gelu(linear(x, block_leaf(tape, params, block, stream + ".mlp.w1"), block_leaf(tape, params, block, stream + ".mlp.b1")));
  return linear(h, block_leaf(tape, params, block, stream + ".mlp.w2"), block_leaf(tape, params, block, stream + ".mlp.b2"));
}

void check_mask(const SubjectCondition& c, std::size_t m) {
  if (!c.mask.empty() && c.mask.size() != m) {
    throw DimensionError("subject mask has " + std::to_string(c.mask.size()) + " entries, expected " +
                         std::to_string(m) + " image tokens");
  }
  for (double v : c.mask) {
    if (v != 0.0 && v != 1.0) throw ValidationError("subject mask entries must be 0 or 1");
  }
  if (!std::isfinite(c.weight)) throw ValidationError("subject weight must be finite");
  if (!c.tokens.valid()) throw ContractError("subject condition without reference tokens");
}

bool full_mask(const SubjectCondition& c) {
  for (double v : c.mask) {
    if (v != 1.0) return false;
  }
  return true;
}

}  // namespace

void MmditConfig::validate() const {
  if (heads == 0 || width % heads != 0) throw ConfigError("model width not divisible by heads");
  if (rope && head_width() % 4 != 0) throw ConfigError("rotary encoding needs a head width divisible by 4");
  if (blocks == 0 || grid_h == 0 || grid_w == 0 || mlp_ratio == 0) throw ConfigError("degenerate model extents");
}

const char* attention_mode_name(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::TrainJoint: return "train_joint";
    case AttentionMode::InferImageOnly: return "infer_image_only";
    case AttentionMode::BothBranchesLegacy: return "both_branches_legacy";
    case AttentionMode::TextOnlyProbe: return "text_only_probe";
  }
  return "?";
}

AttentionMode parse_attention_mode(const std::string& name) {
  for (AttentionMode m : {AttentionMode::TrainJoint, AttentionMode::InferImageOnly, AttentionMode::BothBranchesLegacy,
                          AttentionMode::TextOnlyProbe}) {
    if (name == attention_mode_name(m)) return m;
  }
  throw ValidationError("unknown attention mode '" + name + "'");
}

Var MmaResult::q_text() const {
  if (text_tokens == 0) throw ContractError("no text tokens in this pass");
  return slice_rows(q, 0, text_tokens);
}

Var MmaResult::q_image() const {
  return text_tokens == 0 ? q : slice_rows(q, text_tokens, q.rows() - text_tokens);
}

std::string block_param(std::size_t block, const std::string& leaf) {
  return "block" + std::to_string(block) + "." + leaf;
}

bool is_adapter_param(const std::string& name) { return name.find(".adapter.") != std::string::npos; }

void add_mmdit_params(ParamStore& params, const MmditConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.width, hid = config.mlp_ratio * config.width;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    for (const std::string stream : {"txt", "img"}) {
      params.add(block_param(b, stream + ".mod.weight"), Tensor::zeros({d, 4 * d}));
      params.add(block_param(b, stream + ".mod.bias"), Tensor::zeros({1, 4 * d}));
      for (const char* proj : {"q", "k", "v", "o"}) {
        params.add(block_param(b, stream + "." + proj), init_weight(rng, d, d));
      }
      params.add(block_param(b, stream + ".mlp.w1"), init_weight(rng, d, hid));
      params.add(block_param(b, stream + ".mlp.b1"), Tensor::zeros({1, hid}));
      params.add(block_param(b, stream + ".mlp.w2"), init_weight(rng, hid, d));
      params.add(block_param(b, stream + ".mlp.b2"), Tensor::zeros({1, d}));
    }
    params.add(block_param(b, "adapter.k"), init_weight(rng, d, d));
    params.add(block_param(b, "adapter.v"), init_weight(rng, d, d));
  }
}

std::pair<Tensor, Tensor> rope_tables(const MmditConfig& config, std::size_t text_tokens) {
  const std::size_t m = config.image_tokens();
  const std::size_t rows = text_tokens + m, pairs = config.width / 2;
  const std::size_t head_pairs = config.head_width() / 2, axis_pairs = head_pairs / 2;
  std::vector<double> cos(rows * pairs, 1.0), sin(rows * pairs, 0.0);
  for (std::size_t i = text_tokens; i < rows; ++i) {
    const std::size_t tok = i - text_tokens;
    const double row = static_cast<double>(tok / config.grid_w);
    const double col = static_cast<double>(tok % config.grid_w);
    for (std::size_t j = 0; j < pairs; ++j) {
      const std::size_t k = j % head_pairs;
      const std::size_t kk = k % axis_pairs;
      const double freq = std::pow(config.rope_base, -static_cast<double>(kk) / static_cast<double>(axis_pairs));
      const double angle = (k < axis_pairs ? row : col) * freq;
      cos[i * pairs + j] = std::cos(angle);
      sin[i * pairs + j] = std::sin(angle);
    }
  }
  return {Tensor({rows, pairs}, std::move(cos), DType::F64), Tensor({rows, pairs}, std::move(sin), DType::F64)};
}

MmaResult mma(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var t, Var x) {
  if (!x.valid() || x.rows() == 0) throw ContractError("mma: at least one image token is required");
  if (x.cols() != config.width || (t.valid() && t.cols() != config.width)) {
    throw DimensionError("mma: token width does not match model width " + std::to_string(config.width));
  }
  const std::size_t n = t.valid() ? t.rows() : 0;
  auto project = [&](const char* proj) {
    Var xi = matmul(x, block_leaf(tape, params, block, std::string("img.") + proj));
    if (n == 0) return xi;
    std::array<Var, 2> parts{matmul(t, block_leaf(tape, params, block, std::string("txt.") + proj)), xi};
    return concat_rows(parts);
  };
  Var q = project("q"), k = project("k"), v = project("v");
  if (config.rope) {
    if (x.rows() != config.image_tokens()) {
      throw DimensionError("mma: rotary tables expect " + std::to_string(config.image_tokens()) + " image tokens");
    }
    auto [cos, sin] = rope_tables(config, n);
    q = rotate_pairs(q, cos, sin);
    k = rotate_pairs(k, cos, sin);
  }
  Var out = multi_head_attention(q, k, v, config.heads);
  MmaResult r;
  r.text_tokens = n;
  r.q = q;
  if (n == 0) {
    r.x = out;
  } else {
    r.t = slice_rows(out, 0, n);
    r.x = slice_rows(out, n, x.rows());
  }
  return r;
}

Var ca_image(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var q_image,
             Var reference) {
  if (!reference.valid() || reference.rows() == 0) throw ContractError("cross-attention needs at least one reference token");
  Var k = matmul(reference, block_leaf(tape, params, block, "adapter.k"));
  Var v = matmul(reference, block_leaf(tape, params, block, "adapter.v"));
  return multi_head_attention(q_image, k, v, config.heads);
}

Var ca_joint(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var q_joint,
             Var reference) {
  return ca_image(tape, params, config, block, q_joint, reference);
}

Var attn_map(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var query,
             Var reference) {
  if (!reference.valid() || reference.rows() == 0) throw ContractError("cross-attention needs at least one reference token");
  Var k = matmul(reference, block_leaf(tape, params, block, "adapter.k"));
  return head_averaged_probs(query, k, config.heads);
}

std::pair<Var, Var> dca(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block,
                        const MmaResult& attended, const std::vector<SubjectCondition>& conditions,
                        AttentionMode mode, AdapterProbe* probe) {
  const std::size_t n = attended.text_tokens;
  const std::size_t m = attended.x.rows();
  const DType dtype = attended.x.value().dtype();
  for (const SubjectCondition& c : conditions) check_mask(c, m);

  std::vector<const SubjectCondition*> active;
  for (const SubjectCondition& c : conditions) {
    if (c.weight != 0.0) active.push_back(&c);
  }

  Var text_query;
  if (n > 0) {
    text_query = attended.q_text();
    if (probe && probe->text_query_offset) text_query = add(text_query, tape.constant(*probe->text_query_offset));
  }

  if (probe && probe->record_maps && !active.empty()) {
    probe->image_maps.push_back(attn_map(tape, params, config, block, attended.q_image(), active[0]->tokens).value());
    if (n > 0) probe->text_maps.push_back(attn_map(tape, params, config, block, text_query, active[0]->tokens).value());
  }

  Var t_term, x_term;
  std::vector<Tensor> subject_terms;
  switch (mode) {
    case AttentionMode::TrainJoint:
    case AttentionMode::BothBranchesLegacy: {
      if (conditions.size() > 1) {
        throw ContractError(std::string(attention_mode_name(mode)) + " takes at most one reference condition, got " +
                            std::to_string(conditions.size()));
      }
      if (!conditions.empty() && !full_mask(conditions[0])) {
        throw ContractError(std::string(attention_mode_name(mode)) + " does not support region masks");
      }
      if (active.empty()) break;
      Var q = attended.q;
      if (n > 0) {
        std::array<Var, 2> parts{text_query, attended.q_image()};
        q = concat_rows(parts);
      }
      Var term = scale(ca_joint(tape, params, config, block, q, active[0]->tokens), active[0]->weight);
      if (n > 0) t_term = slice_rows(term, 0, n);
      x_term = n > 0 ? slice_rows(term, n, m) : term;
      break;
    }
    case AttentionMode::TextOnlyProbe: {
      if (conditions.size() > 1) throw ContractError("text_only_probe takes at most one reference condition");
      if (active.empty()) break;
      if (n == 0) throw ContractError("text_only_probe needs text tokens");
      t_term = scale(ca_image(tape, params, config, block, text_query, active[0]->tokens), active[0]->weight);
      break;
    }
    case AttentionMode::InferImageOnly: {
      Var q_image = attended.q_image();
      for (const SubjectCondition* c : active) {
        Var term = scale(ca_image(tape, params, config, block, q_image, c->tokens), c->weight);
        if (!c->mask.empty()) {
          term = mul_col(term, tape.constant(Tensor({m, 1}, c->mask, dtype)));
        }
        if (probe) subject_terms.push_back(term.value());
        x_term = x_term.valid() ? add(x_term, term) : term;
      }
      break;
    }
  }

  if (probe) {
    probe->image_terms.push_back(x_term.valid() ? x_term.value() : Tensor::zeros({m, config.width}, dtype));
    if (n > 0) probe->text_terms.push_back(t_term.valid() ? t_term.value() : Tensor::zeros({n, config.width}, dtype));
    probe->subject_terms.push_back(std::move(subject_terms));
  }
  Var t_out = attended.t;
  if (t_term.valid()) t_out = add(attended.t, t_term);
  Var x_out = x_term.valid() ? add(attended.x, x_term) : attended.x;
  return {t_out, x_out};
}

std::pair<Var, Var> block_forward(Tape& tape, const ParamStore& params, const MmditConfig& config,
                                  std::size_t block, Var t, Var x, Var time_embedding,
                                  const std::vector<SubjectCondition>& conditions, AttentionMode mode,
                                  AdapterProbe* probe) {
  const std::size_t d = config.width;
  const bool has_text = t.valid();
  auto modulation = [&](const std::string& stream) {
    Var mod = linear(time_embedding, block_leaf(tape, params, block, stream + ".mod.weight"),
                     block_leaf(tape, params, block, stream + ".mod.bias"));
    return std::array<Var, 4>{slice_cols(mod, 0, d), slice_cols(mod, d, d), slice_cols(mod, 2 * d, d),
                              slice_cols(mod, 3 * d, d)};
  };
  const auto img_mod = modulation("img");
  Var xn = modulated_norm(tape, x, img_mod[0], img_mod[1]);
  Var tn;
  std::array<Var, 4> txt_mod;
  if (has_text) {
    txt_mod = modulation("txt");
    tn = modulated_norm(tape, t, txt_mod[0], txt_mod[1]);
  }

  const MmaResult attended = mma(tape, params, config, block, tn, xn);
  auto [t_attn, x_attn] = dca(tape, params, config, block, attended, conditions, mode, probe);

  x = add(x, matmul(x_attn, block_leaf(tape, params, block, "img.o")));
  x = add(x, mlp(tape, params, block, "img", modulated_norm(tape, x, img_mod[2], img_mod[3])));
  if (has_text) {
    t = add(t, matmul(t_attn, block_leaf(tape, params, block, "txt.o")));
    t = add(t, mlp(tape, params, block, "txt", modulated_norm(tape, t, txt_mod[2], txt_mod[3])));
  }
  return {t, x};
}

}  // namespace dynaip

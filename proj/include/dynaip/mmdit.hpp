// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dynaip/autodiff.hpp"
#include "dynaip/params.hpp"
#include "dynaip/rng.hpp"

namespace dynaip {

struct MmditConfig {
  std::size_t width = 32;  // d
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t mlp_ratio = 2;
  std::size_t grid_h = 6;  // image token grid, m = grid_h * grid_w
  std::size_t grid_w = 6;
  bool rope = true;
  double rope_base = 100.0;

  std::size_t image_tokens() const { return grid_h * grid_w; }
  std::size_t head_width() const { return width / heads; }
  void validate() const;
};

/// How the adapter cross-attention is wired into a block.
enum class AttentionMode {
  TrainJoint,         // reference attends with [Q_T, Q_X]; term added to both branches
  InferImageOnly,     // image branch only, optionally masked per subject
  BothBranchesLegacy, // joint wiring kept at inference (no decoupling)
  TextOnlyProbe,      // term added to the text branch only (diagnostic)
};
const char* attention_mode_name(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& name);

/// One reference subject: tokens C (h x d), a per-image-token mask with
/// entries in {0, 1} (empty means all ones), and its weight lambda.
struct SubjectCondition {
  Var tokens;
  std::vector<double> mask;
  double weight = 1.0;
};

struct MmaResult {
  Var t;  // n x d, invalid when there are no text tokens
  Var x;  // m x d
  Var q;  // (n + m) x d position-encoded joint query
  std::size_t text_tokens = 0;
  Var q_text() const;
  Var q_image() const;
};

/// Hooks for diagnostics. All fields optional.
struct AdapterProbe {
  /// Added to the text rows of the query used by the adapter cross-attention
  /// (not by MMA).
  std::optional<Tensor> text_query_offset;
  /// Per block: total adapter term added to the image branch (m x d, zeros
  /// when nothing is added) and to the text branch (n x d).
  std::vector<Tensor> image_terms;
  std::vector<Tensor> text_terms;
  /// Per block, per subject: lambda_i * M_i * CA(X, C_i) (image-only mode).
  std::vector<std::vector<Tensor>> subject_terms;
  /// When set, per block: head-averaged attention of image queries (m x h)
  /// and text queries (n x h) over the first weighted reference.
  bool record_maps = false;
  std::vector<Tensor> image_maps;
  std::vector<Tensor> text_maps;
};

std::string block_param(std::size_t block, const std::string& leaf);
bool is_adapter_param(const std::string& name);

/// Registers all block parameters (base streams and adapter K_C / V_C).
void add_mmdit_params(ParamStore& params, const MmditConfig& config, Rng& rng);

/// Cos/sin tables for rotary encoding of n text tokens (position 0) followed
/// by the image grid; half of each head's pairs rotate with the row index,
/// the other half with the column index.
std::pair<Tensor, Tensor> rope_tables(const MmditConfig& config, std::size_t text_tokens);

/// Joint attention over [T, X]. T may be an invalid Var (n = 0).
MmaResult mma(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var t, Var x);

/// softmax(Q_X K_C^T / sqrt(d_h)) V_C with K_C = C W_K, V_C = C W_V.
Var ca_image(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var q_image,
             Var reference);
/// Same projection with the joint query; rows [n, n+m) equal ca_image.
Var ca_joint(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var q_joint,
             Var reference);
/// Head-averaged attention of image queries over reference tokens (m x h).
Var attn_map(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block, Var query,
             Var reference);

/// Adds the adapter cross-attention to the MMA outputs according to mode.
std::pair<Var, Var> dca(Tape& tape, const ParamStore& params, const MmditConfig& config, std::size_t block,
                        const MmaResult& attended, const std::vector<SubjectCondition>& conditions,
                        AttentionMode mode, AdapterProbe* probe = nullptr);

/// One block: modulated pre-norm, MMA, adapter, output projection and
/// residual, then a modulated pre-norm MLP with residual on each stream.
std::pair<Var, Var> block_forward(Tape& tape, const ParamStore& params, const MmditConfig& config,
                                  std::size_t block, Var t, Var x, Var time_embedding,
                                  const std::vector<SubjectCondition>& conditions, AttentionMode mode,
                                  AdapterProbe* probe = nullptr);

}  // namespace dynaip

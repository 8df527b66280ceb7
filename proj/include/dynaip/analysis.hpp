// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynaip/sampler.hpp"
#include "dynaip/scenes.hpp"
#include "dynaip/trainer.hpp"

namespace dynaip {

// ---- finite-difference gradient suite -------------------------------------

/// Parameter family used to group gradient-check results.
std::string param_group(const std::string& name);

struct GradcheckEntry {
  std::string scenario;
  std::string param;
  std::string group;
  std::size_t entries = 0;     // coordinates probed
  double relative_error = 0.0; // |g_ad - g_fd| / (|g_ad| + |g_fd|) over probed coordinates
  double grad_norm = 0.0;      // |g_fd| over probed coordinates
};

struct GradcheckOptions {
  std::uint64_t seed = 7;
  double epsilon = 1e-3;
  double tolerance = 1e-4;
  std::size_t coords_per_tensor = 10;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double worst = 0.0;
  std::vector<std::string> unreached_groups;  // groups whose gradient was zero in every scenario
  bool passed = false;
};

/// Small float64 model used by the gradient suite.
ModelConfig gradcheck_model_config(std::uint64_t seed);

/// Reverse-mode gradients of a scalar velocity loss against central
/// differences, over several adapter wirings and fusers.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

// ---- conditioning evaluation ----------------------------------------------

struct ConditioningEval {
  std::vector<double> conditioned_mse;
  std::vector<double> unconditional_mse;
  std::size_t wins = 0;  // scenes where conditioned < unconditional
  double win_rate() const;
  double mean_conditioned() const;
  double mean_unconditional() const;
};

/// Samples each scene twice from the same noise: with its text tags and
/// reference, and with neither, then compares both against the target.
ConditioningEval evaluate_conditioning(const Model& model, const std::vector<ToyScene>& scenes,
                                       std::size_t sample_steps, AttentionMode mode, FusionMode fusion,
                                       std::uint64_t seed);

// ---- ablation harness -----------------------------------------------------

struct AblationOptions {
  TrainConfig base;  // fusion/attention fields are overridden per row
  std::size_t eval_scenes = 8;
  std::size_t sample_steps = 10;
  std::uint64_t eval_seed = 99;
};

struct AblationRow {
  std::string configuration;
  FusionMode fusion = FusionMode::Hmoe;
  AttentionMode train_mode = AttentionMode::TrainJoint;
  AttentionMode infer_mode = AttentionMode::InferImageOnly;
  std::size_t train_steps = 0;
  double final_train_loss = 0.0;
  double conditioned_mse = 0.0;
  double unconditional_mse = 0.0;
  double win_rate = 0.0;
};

/// Rows: full, w/o DDS, add fusion, concat fusion, single:low/mid/high.
/// Each fuser trains its own model; w/o DDS reuses the full model and keeps
/// the joint wiring at inference.
std::vector<AblationRow> run_ablation(const AblationOptions& options);

// ---- routing inspection ----------------------------------------------------

struct RoutingRow {
  std::string image_id;
  FusionCoefficients coefficients;
};

RoutingRow inspect_routing(const Model& model, const std::string& image_id, const Tensor& image);

// ---- attention maps --------------------------------------------------------

struct AttentionMapSet {
  AttentionMode mode = AttentionMode::InferImageOnly;
  Tensor sample;                   // image generated under this wiring
  std::vector<Tensor> image_maps;  // per block, reference-token grid (mean over image queries)
  std::vector<Tensor> text_maps;   // per block, reference-token grid (mean over text queries)
};

/// The three wirings of the decoupling diagnostic: text branch only, image
/// branch only, both branches. Maps are taken at `probe_t` on the path from
/// the sampler's own noise.
std::vector<AttentionMapSet> attention_maps(const Model& model, const SampleSpec& spec, double probe_t);

// ---- single-level probe ---------------------------------------------------

struct LayerProbeRow {
  Level level = Level::Low;
  Tensor sample;
  double mse = 0.0;          // whole image vs target
  double subject_mse = 0.0;  // subject pixels only
};

/// Samples with one-hot fusion coefficients per level, i.e. injecting a
/// single encoder level at a time.
std::vector<LayerProbeRow> probe_layers(const Model& model, const ToyScene& scene, std::size_t sample_steps,
                                        std::uint64_t seed);

double image_mse(const Tensor& a, const Tensor& b);
double masked_mse(const Tensor& a, const Tensor& b, const std::vector<double>& pixel_mask);

/// Scene reference as a sampler subject.
SubjectSpec subject_from_scene(const Model& model, const ToyScene& scene, double weight = 1.0);

}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynaip/model.hpp"
#include "dynaip/scenes.hpp"

namespace dynaip {

struct FlowPoint {
  Tensor state;     // x_t = (1 - t) x_0 + t eps
  Tensor velocity;  // eps - x_0
};

/// Rectified-flow interpolation between data x0 (t = 0) and noise (t = 1).
FlowPoint flow_sample(const Tensor& x0, const Tensor& noise, double t);

struct TrainConfig {
  ModelConfig model;
  std::size_t stage1_steps = 300;
  std::size_t stage2_steps = 700;
  std::size_t batch = 8;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double drop_text = 0.05;
  double drop_image = 0.05;
  double drop_both = 0.05;
  double drop_expert = 0.05;
  double lambda = 1.0;
  double cross_fraction = 0.5;  // stage-2 share of cross pairs
  bool train_base = true;
  FusionMode fusion = FusionMode::Hmoe;
  AttentionMode attention = AttentionMode::TrainJoint;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 0;

  std::size_t total_steps() const { return stage1_steps + stage2_steps; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Cosine decay from `initial` at step 0 to 0 at step total - 1.
double cosine_lr(double initial, std::size_t step, std::size_t total);

/// Adam with decoupled weight decay over the trainable entries of a
/// ParamStore. Moments are kept per parameter name.
class AdamW {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamW(double beta1, double beta2, double eps, double weight_decay);

  /// theta <- theta - lr * (wd * theta + m_hat / (sqrt(v_hat) + eps)).
  void step(ParamStore& params, const std::unordered_map<std::string, Tensor>& grads, double lr);

  std::size_t steps_taken() const { return steps_; }
  void set_steps_taken(std::size_t steps) { steps_ = steps; }
  const std::unordered_map<std::string, Moments>& moments() const { return moments_; }
  std::unordered_map<std::string, Moments>& moments() { return moments_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t steps_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

/// Which conditioning the sample keeps after classifier-free dropout.
enum class CondDrop { None, Text, Image, Both };
/// One categorical draw: text-only, image-only and joint drops are disjoint
/// events with the configured probabilities.
CondDrop draw_condition_drop(Rng& rng, double p_text, double p_image, double p_both);

/// Encodes the reference and assembles one training sample at time t.
ModelInput training_input(const Model& model, const ToyScene& scene, const Tensor& noise, double t, CondDrop drop,
                          double lambda);

struct StepStats {
  double loss = 0.0;
  double lr = 0.0;
  std::size_t cross_pairs = 0;
  std::size_t dropped_text = 0;
  std::size_t dropped_image = 0;
  double adapter_norm = 0.0;  // mean |adapter term| over blocks, image branch
};

/// One optimizer step on `batch`. Throws NumericError on a non-finite loss.
StepStats train_step(Model& model, AdamW& optimizer, const std::vector<ToyScene>& batch, const TrainConfig& config,
                     double lr, Rng& rng);

struct StepRecord {
  std::size_t step = 0;
  std::size_t stage = 1;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t cross_pairs = 0;
};

struct TrainingResult {
  Model model;
  AdamW optimizer;
  std::vector<StepRecord> history;
  std::size_t intra_pairs = 0;
  std::size_t cross_pairs = 0;
};

/// Called with (model, optimizer, completed steps, stage).
using CheckpointSink = std::function<void(const Model&, const AdamW&, std::size_t, std::size_t)>;

/// Stage 1: intra pairs only. Stage 2: cross pairs mixed in at
/// cross_fraction. Deterministic given config.seed.
TrainingResult run_training(const TrainConfig& config, const CheckpointSink& sink = {});

double mean_loss(const std::vector<StepRecord>& history, std::size_t begin, std::size_t count);

}  // namespace dynaip

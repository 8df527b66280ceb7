// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dynaip/error.hpp"
#include "dynaip/image.hpp"

namespace dynaip {

FlowPoint flow_sample(const Tensor& x0, const Tensor& noise, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("flow_sample: t must lie in [0, 1]");
  if (x0.shape() != noise.shape()) {
    throw DimensionError("flow_sample: data " + shape_string(x0.shape()) + " vs noise " +
                         shape_string(noise.shape()));
  }
  const DType dt = promote(x0.dtype(), noise.dtype());
  std::vector<double> xt(x0.numel()), v(x0.numel());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    xt[i] = (1.0 - t) * x0.data()[i] + t * noise.data()[i];
    v[i] = noise.data()[i] - x0.data()[i];
  }
  return {Tensor(x0.shape(), std::move(xt), dt), Tensor(x0.shape(), std::move(v), dt)};
}

namespace {

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1)");
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (batch == 0) throw ConfigError("batch must be positive");
  if (total_steps() == 0) throw ConfigError("at least one training step is required");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  check_probability(beta1, "beta1");
  check_probability(beta2, "beta2");
  if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be positive");
  check_probability(drop_text, "text dropout");
  check_probability(drop_image, "image dropout");
  check_probability(drop_both, "joint dropout");
  check_probability(drop_expert, "expert dropout");
  if (drop_text + drop_image + drop_both >= 1.0) throw ConfigError("conditioning dropouts must sum below 1");
  if (!(cross_fraction >= 0.0 && cross_fraction <= 1.0)) throw ConfigError("cross fraction must lie in [0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"stage1_steps", c.stage1_steps},
                     {"stage2_steps", c.stage2_steps},
                     {"batch", c.batch},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"drop_text", c.drop_text},
                     {"drop_image", c.drop_image},
                     {"drop_both", c.drop_both},
                     {"drop_expert", c.drop_expert},
                     {"lambda", c.lambda},
                     {"cross_fraction", c.cross_fraction},
                     {"train_base", c.train_base},
                     {"fusion", fusion_mode_name(c.fusion)},
                     {"attention", attention_mode_name(c.attention)},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const char* const kKnown[] = {"model",       "stage1_steps", "stage2_steps",   "batch",
                                       "learning_rate", "weight_decay", "beta1",        "beta2",
                                       "adam_eps",    "drop_text",    "drop_image",     "drop_both",
                                       "drop_expert", "lambda",       "cross_fraction", "train_base",
                                       "fusion",      "attention",    "checkpoint_every", "seed"};
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : kKnown) known = known || key == k;
    if (!known) throw ConfigError("unknown training config key '" + key + "'");
  }
  TrainConfig d;
  try {
    c.model = j.value("model", d.model);
    c.stage1_steps = j.value("stage1_steps", d.stage1_steps);
    c.stage2_steps = j.value("stage2_steps", d.stage2_steps);
    c.batch = j.value("batch", d.batch);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.drop_text = j.value("drop_text", d.drop_text);
    c.drop_image = j.value("drop_image", d.drop_image);
    c.drop_both = j.value("drop_both", d.drop_both);
    c.drop_expert = j.value("drop_expert", d.drop_expert);
    c.lambda = j.value("lambda", d.lambda);
    c.cross_fraction = j.value("cross_fraction", d.cross_fraction);
    c.train_base = j.value("train_base", d.train_base);
    c.fusion = parse_fusion_mode(j.value("fusion", std::string(fusion_mode_name(d.fusion))));
    c.attention = parse_attention_mode(j.value("attention", std::string(attention_mode_name(d.attention))));
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config value: ") + e.what());
  }
}

double cosine_lr(double initial, std::size_t step, std::size_t total) {
  if (total <= 1) return initial;
  if (step >= total - 1) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total - 1);
  return 0.5 * initial * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(ParamStore& params, const std::unordered_map<std::string, Tensor>& grads, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const Param& p : params.params()) {
    if (!p.trainable) continue;
    auto g_it = grads.find(p.name);
    const Tensor zero = Tensor::zeros(p.value.shape(), p.value.dtype());
    const Tensor& g = g_it == grads.end() ? zero : g_it->second;
    if (g.shape() != p.value.shape()) {
      throw DimensionError("gradient for " + p.name + " has shape " + shape_string(g.shape()));
    }
    auto [it, inserted] = moments_.try_emplace(p.name, Moments{zero, zero});
    Moments& mo = it->second;
    std::vector<double> theta(p.value.data().begin(), p.value.data().end());
    auto m = mo.m.mutable_data();
    auto v = mo.v.mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g.data()[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * (weight_decay_ * theta[i] + mhat / (std::sqrt(vhat) + eps_));
    }
    mo.m.round();
    mo.v.round();
    params.set(p.name, Tensor(p.value.shape(), std::move(theta), p.value.dtype()));
  }
}

CondDrop draw_condition_drop(Rng& rng, double p_text, double p_image, double p_both) {
  const double u = rng.uniform();
  if (u < p_text) return CondDrop::Text;
  if (u < p_text + p_image) return CondDrop::Image;
  if (u < p_text + p_image + p_both) return CondDrop::Both;
  return CondDrop::None;
}

ModelInput training_input(const Model& model, const ToyScene& scene, const Tensor& noise, double t, CondDrop drop,
                          double lambda) {
  ModelInput in;
  in.noisy = flow_sample(scene.target, noise, t).state;
  in.t = t;
  if (drop == CondDrop::Text || drop == CondDrop::Both) {
    in.null_text = true;
  } else {
    in.text = scene.text;
  }
  ReferenceInput ref;
  ref.features = model.encoder().encode(scene.reference);
  ref.weight = lambda;
  ref.null_image = drop == CondDrop::Image || drop == CondDrop::Both;
  in.references.push_back(std::move(ref));
  return in;
}

namespace {

std::string non_finite_params(const Model& model) {
  std::string out;
  for (const Param& p : model.params().params()) {
    if (!p.value.all_finite()) out += "; parameter " + p.name + " is non-finite";
  }
  return out;
}

}  // namespace

StepStats train_step(Model& model, AdamW& optimizer, const std::vector<ToyScene>& batch, const TrainConfig& config,
                     double lr, Rng& rng) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const ModelConfig& c = model.config();
  StepStats stats;
  stats.lr = lr;

  Tape tape(true);
  std::vector<Var> losses;
  std::vector<AdapterProbe> probes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ToyScene& scene = batch[i];
    const Tensor noise = rng.normal_tensor(scene.target.shape(), 1.0);
    const double t = rng.uniform();
    const CondDrop drop = draw_condition_drop(rng, config.drop_text, config.drop_image, config.drop_both);
    if (drop == CondDrop::Text || drop == CondDrop::Both) ++stats.dropped_text;
    if (drop == CondDrop::Image || drop == CondDrop::Both) ++stats.dropped_image;
    if (scene.pairing == PairingKind::Cross) ++stats.cross_pairs;

    const ModelInput input = training_input(model, scene, noise, t, drop, config.lambda);
    ForwardOptions opts;
    opts.mode = config.attention;
    opts.fusion = config.fusion;
    opts.expert_dropout = config.drop_expert;
    opts.rng = &rng;
    opts.probe = &probes[i];
    ForwardOutput out;
    try {
      out = forward(tape, model, input, opts);
    } catch (const NumericError& e) {
      throw NumericError("optimizer step " + std::to_string(optimizer.steps_taken() + 1) + ", sample " +
                         std::to_string(i) + ": " + e.what() + non_finite_params(model));
    }
    const Tensor target = patchify(flow_sample(scene.target, noise, t).velocity, c.patch);
    losses.push_back(mse(out.velocity, tape.constant(target.cast(out.velocity.value().dtype()))));
  }

  Var total = scale(sum(concat_rows(losses)), 1.0 / static_cast<double>(batch.size()));
  stats.loss = total.value().item();
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "non-finite training loss at optimizer step " << optimizer.steps_taken() + 1 << " (lr " << lr
        << "); per-sample losses:";
    for (const Var& l : losses) msg << ' ' << l.value().item();
    msg << non_finite_params(model);
    throw NumericError(msg.str());
  }

  double norm_sum = 0.0;
  std::size_t norm_count = 0;
  for (const AdapterProbe& probe : probes) {
    for (const Tensor& term : probe.image_terms) {
      norm_sum += term.max_abs();
      ++norm_count;
    }
  }
  stats.adapter_norm = norm_count ? norm_sum / static_cast<double>(norm_count) : 0.0;

  const Gradients grads = tape.backward(total);
  std::unordered_map<std::string, Tensor> named;
  for (const Param& p : model.params().params()) {
    if (p.trainable) named.emplace(p.name, grads.named(p.name, p.value));
  }
  optimizer.step(model.params(), named, lr);
  return stats;
}

TrainingResult run_training(const TrainConfig& config, const CheckpointSink& sink) {
  config.validate();
  TrainingResult result{Model(config.model), AdamW(config.beta1, config.beta2, config.adam_eps, config.weight_decay),
                        {}, 0, 0};
  result.model.set_trainable(config.train_base);
  Rng rng(config.seed);
  Rng data_rng = rng.fork();
  Rng step_rng = rng.fork();
  const std::size_t total = config.total_steps();
  const std::size_t side = config.model.image_side;

  for (std::size_t step = 0; step < total; ++step) {
    const std::size_t stage = step < config.stage1_steps ? 1 : 2;
    std::vector<ToyScene> batch;
    batch.reserve(config.batch);
    for (std::size_t i = 0; i < config.batch; ++i) {
      const bool cross = stage == 2 && data_rng.uniform() < config.cross_fraction;
      batch.push_back(synth_scene(data_rng, cross ? PairingKind::Cross : PairingKind::Intra, side));
      ++(cross ? result.cross_pairs : result.intra_pairs);
    }
    const double lr = cosine_lr(config.learning_rate, step, total);
    const StepStats stats = train_step(result.model, result.optimizer, batch, config, lr, step_rng);
    result.history.push_back(StepRecord{step, stage, stats.loss, lr, stats.cross_pairs});

    const bool last = step + 1 == total;
    const bool periodic = config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0;
    if (sink && (last || periodic)) sink(result.model, result.optimizer, step + 1, stage);
  }
  return result;
}

double mean_loss(const std::vector<StepRecord>& history, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > history.size()) throw ContractError("mean_loss: window outside history");
  double s = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i) s += history[i].loss;
  return s / static_cast<double>(count);
}

}  // namespace dynaip

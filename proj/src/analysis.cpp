// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dynaip/error.hpp"
#include "dynaip/image.hpp"

namespace dynaip {

std::string param_group(const std::string& name) {
  if (is_adapter_param(name)) return "adapter";
  if (is_router_param(name)) return "router";
  if (name.starts_with("hmoe.expert.")) return "expert";
  if (is_hmoe_param(name)) return "fusion_baseline";
  return "base";
}

ModelConfig gradcheck_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.image_side = 8;
  c.patch = 4;
  c.width = 8;
  c.heads = 2;
  c.blocks = 2;
  c.mlp_ratio = 2;
  c.text_tokens = 2;
  c.vocab = 4;
  c.seed = seed;
  c.encoder.image_side = 8;
  c.encoder.patch = 4;
  c.encoder.depth = 3;
  c.encoder.width = 8;
  c.encoder.heads = 2;
  c.encoder.taps = {1, 2, 3};
  c.encoder.seed = seed + 1;
  return c;
}

namespace {

struct Scenario {
  std::string name;
  AttentionMode mode;
  FusionMode fusion;
  ModelInput input;
};

HierFeatures to_f64(HierFeatures f) {
  for (auto& t : f.full) t = t.cast(DType::F64);
  for (auto& t : f.cls) t = t.cast(DType::F64);
  return f;
}

double scenario_loss(const Model& model, const Scenario& s, const Tensor& target) {
  Tape tape(false);
  ForwardOptions opts;
  opts.mode = s.mode;
  opts.fusion = s.fusion;
  ForwardOutput out = forward(tape, model, s.input, opts);
  return mse(out.velocity, tape.constant(target)).value().item();
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  const ModelConfig cfg = gradcheck_model_config(options.seed);
  Rng rng(options.seed * 7919 + 17);

  // Move every parameter off its initializer (zero-initialized modulation
  // weights would otherwise hide whole branches).
  Model base(cfg);
  for (Param& p : base.params().params()) {
    std::vector<double> v(p.value.data().begin(), p.value.data().end());
    for (double& x : v) x += 0.3 * rng.normal();
    p.value = Tensor(p.value.shape(), std::move(v), p.value.dtype());
  }
  Model model = base.with_dtype(DType::F64);

  const std::size_t side = cfg.image_side;
  auto ref_features = [&]() {
    return to_f64(model.encoder().encode(rng.uniform_tensor({side, side, cfg.channels}, -1.0, 1.0)));
  };
  auto make_input = [&](bool text, std::size_t refs) {
    ModelInput in;
    in.noisy = rng.normal_tensor({side, side, cfg.channels}, 1.0, DType::F64);
    in.t = rng.uniform(0.1, 0.9);
    if (text) {
      for (std::size_t i = 0; i < cfg.text_tokens; ++i) in.text.push_back(rng.below(cfg.vocab));
    } else {
      in.null_text = true;
    }
    for (std::size_t r = 0; r < refs; ++r) {
      ReferenceInput ref;
      ref.features = ref_features();
      ref.weight = rng.uniform(0.5, 1.5);
      in.references.push_back(std::move(ref));
    }
    return in;
  };

  std::vector<Scenario> scenarios;
  scenarios.push_back({"train_joint/hmoe", AttentionMode::TrainJoint, FusionMode::Hmoe, make_input(true, 1)});
  {
    Scenario s{"infer_image_only/masked", AttentionMode::InferImageOnly, FusionMode::Hmoe, make_input(true, 2)};
    s.input.references[0].mask = {1, 0, 1, 1};
    s.input.references[1].mask = {0, 1, 1, 0};
    scenarios.push_back(std::move(s));
  }
  scenarios.push_back({"train_joint/add", AttentionMode::TrainJoint, FusionMode::Add, make_input(true, 1)});
  scenarios.push_back({"train_joint/concat", AttentionMode::TrainJoint, FusionMode::Concat, make_input(true, 1)});
  scenarios.push_back({"train_joint/null_text", AttentionMode::TrainJoint, FusionMode::Hmoe, make_input(false, 1)});
  scenarios.push_back({"text_only_probe", AttentionMode::TextOnlyProbe, FusionMode::Hmoe, make_input(true, 1)});

  GradcheckReport report;
  std::set<std::string> groups, reached;
  for (const Scenario& s : scenarios) {
    const Tensor target = rng.normal_tensor({cfg.image_tokens(), cfg.token_dim()}, 1.0, DType::F64);

    Tape tape(true);
    ForwardOptions opts;
    opts.mode = s.mode;
    opts.fusion = s.fusion;
    ForwardOutput out = forward(tape, model, s.input, opts);
    const Gradients grads = tape.backward(mse(out.velocity, tape.constant(target)));

    for (Param& p : model.params().params()) {
      if (!p.trainable) continue;
      const Tensor ad = grads.named(p.name, p.value);
      const std::size_t n = p.value.numel();
      std::vector<std::size_t> coords;
      if (n <= options.coords_per_tensor) {
        for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
      } else {
        while (coords.size() < options.coords_per_tensor) {
          const std::size_t i = rng.below(n);
          if (std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);
        }
      }
      std::vector<double> g_ad, g_fd, diff;
      for (std::size_t i : coords) {
        const double saved = p.value.data()[i];
        p.value.mutable_data()[i] = saved + options.epsilon;
        const double up = scenario_loss(model, s, target);
        p.value.mutable_data()[i] = saved - options.epsilon;
        const double down = scenario_loss(model, s, target);
        p.value.mutable_data()[i] = saved;
        const double fd = (up - down) / (2.0 * options.epsilon);
        g_ad.push_back(ad.data()[i]);
        g_fd.push_back(fd);
        diff.push_back(ad.data()[i] - fd);
      }
      GradcheckEntry e;
      e.scenario = s.name;
      e.param = p.name;
      e.group = param_group(p.name);
      e.entries = coords.size();
      e.grad_norm = norm(g_fd);
      const double denom = norm(g_ad) + norm(g_fd);
      e.relative_error = denom < 1e-12 ? 0.0 : norm(diff) / denom;
      groups.insert(e.group);
      if (denom >= 1e-12) reached.insert(e.group);
      report.worst = std::max(report.worst, e.relative_error);
      report.entries.push_back(std::move(e));
    }
  }
  for (const std::string& g : groups) {
    if (!reached.contains(g)) report.unreached_groups.push_back(g);
  }
  report.passed = report.worst < options.tolerance && report.unreached_groups.empty();
  return report;
}

double ConditioningEval::win_rate() const {
  return conditioned_mse.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(conditioned_mse.size());
}

double ConditioningEval::mean_conditioned() const {
  double s = 0.0;
  for (double v : conditioned_mse) s += v;
  return conditioned_mse.empty() ? 0.0 : s / static_cast<double>(conditioned_mse.size());
}

double ConditioningEval::mean_unconditional() const {
  double s = 0.0;
  for (double v : unconditional_mse) s += v;
  return unconditional_mse.empty() ? 0.0 : s / static_cast<double>(unconditional_mse.size());
}

double image_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("image_mse: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double masked_mse(const Tensor& a, const Tensor& b, const std::vector<double>& pixel_mask) {
  if (a.shape() != b.shape() || a.rank() != 3 || pixel_mask.size() != a.dim(0) * a.dim(1)) {
    throw DimensionError("masked_mse: shape mismatch");
  }
  const std::size_t ch = a.dim(2);
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pixel_mask.size(); ++p) {
    if (pixel_mask[p] == 0.0) continue;
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = a.data()[p * ch + c] - b.data()[p * ch + c];
      s += d * d;
      ++count;
    }
  }
  return count ? s / static_cast<double>(count) : 0.0;
}

SubjectSpec subject_from_scene(const Model& model, const ToyScene& scene, double weight) {
  SubjectSpec s;
  s.features = model.encoder().encode(scene.reference);
  s.weight = weight;
  return s;
}

ConditioningEval evaluate_conditioning(const Model& model, const std::vector<ToyScene>& scenes,
                                       std::size_t sample_steps, AttentionMode mode, FusionMode fusion,
                                       std::uint64_t seed) {
  ConditioningEval eval;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    SampleSpec cond;
    cond.steps = sample_steps;
    cond.text = scenes[i].text;
    cond.subjects.push_back(subject_from_scene(model, scenes[i]));
    cond.mode = mode;
    cond.fusion = fusion;
    cond.seed = seed + i;
    SampleSpec uncond;
    uncond.steps = sample_steps;
    uncond.mode = mode;
    uncond.fusion = fusion;
    uncond.seed = seed + i;
    const double c = image_mse(euler_sample(model, cond), scenes[i].target);
    const double u = image_mse(euler_sample(model, uncond), scenes[i].target);
    eval.conditioned_mse.push_back(c);
    eval.unconditional_mse.push_back(u);
    if (c < u) ++eval.wins;
  }
  return eval;
}

std::vector<AblationRow> run_ablation(const AblationOptions& options) {
  Rng eval_rng(options.eval_seed);
  const std::vector<ToyScene> scenes =
      synth_batch(eval_rng, PairingKind::Cross, options.eval_scenes, options.base.model.image_side);

  struct Plan {
    std::string name;
    FusionMode fusion;
    std::vector<std::pair<std::string, AttentionMode>> inferences;
  };
  const std::vector<Plan> plans{
      {"hmoe", FusionMode::Hmoe, {{"full", AttentionMode::InferImageOnly}, {"w/o DDS", AttentionMode::BothBranchesLegacy}}},
      {"add", FusionMode::Add, {{"add fusion", AttentionMode::InferImageOnly}}},
      {"concat", FusionMode::Concat, {{"concat fusion", AttentionMode::InferImageOnly}}},
      {"single:low", FusionMode::SingleLow, {{"single:low", AttentionMode::InferImageOnly}}},
      {"single:mid", FusionMode::SingleMid, {{"single:mid", AttentionMode::InferImageOnly}}},
      {"single:high", FusionMode::SingleHigh, {{"single:high", AttentionMode::InferImageOnly}}},
  };

  std::vector<AblationRow> rows;
  for (const Plan& plan : plans) {
    TrainConfig cfg = options.base;
    cfg.fusion = plan.fusion;
    cfg.attention = AttentionMode::TrainJoint;
    const TrainingResult trained = run_training(cfg);
    const std::size_t window = std::min<std::size_t>(50, trained.history.size());
    const double final_loss = mean_loss(trained.history, trained.history.size() - window, window);
    for (const auto& [label, infer] : plan.inferences) {
      const ConditioningEval eval =
          evaluate_conditioning(trained.model, scenes, options.sample_steps, infer, plan.fusion, options.eval_seed);
      AblationRow row;
      row.configuration = label;
      row.fusion = plan.fusion;
      row.train_mode = cfg.attention;
      row.infer_mode = infer;
      row.train_steps = cfg.total_steps();
      row.final_train_loss = final_loss;
      row.conditioned_mse = eval.mean_conditioned();
      row.unconditional_mse = eval.mean_unconditional();
      row.win_rate = eval.win_rate();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

RoutingRow inspect_routing(const Model& model, const std::string& image_id, const Tensor& image) {
  Tape tape(false);
  const HierFeatures features = model.encoder().encode(image);
  return RoutingRow{image_id, coefficients_of(route(tape, model.params(), features))};
}

namespace {

/// Mean over query rows of a (queries x h) map, laid out on the reference
/// token grid.
Tensor to_grid(const Tensor& map) {
  const std::size_t h = map.cols();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(h))));
  if (side * side != h) throw DimensionError("reference tokens do not form a square grid");
  std::vector<double> out(h, 0.0);
  for (std::size_t r = 0; r < map.rows(); ++r)
    for (std::size_t c = 0; c < h; ++c) out[c] += map.at(r, c) / static_cast<double>(map.rows());
  return Tensor({side, side}, std::move(out), DType::F64);
}

}  // namespace

std::vector<AttentionMapSet> attention_maps(const Model& model, const SampleSpec& spec, double probe_t) {
  if (spec.subjects.size() != 1) throw ContractError("attention maps take exactly one reference");
  if (spec.text.empty()) throw ContractError("attention maps need text tags");
  if (!(probe_t >= 0.0 && probe_t <= 1.0)) throw ContractError("probe time must lie in [0, 1]");
  std::vector<AttentionMapSet> out;
  const Tensor noise = initial_noise(model, spec.seed);
  for (AttentionMode mode :
       {AttentionMode::TextOnlyProbe, AttentionMode::InferImageOnly, AttentionMode::BothBranchesLegacy}) {
    SampleSpec s = spec;
    s.mode = mode;
    AttentionMapSet set;
    set.mode = mode;
    set.sample = euler_sample(model, s);
    const FlowPoint point = flow_sample(set.sample, noise, probe_t);

    AdapterProbe probe;
    probe.record_maps = true;
    ForwardOptions opts;
    opts.mode = mode;
    opts.fusion = spec.fusion;
    opts.probe = &probe;
    Tape tape(false);
    forward(tape, model, conditioned_input(s, point.state, probe_t), opts);
    for (const Tensor& m : probe.image_maps) set.image_maps.push_back(to_grid(m));
    for (const Tensor& m : probe.text_maps) set.text_maps.push_back(to_grid(m));
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<LayerProbeRow> probe_layers(const Model& model, const ToyScene& scene, std::size_t sample_steps,
                                        std::uint64_t seed) {
  std::vector<LayerProbeRow> rows;
  for (Level level : kLevels) {
    std::array<double, kNumLevels> w{};
    w[static_cast<std::size_t>(level)] = 1.0;
    SampleSpec spec;
    spec.steps = sample_steps;
    spec.text = scene.text;
    spec.subjects.push_back(subject_from_scene(model, scene));
    spec.coefficients = manual_coefficients(w[0], w[1], w[2]);
    spec.seed = seed;
    LayerProbeRow row;
    row.level = level;
    row.sample = euler_sample(model, spec);
    row.mse = image_mse(row.sample, scene.target);
    row.subject_mse = masked_mse(row.sample, scene.target, scene.subject_mask);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dynaip

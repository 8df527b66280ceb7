// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "dynaip/analysis.hpp"
#include "dynaip/checkpoint.hpp"
#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"
#include "dynaip/image.hpp"
#include "dynaip/reports.hpp"

namespace dynaip {

namespace fs = std::filesystem;

std::vector<std::size_t> parse_tags(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ValidationError("empty tag in '" + text + "'");
    if (std::all_of(item.begin(), item.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      out.push_back(std::stoul(item));
      continue;
    }
    bool found = false;
    for (std::size_t id = 0; id < kVocabSize && !found; ++id) {
      if (tag_name(id) == item) {
        out.push_back(id);
        found = true;
      }
    }
    if (!found) throw ValidationError("unknown tag '" + item + "'");
  }
  return out;
}

namespace {

FusionCoefficients parse_coefficients(const std::string& text) {
  std::vector<double> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      w.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("bad coefficient '" + item + "'");
    }
  }
  if (w.size() != kNumLevels) throw ValidationError("expected three coefficients low,mid,high");
  return manual_coefficients(w[0], w[1], w[2]);
}

Tensor load_reference(const Model& model, const fs::path& path) {
  Tensor img = read_ppm(path);
  const std::size_t side = model.config().image_side;
  if (img.dim(0) != side || img.dim(1) != side) {
    throw DimensionError(path.string() + ": reference is " + std::to_string(img.dim(1)) + "x" +
                         std::to_string(img.dim(0)) + ", the model expects " + std::to_string(side) + "x" +
                         std::to_string(side));
  }
  return img;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  return p.string() + suffix;
}

ToyScene scene_from_seed(const Model& model, std::uint64_t seed) {
  Rng rng(seed);
  return synth_scene(rng, PairingKind::Intra, model.config().image_side);
}

void write_json(const fs::path& path, const nlohmann::json& j) { atomic_write_file(path, j.dump(2) + "\n"); }

TrainConfig read_train_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

void apply_step_override(TrainConfig& c, std::size_t steps) {
  if (steps == 0) return;
  // Keep the default 3:7 split between the intra-only and mixed stages.
  c.stage1_steps = steps * 3 / 10;
  c.stage2_steps = steps - c.stage1_steps;
}

std::vector<RoutingRow> routing_rows(const Model& model, const std::vector<std::string>& ids,
                                     const std::vector<HierFeatures>& features,
                                     const std::optional<FusionCoefficients>& manual) {
  std::vector<RoutingRow> rows;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (manual) {
      rows.push_back({ids[i], *manual});
    } else {
      Tape tape(false);
      rows.push_back({ids[i], coefficients_of(route(tape, model.params(), features[i]))});
    }
  }
  return rows;
}

struct SamplingArgs {
  std::string checkpoint;
  std::string out;
  std::vector<std::string> references;
  std::vector<std::string> masks;
  std::vector<double> lambdas;
  std::string features;
  std::string text;
  std::string coefficients;
  std::string mode = "infer_image_only";
  std::string fusion = "hmoe";
  std::size_t steps = 20;
  double guidance = 1.0;
  std::uint64_t seed = 0;
  std::int64_t scene_seed = -1;
};

void add_sampling_options(CLI::App* cmd, SamplingArgs& a, bool multi) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  cmd->add_option("--out", a.out, "Output PPM image")->required();
  if (multi) {
    cmd->add_option("--reference", a.references, "Reference PPM (repeat per subject)")->required();
    cmd->add_option("--mask", a.masks, "Token-grid P1 mask (repeat per subject)")->required();
    cmd->add_option("--lambda", a.lambdas, "Subject weight (once, or once per subject)");
  } else {
    cmd->add_option("--reference", a.references, "Reference PPM")->expected(0, 1);
    cmd->add_option("--features", a.features, "Precomputed feature manifest instead of a reference image");
    cmd->add_option("--mask", a.masks, "Token-grid P1 mask")->expected(0, 1);
    cmd->add_option("--lambda", a.lambdas, "Subject weight")->expected(0, 1);
    cmd->add_option("--scene-seed", a.scene_seed, "Use the reference and tags of a generated scene");
    cmd->add_option("--mode", a.mode, "Adapter wiring")
        ->check(CLI::IsMember({"infer_image_only", "both_branches_legacy", "text_only_probe"}));
  }
  cmd->add_option("--text", a.text, "Comma-separated tags (names or ids)");
  cmd->add_option("--coefficients", a.coefficients, "Manual fusion weights low,mid,high");
  cmd->add_option("--fusion", a.fusion, "Fuser the checkpoint was trained with")
      ->check(CLI::IsMember({"hmoe", "add", "concat", "single:low", "single:mid", "single:high"}));
  cmd->add_option("--steps", a.steps, "Euler steps")->check(CLI::PositiveNumber);
  cmd->add_option("--guidance", a.guidance, "Classifier-free guidance scale");
  cmd->add_option("--seed", a.seed, "Noise seed");
}

int run_sampling(const SamplingArgs& a, bool multi, std::ostream& out) {
  const Model model = load_checkpoint(a.checkpoint).model;
  const ModelConfig& c = model.config();
  SampleSpec spec;
  spec.steps = a.steps;
  spec.guidance = a.guidance;
  spec.seed = a.seed;
  spec.mode = multi ? AttentionMode::InferImageOnly : parse_attention_mode(a.mode);
  spec.fusion = parse_fusion_mode(a.fusion);
  if (!a.coefficients.empty()) spec.coefficients = parse_coefficients(a.coefficients);

  std::vector<std::string> ids;
  std::vector<HierFeatures> features;
  if (a.scene_seed >= 0) {
    const ToyScene scene = scene_from_seed(model, static_cast<std::uint64_t>(a.scene_seed));
    features.push_back(model.encoder().encode(scene.reference));
    ids.push_back("scene-" + std::to_string(a.scene_seed));
    spec.text = scene.text;
  }
  for (const std::string& r : a.references) {
    features.push_back(model.encoder().encode(load_reference(model, r)));
    ids.push_back(fs::path(r).filename().string());
  }
  if (!a.features.empty()) {
    features.push_back(load_features(a.features));
    ids.push_back(fs::path(a.features).filename().string());
  }
  if (!a.text.empty()) spec.text = parse_tags(a.text);
  if (!multi && features.size() > 1) throw ConfigError("infer takes one reference; use compose for several");
  if (!a.masks.empty() && a.masks.size() != features.size()) {
    throw ConfigError(std::to_string(a.masks.size()) + " masks for " + std::to_string(features.size()) + " references");
  }
  if (a.lambdas.size() > 1 && a.lambdas.size() != features.size()) {
    throw ConfigError(std::to_string(a.lambdas.size()) + " lambdas for " + std::to_string(features.size()) +
                      " references");
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    SubjectSpec s;
    s.features = features[i];
    if (!a.masks.empty()) s.mask = parse_mask(a.masks[i], c.image_tokens()).values;
    if (!a.lambdas.empty()) s.weight = a.lambdas.size() == 1 ? a.lambdas[0] : a.lambdas[i];
    spec.subjects.push_back(std::move(s));
  }

  const Tensor image = multi ? compose_multi(model, spec) : euler_sample(model, spec);
  write_ppm(a.out, image);
  const fs::path routing = sibling(a.out, ".routing.csv");
  routing_table(routing_rows(model, ids, features, spec.coefficients)).write(routing);
  out << "wrote " << a.out << " and " << routing.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DynaIP toy: adapter training, sampling and diagnostics", "dynaip"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Two-stage flow-matching training");
  std::string train_config, train_out;
  std::size_t train_steps = 0, checkpoint_every = 0;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Training config (JSON)");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--steps", train_steps, "Total steps (split 3:7 between the stages)");
  train->add_option("--checkpoint-every", checkpoint_every, "Periodic checkpoint interval");
  train->add_option("--seed", train_seed, "Training seed");

  // infer / compose
  auto* infer = app.add_subcommand("infer", "Sample with a single reference");
  SamplingArgs infer_args;
  add_sampling_options(infer, infer_args, false);
  auto* compose = app.add_subcommand("compose", "Mask-guided multi-subject sampling");
  SamplingArgs compose_args;
  add_sampling_options(compose, compose_args, true);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 7;
  std::size_t gc_seeds = 1;
  std::string gc_csv;
  gradcheck->add_option("--seed", gc_seed, "First seed");
  gradcheck->add_option("--seeds", gc_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--csv", gc_csv, "Per-tensor report");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation configurations");
  std::string ab_config, ab_out;
  std::size_t ab_steps = 0, ab_scenes = 8, ab_sample_steps = 10;
  std::optional<std::uint64_t> ab_seed;
  ablate->add_option("--config", ab_config, "Base training config (JSON)");
  ablate->add_option("--out", ab_out, "Comparison CSV")->required();
  ablate->add_option("--steps", ab_steps, "Training steps per configuration");
  ablate->add_option("--eval-scenes", ab_scenes, "Held-out scenes per configuration")->check(CLI::PositiveNumber);
  ablate->add_option("--sample-steps", ab_sample_steps, "Euler steps for evaluation")->check(CLI::PositiveNumber);
  ablate->add_option("--seed", ab_seed, "Training seed");

  // inspect-routing
  auto* routing = app.add_subcommand("inspect-routing", "Routed fusion coefficients over a reference set");
  std::string rt_checkpoint, rt_out, rt_svg;
  std::vector<std::string> rt_refs;
  std::size_t rt_scenes = 0;
  std::uint64_t rt_seed = 0;
  routing->add_option("--checkpoint", rt_checkpoint, "Checkpoint directory")->required();
  routing->add_option("--reference", rt_refs, "Reference PPM (repeatable)");
  routing->add_option("--scenes", rt_scenes, "Number of generated references");
  routing->add_option("--seed", rt_seed, "Seed for generated references");
  routing->add_option("--out", rt_out, "Coefficient CSV")->required();
  routing->add_option("--svg", rt_svg, "Bar chart");

  // attn-map
  auto* attn = app.add_subcommand("attn-map", "Per-branch reference attention under the three wirings");
  std::string am_checkpoint, am_out, am_ref, am_text, am_fusion = "hmoe";
  std::int64_t am_scene_seed = -1;
  double am_t = 0.5;
  std::size_t am_steps = 20;
  std::uint64_t am_seed = 0;
  attn->add_option("--checkpoint", am_checkpoint, "Checkpoint directory")->required();
  attn->add_option("--out-dir", am_out, "Output directory")->required();
  attn->add_option("--reference", am_ref, "Reference PPM");
  attn->add_option("--scene-seed", am_scene_seed, "Use the reference and tags of a generated scene");
  attn->add_option("--text", am_text, "Comma-separated tags");
  attn->add_option("--t", am_t, "Probe time in [0, 1]");
  attn->add_option("--steps", am_steps, "Euler steps")->check(CLI::PositiveNumber);
  attn->add_option("--seed", am_seed, "Noise seed");
  attn->add_option("--fusion", am_fusion, "Fuser the checkpoint was trained with");

  // probe-layer
  auto* probe = app.add_subcommand("probe-layer", "Sample with one encoder level injected at a time");
  std::string pl_checkpoint, pl_out;
  std::uint64_t pl_scene_seed = 0, pl_seed = 0;
  std::size_t pl_steps = 20;
  probe->add_option("--checkpoint", pl_checkpoint, "Checkpoint directory")->required();
  probe->add_option("--out-dir", pl_out, "Output directory")->required();
  probe->add_option("--scene-seed", pl_scene_seed, "Generated scene to reconstruct");
  probe->add_option("--steps", pl_steps, "Euler steps")->check(CLI::PositiveNumber);
  probe->add_option("--seed", pl_seed, "Noise seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      TrainConfig cfg = read_train_config(train_config);
      apply_step_override(cfg, train_steps);
      if (checkpoint_every) cfg.checkpoint_every = checkpoint_every;
      if (train_seed) cfg.seed = *train_seed;
      cfg.validate();
      const fs::path dir = train_out;
      write_json(dir / "config.json", cfg);
      const TrainingResult r = run_training(cfg, [&](const Model& m, const AdamW& opt, std::size_t step,
                                                     std::size_t stage) {
        const bool last = step == cfg.total_steps();
        const fs::path where = last ? dir / "checkpoint" : dir / ("checkpoint-" + std::to_string(step));
        save_checkpoint(where, m, &opt, TrainingState{step, stage, true});
      });
      loss_table(r.history).write(dir / "loss.csv");
      atomic_write_file(dir / "loss.svg", loss_svg(r.history));
      const std::size_t w = std::min<std::size_t>(50, r.history.size());
      out << "trained " << r.history.size() << " steps (" << r.intra_pairs << " intra, " << r.cross_pairs
          << " cross pairs); mean loss first " << w << ": " << mean_loss(r.history, 0, w) << ", last " << w << ": "
          << mean_loss(r.history, r.history.size() - w, w) << "\n";
      out << "checkpoint: " << (dir / "checkpoint").string() << "\n";
      return kExitOk;
    }
    if (infer->parsed()) return run_sampling(infer_args, false, out);
    if (compose->parsed()) return run_sampling(compose_args, true, out);
    if (gradcheck->parsed()) {
      bool ok = true;
      GradcheckReport all;
      for (std::size_t i = 0; i < gc_seeds; ++i) {
        GradcheckOptions o;
        o.seed = gc_seed + i;
        GradcheckReport r = run_gradcheck(o);
        std::map<std::string, double> worst;
        for (const auto& e : r.entries) worst[e.group] = std::max(worst[e.group], e.relative_error);
        out << "seed " << o.seed << ":";
        for (const auto& [g, v] : worst) out << ' ' << g << '=' << std::setprecision(3) << v;
        for (const auto& g : r.unreached_groups) out << " (" << g << " unreached)";
        out << (r.passed ? "  ok\n" : "  FAILED\n");
        ok = ok && r.passed;
        all.entries.insert(all.entries.end(), r.entries.begin(), r.entries.end());
      }
      if (!gc_csv.empty()) gradcheck_table(all).write(gc_csv);
      if (!ok) {
        err << "gradient check failed\n";
        return kExitFailure;
      }
      return kExitOk;
    }
    if (ablate->parsed()) {
      AblationOptions o;
      o.base = read_train_config(ab_config);
      apply_step_override(o.base, ab_steps);
      if (ab_seed) o.base.seed = *ab_seed;
      o.eval_scenes = ab_scenes;
      o.sample_steps = ab_sample_steps;
      const auto rows = run_ablation(o);
      ablation_table(rows).write(ab_out);
      for (const auto& r : rows) {
        out << std::left << std::setw(14) << r.configuration << " conditioned mse " << r.conditioned_mse
            << "  unconditional mse " << r.unconditional_mse << "\n";
      }
      return kExitOk;
    }
    if (routing->parsed()) {
      const Model model = load_checkpoint(rt_checkpoint).model;
      std::vector<RoutingRow> rows;
      for (const auto& r : rt_refs) {
        rows.push_back(inspect_routing(model, fs::path(r).filename().string(), load_reference(model, r)));
      }
      Rng rng(rt_seed);
      for (std::size_t i = 0; i < rt_scenes; ++i) {
        const ToyScene s = synth_scene(rng, PairingKind::Intra, model.config().image_side);
        rows.push_back(inspect_routing(model, "scene-" + std::to_string(i), s.reference));
      }
      if (rows.empty()) throw ConfigError("no references: pass --reference or --scenes");
      routing_table(rows).write(rt_out);
      if (!rt_svg.empty()) atomic_write_file(rt_svg, routing_svg(rows));
      out << "wrote " << rows.size() << " rows to " << rt_out << "\n";
      return kExitOk;
    }
    if (attn->parsed()) {
      const Model model = load_checkpoint(am_checkpoint).model;
      SampleSpec spec;
      spec.steps = am_steps;
      spec.seed = am_seed;
      spec.fusion = parse_fusion_mode(am_fusion);
      if (am_scene_seed >= 0) {
        const ToyScene s = scene_from_seed(model, static_cast<std::uint64_t>(am_scene_seed));
        spec.subjects.push_back(subject_from_scene(model, s));
        spec.text = s.text;
      }
      if (!am_ref.empty()) {
        SubjectSpec s;
        s.features = model.encoder().encode(load_reference(model, am_ref));
        spec.subjects.push_back(std::move(s));
      }
      if (!am_text.empty()) spec.text = parse_tags(am_text);
      const auto sets = attention_maps(model, spec, am_t);
      const fs::path dir = am_out;
      attention_table(sets).write(dir / "attn_maps.csv");
      for (const auto& s : sets) {
        const std::string mode = attention_mode_name(s.mode);
        write_ppm(dir / (mode + ".ppm"), s.sample);
        for (std::size_t b = 0; b < s.image_maps.size(); ++b) {
          write_pgm(dir / (mode + ".block" + std::to_string(b) + ".image.pgm"), s.image_maps[b]);
        }
        for (std::size_t b = 0; b < s.text_maps.size(); ++b) {
          write_pgm(dir / (mode + ".block" + std::to_string(b) + ".text.pgm"), s.text_maps[b]);
        }
      }
      out << "wrote attention maps for " << sets.size() << " wirings to " << dir.string() << "\n";
      return kExitOk;
    }
    if (probe->parsed()) {
      const Model model = load_checkpoint(pl_checkpoint).model;
      const ToyScene scene = scene_from_seed(model, pl_scene_seed);
      const auto rows = probe_layers(model, scene, pl_steps, pl_seed);
      const fs::path dir = pl_out;
      layer_probe_table(rows).write(dir / "probe.csv");
      write_ppm(dir / "target.ppm", scene.target);
      write_ppm(dir / "reference.ppm", scene.reference);
      for (const auto& r : rows) write_ppm(dir / (std::string(level_name(r.level)) + ".ppm"), r.sample);
      for (const auto& r : rows) {
        out << level_name(r.level) << ": mse " << r.mse << ", subject mse " << r.subject_mse << "\n";
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "dynaip: " << e.what() << "\n";
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dynaip"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dynaip

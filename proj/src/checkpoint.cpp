// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/checkpoint.hpp"

#include <algorithm>
#include <set>

#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"

namespace dynaip {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "tensors.bin";

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

void append(std::string& blob, nlohmann::json& entries, const std::string& name, const Tensor& t) {
  const std::string bytes = encode_f32_le(t.data());
  entries.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", blob.size()},
                     {"bytes", bytes.size()}});
  blob += bytes;
}

struct Parsed {
  ModelConfig config;
  TrainingState state;
  std::size_t adam_steps = 0;
  std::vector<Entry> entries;
  std::string blob;
};

Parsed parse(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifest;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw FormatError(manifest_path.string() + ": not a checkpoint manifest");
  }
  const std::string version = doc.value("version", "");
  if (version != kCheckpointVersion) {
    throw FormatError(manifest_path.string() + ": checkpoint version '" + version + "' is not supported (expected '" +
                      kCheckpointVersion + "')");
  }
  Parsed p;
  p.blob = read_file(dir / kBlob);
  try {
    p.config = doc.at("model").get<ModelConfig>();
    const auto& tr = doc.at("training");
    p.state.step = tr.at("step").get<std::size_t>();
    p.state.stage = tr.at("stage").get<std::size_t>();
    p.state.has_optimizer = tr.at("optimizer_moments").get<bool>();
    p.adam_steps = tr.value("adam_steps", std::size_t{0});
    std::set<std::string> seen;
    for (const auto& e : doc.at("tensors")) {
      Entry entry{e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                  e.at("bytes").get<std::size_t>()};
      if (e.at("dtype").get<std::string>() != "f32") throw FormatError(entry.name + ": unsupported dtype");
      if (!seen.insert(entry.name).second) throw FormatError("tensor " + entry.name + " listed twice");
      if (entry.bytes != shape_numel(entry.shape) * 4) {
        throw FormatError("tensor " + entry.name + ": " + std::to_string(entry.bytes) + " bytes do not match shape " +
                          shape_string(entry.shape));
      }
      if (entry.offset + entry.bytes > p.blob.size()) {
        throw FormatError("tensor " + entry.name + " lies outside " + kBlob + " (needs bytes " +
                          std::to_string(entry.offset) + ".." + std::to_string(entry.offset + entry.bytes) +
                          ", blob has " + std::to_string(p.blob.size()) + ")");
      }
      p.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  // Entries must not overlap.
  std::vector<const Entry*> sorted;
  for (const Entry& e : p.entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1]->offset + sorted[i - 1]->bytes > sorted[i]->offset) {
      throw FormatError("tensors " + sorted[i - 1]->name + " and " + sorted[i]->name + " overlap in the blob");
    }
  }
  return p;
}

Tensor read_entry(const Parsed& p, const Entry& e) {
  return Tensor(e.shape, decode_f32_le(std::string_view(p.blob).substr(e.offset, e.bytes)));
}

LoadedCheckpoint assemble(const Parsed& p, const ModelConfig& config) {
  const Model reference(config);
  ParamStore params;
  std::set<std::string> used;
  for (const Param& ref : reference.params().params()) {
    auto it = std::find_if(p.entries.begin(), p.entries.end(), [&](const Entry& e) { return e.name == ref.name; });
    if (it == p.entries.end()) throw FormatError("checkpoint is missing tensor " + ref.name);
    params.add(ref.name, read_entry(p, *it), ref.trainable);
    used.insert(ref.name);
  }

  std::optional<AdamW> optimizer;
  if (p.state.has_optimizer) optimizer.emplace(0.9, 0.999, 1e-8, 0.0);
  for (const Entry& e : p.entries) {
    if (used.contains(e.name)) continue;
    const bool is_m = e.name.starts_with("adam.m.");
    const bool is_v = e.name.starts_with("adam.v.");
    if (!p.state.has_optimizer || (!is_m && !is_v)) throw FormatError("unknown tensor " + e.name + " in checkpoint");
    const std::string param = e.name.substr(7);
    if (!reference.params().contains(param)) throw FormatError("unknown tensor " + e.name + " in checkpoint");
    auto& mo = optimizer->moments()[param];
    (is_m ? mo.m : mo.v) = read_entry(p, e);
  }
  if (optimizer) {
    optimizer->set_steps_taken(p.adam_steps);
    for (const auto& [name, mo] : optimizer->moments()) {
      if (mo.m.numel() == 0 || mo.v.numel() == 0 || mo.m.shape() != mo.v.shape()) {
        throw FormatError("incomplete optimizer moments for " + name);
      }
    }
  }
  return LoadedCheckpoint{Model(config, std::move(params)), p.state, std::move(optimizer)};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const AdamW* optimizer,
                     TrainingState state) {
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const Param& p : model.params().params()) append(blob, entries, p.name, p.value.cast(DType::F32));
  state.has_optimizer = optimizer != nullptr;
  if (optimizer) {
    // Canonical order: follow the parameter list, not the hash map.
    for (const Param& p : model.params().params()) {
      auto it = optimizer->moments().find(p.name);
      if (it == optimizer->moments().end()) continue;
      append(blob, entries, "adam.m." + p.name, it->second.m.cast(DType::F32));
      append(blob, entries, "adam.v." + p.name, it->second.v.cast(DType::F32));
    }
  }
  nlohmann::json doc{{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"model", model.config()},
                     {"training",
                      {{"step", state.step},
                       {"stage", state.stage},
                       {"optimizer_moments", state.has_optimizer},
                       {"adam_steps", optimizer ? optimizer->steps_taken() : 0}}},
                     {"tensors", entries}};
  atomic_write_file(dir / kBlob, blob);
  atomic_write_file(dir / kManifest, doc.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const Parsed p = parse(dir);
  return assemble(p, p.config);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected) {
  const Parsed p = parse(dir);
  const Model reference(expected);
  for (const Param& ref : reference.params().params()) {
    for (const Entry& e : p.entries) {
      if (e.name == ref.name && e.shape != ref.value.shape()) {
        throw DimensionError("checkpoint tensor " + e.name + " has shape " + shape_string(e.shape) +
                             ", model expects " + shape_string(ref.value.shape()));
      }
    }
  }
  return assemble(p, expected);
}

}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/encoder.hpp"

#include <cmath>
#include <vector>

#include "dynaip/attention.hpp"
#include "dynaip/autodiff.hpp"
#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"
#include "dynaip/image.hpp"
#include "dynaip/rng.hpp"

namespace dynaip {

const char* level_name(Level level) {
  switch (level) {
    case Level::Low: return "low";
    case Level::Mid: return "mid";
    case Level::High: return "high";
  }
  return "?";
}

Level parse_level(const std::string& name) {
  for (Level l : kLevels) {
    if (name == level_name(l)) return l;
  }
  throw ValidationError("unknown feature level '" + name + "' (expected low, mid or high)");
}

void HierFeatures::validate() const {
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    if (full[l].rank() != 2 || cls[l].rank() != 2 || cls[l].rows() != 1) {
      throw FormatError(std::string("level ") + level_name(kLevels[l]) + ": bad feature ranks");
    }
    if (full[l].rows() != full[0].rows()) {
      throw FormatError(std::string("level ") + level_name(kLevels[l]) + " has " +
                        std::to_string(full[l].rows()) + " tokens, low has " + std::to_string(full[0].rows()));
    }
    if (full[l].cols() != full[0].cols() || cls[l].cols() != full[0].cols()) {
      throw FormatError(std::string("level ") + level_name(kLevels[l]) + ": feature width mismatch");
    }
  }
}

bool HierFeatures::bit_equal(const HierFeatures& other) const {
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    if (!full[l].bit_equal(other.full[l]) || !cls[l].bit_equal(other.cls[l])) return false;
  }
  return true;
}

void EncoderConfig::validate() const {
  if (patch == 0 || image_side % patch != 0) {
    throw ConfigError("encoder image side " + std::to_string(image_side) + " not divisible by patch " +
                      std::to_string(patch));
  }
  if (width == 0 || heads == 0 || width % heads != 0) throw ConfigError("encoder width not divisible by heads");
  if (width % 4 != 0) throw ConfigError("encoder width must be a multiple of 4 for the 2-D position table");
  if (!(taps[0] >= 1 && taps[0] < taps[1] && taps[1] < taps[2])) {
    throw ConfigError("encoder taps must be strictly increasing and >= 1");
  }
  if (taps[2] > depth) throw ConfigError("encoder high tap exceeds depth");
  if (channels == 0) throw ConfigError("encoder channels must be positive");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"image_side", c.image_side}, {"channels", c.channels}, {"patch", c.patch},
                     {"depth", c.depth},           {"width", c.width},       {"heads", c.heads},
                     {"taps", c.taps},             {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.image_side = j.value("image_side", d.image_side);
  c.channels = j.value("channels", d.channels);
  c.patch = j.value("patch", d.patch);
  c.depth = j.value("depth", d.depth);
  c.width = j.value("width", d.width);
  c.heads = j.value("heads", d.heads);
  c.taps = j.value("taps", d.taps);
  c.seed = j.value("seed", d.seed);
}

Tensor sincos_2d_table(std::size_t grid_h, std::size_t grid_w, std::size_t width) {
  // First half of the columns encodes the row, second half the column.
  const std::size_t quarter = width / 4;
  std::vector<double> out(grid_h * grid_w * width);
  for (std::size_t y = 0; y < grid_h; ++y)
    for (std::size_t x = 0; x < grid_w; ++x) {
      double* row = out.data() + (y * grid_w + x) * width;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(quarter));
        row[k] = std::sin(static_cast<double>(y) * freq);
        row[quarter + k] = std::cos(static_cast<double>(y) * freq);
        row[2 * quarter + k] = std::sin(static_cast<double>(x) * freq);
        row[3 * quarter + k] = std::cos(static_cast<double>(x) * freq);
      }
    }
  return Tensor({grid_h * grid_w, width}, std::move(out));
}

namespace {

std::string block_name(std::size_t b, const char* leaf) {
  return "encoder.block" + std::to_string(b) + "." + leaf;
}

}  // namespace

HierEncoder::HierEncoder(EncoderConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.width;
  const std::size_t in = config_.patch * config_.patch * config_.channels;
  weights_.add("encoder.patch.weight", init_weight(rng, in, d), false);
  weights_.add("encoder.patch.bias", Tensor::zeros({1, d}), false);
  weights_.add("encoder.cls", rng.normal_tensor({1, d}, 1.0), false);
  for (std::size_t b = 0; b < config_.depth; ++b) {
    weights_.add(block_name(b, "ln1.gamma"), Tensor::full({1, d}, 1.0), false);
    weights_.add(block_name(b, "ln1.beta"), Tensor::zeros({1, d}), false);
    for (const char* proj : {"q", "k", "v", "o"}) {
      weights_.add(block_name(b, proj), init_weight(rng, d, d), false);
    }
    weights_.add(block_name(b, "ln2.gamma"), Tensor::full({1, d}, 1.0), false);
    weights_.add(block_name(b, "ln2.beta"), Tensor::zeros({1, d}), false);
    weights_.add(block_name(b, "mlp.w1"), init_weight(rng, d, 2 * d), false);
    weights_.add(block_name(b, "mlp.b1"), rng.uniform_tensor({1, 2 * d}, -0.1, 0.1), false);
    weights_.add(block_name(b, "mlp.w2"), init_weight(rng, 2 * d, d), false);
    weights_.add(block_name(b, "mlp.b2"), Tensor::zeros({1, d}), false);
  }
  const std::size_t grid = config_.image_side / config_.patch;
  position_table_ = sincos_2d_table(grid, grid, d);
}

HierFeatures HierEncoder::encode(const Tensor& image) const {
  const auto& c = config_;
  if (image.rank() != 3 || image.dim(0) != c.image_side || image.dim(1) != c.image_side ||
      image.dim(2) != c.channels) {
    throw ConfigError("encoder expects a " + std::to_string(c.image_side) + "x" + std::to_string(c.image_side) +
                      "x" + std::to_string(c.channels) + " image, got " + shape_string(image.shape()));
  }
  Tape tape(false);
  auto w = [&](const std::string& name) { return weights_.bind(tape, name); };
  Var patches = tape.constant(patchify(image, c.patch));
  Var tokens = add(linear(patches, w("encoder.patch.weight"), w("encoder.patch.bias")),
                   tape.constant(position_table_));
  std::array<Var, 2> seq{w("encoder.cls"), tokens};
  Var x = concat_rows(seq);
  const std::size_t g = c.tokens();

  HierFeatures out;
  std::size_t next_tap = 0;
  for (std::size_t b = 0; b < c.depth && next_tap < kNumLevels; ++b) {
    Var h = layer_norm(x, w(block_name(b, "ln1.gamma")), w(block_name(b, "ln1.beta")), 1e-6);
    Var attn = multi_head_attention(matmul(h, w(block_name(b, "q"))), matmul(h, w(block_name(b, "k"))),
                                    matmul(h, w(block_name(b, "v"))), c.heads);
    x = add(x, matmul(attn, w(block_name(b, "o"))));
    h = layer_norm(x, w(block_name(b, "ln2.gamma")), w(block_name(b, "ln2.beta")), 1e-6);
    h = linear(gelu(linear(h, w(block_name(b, "mlp.w1")), w(block_name(b, "mlp.b1")))),
               w(block_name(b, "mlp.w2")), w(block_name(b, "mlp.b2")));
    x = add(x, h);
    if (b + 1 == c.taps[next_tap]) {
      out.cls[next_tap] = x.value().row_slice(0, 1);
      out.full[next_tap] = x.value().row_slice(1, g);
      ++next_tap;
    }
  }
  return out;
}

void save_features(const std::filesystem::path& manifest, const HierFeatures& features) {
  features.validate();
  nlohmann::json tensors = nlohmann::json::array();
  const std::string stem = manifest.stem().string();
  const auto dir = manifest.parent_path();
  for (Level l : kLevels) {
    for (const bool is_full : {true, false}) {
      const Tensor& t = is_full ? features.full_at(l) : features.cls_at(l);
      const std::string name = std::string(level_name(l)) + (is_full ? ".full" : ".cls");
      const std::string file = stem + "." + name + ".f32";
      atomic_write_file(dir / file, encode_f32_le(t.data()));
      tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"file", file}});
    }
  }
  nlohmann::json doc{{"format", "dynaip-features"}, {"version", 1}, {"tensors", tensors}};
  atomic_write_file(manifest, doc.dump(2) + "\n");
}

HierFeatures load_features(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": malformed feature manifest: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "dynaip-features" || !doc.contains("tensors") ||
      !doc["tensors"].is_array()) {
    throw FormatError(manifest.string() + ": not a feature manifest");
  }
  HierFeatures out;
  std::array<std::array<bool, 2>, kNumLevels> seen{};
  const auto dir = manifest.parent_path();
  for (const auto& entry : doc["tensors"]) {
    std::string name, file;
    Shape shape;
    try {
      name = entry.at("name").get<std::string>();
      file = entry.at("file").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      if (entry.at("dtype").get<std::string>() != "f32") throw FormatError("unsupported dtype for " + name);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(manifest.string() + ": malformed tensor entry: " + e.what());
    }
    const auto dot = name.find('.');
    if (dot == std::string::npos) throw FormatError("bad feature tensor name '" + name + "'");
    const Level level = parse_level(name.substr(0, dot));
    const std::string kind = name.substr(dot + 1);
    if (kind != "full" && kind != "cls") throw FormatError("bad feature tensor name '" + name + "'");
    if (shape.size() != 2 || shape_numel(shape) == 0) throw FormatError(name + ": expected a 2-D shape");
    const std::string bytes = read_file(dir / file);
    const std::size_t expected = shape_numel(shape) * 4;
    if (bytes.size() != expected) {
      throw FormatError(name + ": blob " + file + " expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(bytes.size()));
    }
    const std::size_t li = static_cast<std::size_t>(level);
    const std::size_t ki = kind == "full" ? 0 : 1;
    if (seen[li][ki]) throw FormatError("duplicate feature tensor " + name);
    seen[li][ki] = true;
    Tensor t(shape, decode_f32_le(bytes));
    (ki == 0 ? out.full[li] : out.cls[li]) = std::move(t);
  }
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    if (!seen[l][0] || !seen[l][1]) {
      throw FormatError(manifest.string() + ": missing tensors for level " + level_name(kLevels[l]));
    }
  }
  out.validate();
  return out;
}

}  // namespace dynaip

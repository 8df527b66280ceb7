// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dynaip/params.hpp"
#include "dynaip/tensor.hpp"

namespace dynaip {

enum class Level : std::size_t { Low = 0, Mid = 1, High = 2 };
inline constexpr std::array<Level, 3> kLevels{Level::Low, Level::Mid, Level::High};
inline constexpr std::size_t kNumLevels = 3;

const char* level_name(Level level);
Level parse_level(const std::string& name);

/// Full-token and class-token features tapped at three encoder depths.
struct HierFeatures {
  std::array<Tensor, kNumLevels> full;  // g x d1 each
  std::array<Tensor, kNumLevels> cls;   // 1 x d1 each

  const Tensor& full_at(Level l) const { return full[static_cast<std::size_t>(l)]; }
  const Tensor& cls_at(Level l) const { return cls[static_cast<std::size_t>(l)]; }
  std::size_t tokens() const { return full[0].rows(); }
  std::size_t width() const { return full[0].cols(); }
  /// Throws FormatError when levels disagree on g or d1.
  void validate() const;
  bool bit_equal(const HierFeatures& other) const;
};

struct EncoderConfig {
  std::size_t image_side = 24;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t depth = 6;
  std::size_t width = 32;
  std::size_t heads = 2;
  std::array<std::size_t, kNumLevels> taps{2, 4, 6};  // 1-based block indices
  std::uint64_t seed = 1234;

  std::size_t tokens() const { return (image_side / patch) * (image_side / patch); }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Frozen, randomly initialized pre-norm vision transformer. The class token
/// is a seed-fixed vector prepended to the patch tokens; a fixed 2-D
/// sinusoidal table is added to the patch embeddings. Each tap records the
/// residual stream after the tapped block (no trailing norm).
class HierEncoder {
 public:
  explicit HierEncoder(EncoderConfig config);

  HierFeatures encode(const Tensor& image) const;
  const EncoderConfig& config() const { return config_; }
  const ParamStore& weights() const { return weights_; }

 private:
  EncoderConfig config_;
  ParamStore weights_;
  Tensor position_table_;
};

/// 2-D sinusoidal table for a grid_h x grid_w token grid, width columns.
Tensor sincos_2d_table(std::size_t grid_h, std::size_t grid_w, std::size_t width);

/// Feature container: JSON manifest plus one f32 little-endian blob per
/// tensor, written next to the manifest.
void save_features(const std::filesystem::path& manifest, const HierFeatures& features);
HierFeatures load_features(const std::filesystem::path& manifest);

}  // namespace dynaip

// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>

#include "dynaip/model.hpp"
#include "dynaip/trainer.hpp"

namespace dynaip {

// A checkpoint is a directory with two files:
//   manifest.json  format tag, version, model config, training metadata and
//                  one entry per tensor {name, shape, dtype, offset, bytes}
//   tensors.bin    the tensors back to back as little-endian float32
// Optimizer moments, when present, are stored as "adam.m.<param>" and
// "adam.v.<param>".

inline constexpr const char* kCheckpointFormat = "dynaip-checkpoint";
inline constexpr const char* kCheckpointVersion = "1";

struct TrainingState {
  std::size_t step = 0;
  std::size_t stage = 0;
  bool has_optimizer = false;
};

struct LoadedCheckpoint {
  Model model;
  TrainingState state;
  std::optional<AdamW> optimizer;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const AdamW* optimizer = nullptr,
                     TrainingState state = {});

/// Loads with the config stored in the manifest.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);
/// Loads into a model built from `expected`; any tensor whose shape differs
/// raises DimensionError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected);

}  // namespace dynaip

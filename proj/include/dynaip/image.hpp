// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "dynaip/tensor.hpp"

namespace dynaip {

// Images are H x W x C tensors with values in [-1, 1]; 1 is white.

/// H x W x C -> (H/p * W/p) x (p*p*C); tokens row-major over the patch grid,
/// each token row-major over (dy, dx, channel).
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch);

/// Binary PPM (P6) with [-1, 1] mapped linearly onto 0..255.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
/// Binary PGM (P5) of a 2-D map, min-max normalized to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& map);

/// Plain PBM (P1) token-grid mask.
struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, entries in {0, 1}
  std::size_t ones() const;
};

Mask parse_mask(const std::filesystem::path& path, std::size_t expected_tokens);
Mask parse_mask_text(const std::string& text, std::size_t expected_tokens);
std::string format_mask(const Mask& mask);
void write_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace dynaip

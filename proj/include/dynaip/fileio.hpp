// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dynaip {

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian IEEE-754 binary32 encoding of `values` (rounded to float).
std::string encode_f32_le(std::span<const double> values);
/// Inverse of encode_f32_le; `bytes.size()` must be 4 * count.
std::vector<double> decode_f32_le(std::string_view bytes);

}  // namespace dynaip

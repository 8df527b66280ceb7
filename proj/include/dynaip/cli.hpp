// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynaip {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `dynaip` tool. Usage errors return 2 after printing
/// help to `err`; runtime failures return 1 with a diagnostic.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "sky,left,large" or "0,5,11" into tag ids.
std::vector<std::size_t> parse_tags(const std::string& text);

}  // namespace dynaip

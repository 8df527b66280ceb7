// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dynaip/analysis.hpp"

namespace dynaip {

/// Header-first CSV assembled in memory and written atomically.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add_row(std::vector<std::string> cells);
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trippable decimal for a double.
std::string format_number(double v);

CsvTable loss_table(const std::vector<StepRecord>& history);
CsvTable routing_table(const std::vector<RoutingRow>& rows);
CsvTable ablation_table(const std::vector<AblationRow>& rows);
CsvTable gradcheck_table(const GradcheckReport& report);
CsvTable attention_table(const std::vector<AttentionMapSet>& sets);
CsvTable layer_probe_table(const std::vector<LayerProbeRow>& rows);

/// Minimal SVG documents: a polyline of loss against step, and grouped bars
/// of routing weights per image.
std::string loss_svg(const std::vector<StepRecord>& history);
std::string routing_svg(const std::vector<RoutingRow>& rows);

}  // namespace dynaip

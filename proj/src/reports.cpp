// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/reports.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "dynaip/error.hpp"
#include "dynaip/fileio.hpp"

namespace dynaip {

namespace {

std::string quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string count(std::size_t v) { return std::to_string(v); }

}  // namespace

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  if (header_.empty()) throw ContractError("csv table needs at least one column");
}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) {
    throw DimensionError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(header_.size()));
  }
  rows_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += quote(cells[i]);
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { atomic_write_file(path, str()); }

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, end);
}

CsvTable loss_table(const std::vector<StepRecord>& history) {
  CsvTable t({"step", "stage", "loss", "lr", "cross_pairs"});
  for (const StepRecord& r : history) {
    t.add_row({count(r.step), count(r.stage), format_number(r.loss), format_number(r.lr), count(r.cross_pairs)});
  }
  return t;
}

CsvTable routing_table(const std::vector<RoutingRow>& rows) {
  CsvTable t({"image_id", "w_low", "w_mid", "w_high", "source"});
  for (const RoutingRow& r : rows) {
    const auto& w = r.coefficients.w;
    t.add_row({r.image_id, format_number(w[0]), format_number(w[1]), format_number(w[2]),
               source_name(r.coefficients.source)});
  }
  return t;
}

CsvTable ablation_table(const std::vector<AblationRow>& rows) {
  CsvTable t({"configuration", "fusion", "train_mode", "infer_mode", "train_steps", "final_train_loss",
              "conditioned_mse", "unconditional_mse", "win_rate"});
  for (const AblationRow& r : rows) {
    t.add_row({r.configuration, fusion_mode_name(r.fusion), attention_mode_name(r.train_mode),
               attention_mode_name(r.infer_mode), count(r.train_steps), format_number(r.final_train_loss),
               format_number(r.conditioned_mse), format_number(r.unconditional_mse), format_number(r.win_rate)});
  }
  return t;
}

CsvTable gradcheck_table(const GradcheckReport& report) {
  CsvTable t({"scenario", "param", "group", "coords", "relative_error", "grad_norm"});
  for (const GradcheckEntry& e : report.entries) {
    t.add_row({e.scenario, e.param, e.group, count(e.entries), format_number(e.relative_error),
               format_number(e.grad_norm)});
  }
  return t;
}

CsvTable attention_table(const std::vector<AttentionMapSet>& sets) {
  CsvTable t({"mode", "block", "branch", "row", "col", "weight"});
  for (const AttentionMapSet& s : sets) {
    auto emit = [&](const std::vector<Tensor>& maps, const char* branch) {
      for (std::size_t b = 0; b < maps.size(); ++b)
        for (std::size_t r = 0; r < maps[b].rows(); ++r)
          for (std::size_t c = 0; c < maps[b].cols(); ++c)
            t.add_row({attention_mode_name(s.mode), count(b), branch, count(r), count(c),
                       format_number(maps[b].at(r, c))});
    };
    emit(s.image_maps, "image");
    emit(s.text_maps, "text");
  }
  return t;
}

CsvTable layer_probe_table(const std::vector<LayerProbeRow>& rows) {
  CsvTable t({"level", "mse", "subject_mse"});
  for (const LayerProbeRow& r : rows) {
    t.add_row({level_name(r.level), format_number(r.mse), format_number(r.subject_mse)});
  }
  return t;
}

std::string loss_svg(const std::vector<StepRecord>& history) {
  constexpr double kW = 480, kH = 240, kPad = 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!history.empty()) {
    double hi = 0.0;
    for (const auto& r : history) hi = std::max(hi, r.loss);
    if (hi <= 0.0) hi = 1.0;
    const double n = static_cast<double>(std::max<std::size_t>(history.size() - 1, 1));
    svg << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < history.size(); ++i) {
      const double x = kPad + (kW - 2 * kPad) * static_cast<double>(i) / n;
      const double y = kH - kPad - (kH - 2 * kPad) * history[i].loss / hi;
      svg << (i ? " " : "") << format_number(std::round(x * 10) / 10) << ',' << format_number(std::round(y * 10) / 10);
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kPad << "\" y=\"" << kPad - 10 << "\" font-size=\"12\">loss (max "
        << format_number(hi) << ")</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string routing_svg(const std::vector<RoutingRow>& rows) {
  constexpr double kBar = 12, kGap = 10, kH = 160, kPad = 20;
  const double width = kPad * 2 + static_cast<double>(rows.size()) * (3 * kBar + kGap);
  static const char* const kColors[] = {"#4477aa", "#66ccee", "#ee6677"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x0 = kPad + static_cast<double>(i) * (3 * kBar + kGap);
    for (std::size_t l = 0; l < kNumLevels; ++l) {
      const double h = (kH - 2 * kPad) * rows[i].coefficients.w[l];
      svg << "<rect x=\"" << x0 + static_cast<double>(l) * kBar << "\" y=\"" << format_number(kH - kPad - h)
          << "\" width=\"" << kBar - 1 << "\" height=\"" << format_number(h) << "\" fill=\"" << kColors[l]
          << "\"><title>" << rows[i].image_id << ' ' << level_name(kLevels[l]) << "</title></rect>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace dynaip

// SPDX-License-Identifier: Apache-2.0
//
// Reproduction reports: Pareto tables, scatter data, SVG plots and the
// Top / Size-L / Size-H / MAC-L / MAC-H summary.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ircount/explorer.hpp"

namespace ircount {

struct SummaryRow {
  std::string label;  // Top, Size-L, Size-H, MAC-L, MAC-H
  ResultRecord record;
};

/// Five summary rows for one precision. Top is the best balanced accuracy;
/// *-L is the cheapest member of the axis front; *-H is the cheapest model
/// whose balanced accuracy is within `max_drop` of Top.
std::vector<SummaryRow> select_summary(const std::vector<ResultRecord>& records, Precision precision,
                                       double max_drop = 0.05);

std::string summary_markdown(const std::vector<SummaryRow>& rows, Precision precision,
                             const std::optional<AggregatedMetrics>& baseline = std::nullopt);
std::string pareto_markdown(const std::vector<ResultRecord>& front, CostAxis axis,
                            Precision precision);

/// One row per successful record: spec, family, precision, cost, bal_acc, on_front.
std::string scatter_csv(const std::vector<ResultRecord>& records, CostAxis axis,
                        const std::string& digest);

/// Log-cost scatter with the front drawn as a polyline. Every point is a
/// <circle> carrying its spec in data-spec.
std::string scatter_svg(const std::vector<ResultRecord>& records, CostAxis axis, Precision precision,
                        const std::string& digest);

struct ReportFiles {
  std::filesystem::path markdown;
  std::filesystem::path csv;
  std::vector<std::filesystem::path> svg;
};

/// Writes report.md, scatter_<axis>.csv and pareto_<axis>_<precision>.svg.
ReportFiles write_report(const std::vector<ResultRecord>& records, CostAxis axis,
                         const std::filesystem::path& out_dir,
                         const std::optional<AggregatedMetrics>& baseline = std::nullopt);

}  // namespace ircount

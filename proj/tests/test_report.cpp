// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "ircount/report.hpp"

using namespace ircount;
namespace fs = std::filesystem;

namespace {

ResultRecord record(const std::string& spec, double bal, Precision prec = Precision::kFloat) {
  ResultRecord r;
  const ModelSpec s = parse_arch(spec);
  r.spec = s.str();
  r.family = s.family;
  r.window = s.window;
  r.precision = prec;
  r.cost = cost_report(s);
  r.config_digest = "abc";
  for (int k = 2; k <= 5; ++k) r.folds.push_back({k, {bal, bal, bal, 0.2, 0.3, 50}});
  reaggregate(r);
  return r;
}

// Costs (params / macs):
//   sf:w1:C8-P-FC            388 / 2880
//   sf:w1:C8-P-C8-FC         732 / 3200
//   mc:w3:C8-P-C8-FC         876 / 8384
//   sf:w1:C8-P-C8-FC64-FC   1532 / 3936
//   lstm:w3:C8-P-C8-L16-FC  2364 / 14176
std::vector<ResultRecord> known() {
  return {record("sf:w1:C8-P-FC", 0.55), record("sf:w1:C8-P-C8-FC", 0.78), record("mc:w3:C8-P-C8-FC", 0.80),
          record("sf:w1:C8-P-C8-FC64-FC", 0.79), record("lstm:w3:C8-P-C8-L16-FC", 0.82)};
}

}  // namespace

TEST_CASE("cost fixtures used below") {
  CHECK(count_params(parse_arch("sf:w1:C8-P-C8-FC")) == 732);
  CHECK(count_macs(parse_arch("sf:w1:C8-P-C8-FC")) == 3200);
  CHECK(count_params(parse_arch("mc:w3:C8-P-C8-FC")) == 876);
  CHECK(count_macs(parse_arch("mc:w3:C8-P-C8-FC")) == 8384);
  CHECK(count_params(parse_arch("sf:w1:C8-P-C8-FC64-FC")) == 1532);
  CHECK(count_macs(parse_arch("sf:w1:C8-P-C8-FC64-FC")) == 3936);
}

TEST_CASE("summary selection on a known optimum") {
  const auto rows = select_summary(known(), Precision::kFloat);
  std::map<std::string, std::string> got;
  for (const auto& r : rows) got[r.label] = r.record.spec;
  CHECK(rows.size() == 5);
  CHECK(got["Top"] == "lstm:w3:C8-P-C8-L16-FC");
  CHECK(got["Size-L"] == "sf:w1:C8-P-FC");
  CHECK(got["MAC-L"] == "sf:w1:C8-P-FC");
  // Within 0.05 of 0.82: 0.78, 0.79, 0.80, 0.82; cheapest by params / MACs.
  CHECK(got["Size-H"] == "sf:w1:C8-P-C8-FC");
  CHECK(got["MAC-H"] == "sf:w1:C8-P-C8-FC");

  auto shifted = known();
  shifted[1] = record("sf:w1:C8-P-C8-FC", 0.76);  // drops out of the 0.05 band
  std::map<std::string, std::string> g2;
  for (const auto& r : select_summary(shifted, Precision::kFloat)) g2[r.label] = r.record.spec;
  CHECK(g2["Size-H"] == "mc:w3:C8-P-C8-FC");
  CHECK(g2["MAC-H"] == "sf:w1:C8-P-C8-FC64-FC");

  auto q = known();
  q.push_back(record("sf:w1:C8-P-FC", 0.6, Precision::kInt8));
  const auto qrows = select_summary(q, Precision::kInt8);
  for (const auto& r : qrows) CHECK(r.record.precision == Precision::kInt8);
  const std::string md = summary_markdown(qrows, Precision::kInt8);
  CHECK(md.find("Top-Q") != std::string::npos);
  CHECK_THROWS(select_summary(known(), Precision::kInt8));
}

TEST_CASE("markdown tables") {
  const auto front = pareto_front(known(), CostAxis::kParams);
  const std::string md = pareto_markdown(front, CostAxis::kParams, Precision::kFloat);
  for (const auto& r : front) CHECK(md.find(r.spec) != std::string::npos);
  AggregatedMetrics base;
  base.bal_acc = {0.4277, 0.145};
  const std::string s = summary_markdown(select_summary(known(), Precision::kFloat), Precision::kFloat, base);
  CHECK(s.find("Baseline") != std::string::npos);
  CHECK(s.find("42.77") != std::string::npos);
}

TEST_CASE("scatter CSV and SVG") {
  auto rs = known();
  rs.push_back(record("sf:w1:C8-P-FC", 0.6, Precision::kInt8));
  const std::string csv = scatter_csv(rs, CostAxis::kMacs, "dig");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "spec,family,precision,cost_axis,cost,bal_acc,bal_acc_std,on_front,config_digest");
  int n = 0, on = 0;
  while (std::getline(in, line)) {
    ++n;
    on += line.find(",1,") != std::string::npos;
  }
  CHECK(n == 6);
  CHECK(on == int(pareto_front(rs, CostAxis::kMacs).size() + 1));

  const std::string svg = scatter_svg(rs, CostAxis::kMacs, Precision::kFloat, "dig");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("dig") != std::string::npos);
  // Every float record is plotted exactly once.
  for (const auto& r : known()) {
    const std::string tag = "data-spec=\"" + r.spec + "\"";
    const auto first = svg.find(tag);
    CHECK(first != std::string::npos);
    CHECK(svg.find(tag, first + 1) == std::string::npos);
  }
  // Tags balance.
  auto count = [&](const std::string& s) {
    std::size_t k = 0;
    for (auto p = svg.find(s); p != std::string::npos; p = svg.find(s, p + 1)) ++k;
    return k;
  };
  CHECK(count("<g") == count("</g>"));
  CHECK(count("data-spec=") == known().size());
  // The front polyline visits the front in increasing x order.
  const std::regex poly("<polyline id=\"front\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  std::istringstream pts(m[1].str());
  double last = -1;
  std::size_t k = 0;
  for (std::string xy; pts >> xy; ++k) {
    const double x = std::stod(xy.substr(0, xy.find(',')));
    CHECK(x > last);
    last = x;
  }
  CHECK(k == pareto_front(known(), CostAxis::kMacs).size());
}

TEST_CASE("report files") {
  const fs::path dir = fs::temp_directory_path() / "ircount_test_report";
  fs::remove_all(dir);
  auto rs = known();
  rs.push_back(record("sf:w1:C8-P-FC", 0.6, Precision::kInt8));
  const ReportFiles f = write_report(rs, CostAxis::kParams, dir);
  CHECK(fs::exists(f.markdown));
  CHECK(fs::exists(f.csv));
  CHECK(f.svg.size() == 2);
  for (const auto& p : f.svg) CHECK(fs::file_size(p) > 100);
  std::ifstream md(f.markdown);
  std::stringstream ss;
  ss << md.rdbuf();
  CHECK(ss.str().find("Size-L") != std::string::npos);
  fs::remove_all(dir);
}

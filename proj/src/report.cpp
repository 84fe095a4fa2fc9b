// SPDX-License-Identifier: Apache-2.0
#include "ircount/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ircount/error.hpp"
#include "ircount/model_file.hpp"

namespace ircount {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pct(const Aggregate& a) { return fixed(100 * a.mean, 2) + " ± " + fixed(100 * a.std, 2); }
std::string val(const Aggregate& a) { return fixed(a.mean, 3) + " ± " + fixed(a.std, 3); }

std::vector<const ResultRecord*> usable(const std::vector<ResultRecord>& records, Precision p) {
  std::vector<const ResultRecord*> out;
  for (const auto& r : records)
    if (r.ok() && r.precision == p) out.push_back(&r);
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Cheapest record, ties broken by higher accuracy then smaller spec.
const ResultRecord* cheapest(const std::vector<const ResultRecord*>& pool, CostAxis axis) {
  const ResultRecord* best = nullptr;
  for (const auto* r : pool) {
    if (!best) {
      best = r;
      continue;
    }
    const double c = record_cost(*r, axis), bc = record_cost(*best, axis);
    if (c < bc || (c == bc && (r->agg.bal_acc.mean > best->agg.bal_acc.mean ||
                               (r->agg.bal_acc.mean == best->agg.bal_acc.mean && r->spec < best->spec))))
      best = r;
  }
  return best;
}

std::string report_digest(const std::vector<ResultRecord>& records, CostAxis axis) {
  std::set<std::string> digests;
  for (const auto& r : records) digests.insert(r.config_digest);
  std::string s = "report;axis=" + std::string(axis_name(axis));
  for (const auto& d : digests) s += ";" + d;
  return config_digest(s);
}

}  // namespace

std::vector<SummaryRow> select_summary(const std::vector<ResultRecord>& records, Precision precision,
                                       double max_drop) {
  const auto pool = usable(records, precision);
  if (pool.empty()) throw Error("summary: no successful " + std::string(precision_name(precision)) + " records");
  const ResultRecord* top = pool.front();
  for (const auto* r : pool)
    if (r->agg.bal_acc.mean > top->agg.bal_acc.mean ||
        (r->agg.bal_acc.mean == top->agg.bal_acc.mean && r->spec < top->spec))
      top = r;
  std::vector<const ResultRecord*> near;
  for (const auto* r : pool)
    if (r->agg.bal_acc.mean > top->agg.bal_acc.mean - max_drop) near.push_back(r);
  std::vector<SummaryRow> rows{{"Top", *top}};
  for (CostAxis axis : {CostAxis::kParams, CostAxis::kMacs}) {
    const std::string name = axis == CostAxis::kParams ? "Size" : "MAC";
    rows.push_back({name + "-L", pareto_front(records, axis, precision).front()});
    rows.push_back({name + "-H", *cheapest(near, axis)});
  }
  return rows;
}

std::string summary_markdown(const std::vector<SummaryRow>& rows, Precision precision,
                             const std::optional<AggregatedMetrics>& baseline) {
  std::ostringstream o;
  o << "| Model | Spec | Bal. Acc. [%] | Acc. [%] | F1 | MAE | MSE | Params | MACs | Size [B] |\n"
    << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [label, r] : rows)
    o << "| " << label << (precision == Precision::kInt8 ? "-Q" : "") << " | `" << r.spec << "` | "
      << pct(r.agg.bal_acc) << " | " << pct(r.agg.acc) << " | " << val(r.agg.f1) << " | "
      << val(r.agg.mae) << " | " << val(r.agg.mse) << " | " << r.cost.params << " | " << r.cost.macs
      << " | " << r.size_bytes() << " |\n";
  if (baseline)
    o << "| Baseline | deterministic | " << pct(baseline->bal_acc) << " | " << pct(baseline->acc)
      << " | " << val(baseline->f1) << " | " << val(baseline->mae) << " | " << val(baseline->mse)
      << " | - | - | - |\n";
  return o.str();
}

std::string pareto_markdown(const std::vector<ResultRecord>& front, CostAxis axis, Precision precision) {
  std::ostringstream o;
  o << "| # | Spec | " << axis_name(axis) << " | Bal. Acc. [%] | Size [B] |\n|---|---|---|---|---|\n";
  int i = 0;
  for (const auto& r : front)
    o << "| " << ++i << " | `" << r.spec << "` | " << std::int64_t(record_cost(r, axis)) << " | "
      << pct(r.agg.bal_acc) << " | " << r.size_bytes() << " |\n";
  if (front.empty()) o << "| - | no " << precision_name(precision) << " records | | | |\n";
  return o.str();
}

std::string scatter_csv(const std::vector<ResultRecord>& records, CostAxis axis, const std::string& digest) {
  std::ostringstream o;
  o << "spec,family,precision,cost_axis,cost,bal_acc,bal_acc_std,on_front,config_digest\n";
  for (Precision p : {Precision::kFloat, Precision::kInt8}) {
    const auto pool = usable(records, p);
    if (pool.empty()) continue;
    std::set<std::string> on;
    for (const auto& r : pareto_front(records, axis, p)) on.insert(r.spec);
    for (const auto* r : pool)
      o << r->spec << ',' << family_name(r->family) << ',' << precision_name(p) << ','
        << axis_name(axis) << ',' << std::int64_t(record_cost(*r, axis)) << ','
        << fixed(r->agg.bal_acc.mean, 6) << ',' << fixed(r->agg.bal_acc.std, 6) << ','
        << (on.count(r->spec) ? 1 : 0) << ',' << digest << '\n';
  }
  return o.str();
}

std::string scatter_svg(const std::vector<ResultRecord>& records, CostAxis axis, Precision precision,
                        const std::string& digest) {
  const auto pool = usable(records, precision);
  constexpr double W = 720, H = 480, L = 70, R = 20, T = 30, B = 50;
  double cmin = 1e300, cmax = 1, amin = 1, amax = 0;
  for (const auto* r : pool) {
    cmin = std::min(cmin, std::max(1.0, record_cost(*r, axis)));
    cmax = std::max(cmax, record_cost(*r, axis));
    amin = std::min(amin, r->agg.bal_acc.mean);
    amax = std::max(amax, r->agg.bal_acc.mean);
  }
  if (pool.empty()) cmin = 1, cmax = 10, amin = 0, amax = 1;
  const double lx0 = std::floor(std::log10(cmin)), lx1 = std::max(lx0 + 1, std::ceil(std::log10(cmax)));
  const double y0 = std::max(0.0, std::floor(amin * 10) / 10), y1 = std::min(1.0, std::ceil(amax * 10) / 10 + 1e-9);
  auto px = [&](double c) { return L + (std::log10(std::max(1.0, c)) - lx0) / (lx1 - lx0) * (W - L - R); };
  auto py = [&](double a) { return H - B - (a - y0) / std::max(1e-9, y1 - y0) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
    << "<!-- config_digest: " << digest << " -->\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<g stroke=\"black\" fill=\"none\"><line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
    << "\" y2=\"" << H - B << "\"/><line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
    << H - B << "\"/></g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (double e = lx0; e <= lx1 + 1e-9; ++e)
    o << "<text x=\"" << fixed(px(std::pow(10, e)), 1) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\">1e" << int(e) << "</text>\n";
  for (double a = y0; a <= y1 + 1e-9; a += 0.1)
    o << "<text x=\"" << L - 6 << "\" y=\"" << fixed(py(a) + 4, 1) << "\" text-anchor=\"end\">"
      << fixed(a, 1) << "</text>\n";
  o << "<text x=\"" << (W + L) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
    << axis_name(axis) << " (log)</text>\n"
    << "<text x=\"16\" y=\"" << (H - B + T) / 2 << "\" transform=\"rotate(-90 16 " << (H - B + T) / 2
    << ")\" text-anchor=\"middle\">balanced accuracy (" << precision_name(precision) << ")</text>\n";
  int li = 0;
  for (Family f : all_families()) {
    o << "<circle cx=\"" << W - R - 90 << "\" cy=\"" << T + 4 + 14 * li << "\" r=\"4\" fill=\""
      << colors[int(f)] << "\"/><text x=\"" << W - R - 80 << "\" y=\"" << T + 8 + 14 * li << "\">"
      << family_name(f) << "</text>\n";
    ++li;
  }
  o << "</g>\n<g id=\"points\" fill-opacity=\"0.7\">\n";
  for (const auto* r : pool)
    o << "<circle cx=\"" << fixed(px(record_cost(*r, axis)), 2) << "\" cy=\""
      << fixed(py(r->agg.bal_acc.mean), 2) << "\" r=\"3\" fill=\"" << colors[int(r->family)]
      << "\" data-spec=\"" << xml_escape(r->spec) << "\"/>\n";
  o << "</g>\n";
  if (!pool.empty()) {
    o << "<polyline id=\"front\" fill=\"none\" stroke=\"black\" stroke-dasharray=\"5,3\" points=\"";
    for (const auto& r : pareto_front(records, axis, precision))
      o << fixed(px(record_cost(r, axis)), 2) << ',' << fixed(py(r.agg.bal_acc.mean), 2) << ' ';
    o << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

ReportFiles write_report(const std::vector<ResultRecord>& records, CostAxis axis,
                         const std::filesystem::path& out_dir,
                         const std::optional<AggregatedMetrics>& baseline) {
  bool any = false;
  for (const auto& r : records) any = any || r.ok();
  if (!any) throw Error("report: no successful records");
  std::filesystem::create_directories(out_dir);
  const std::string digest = report_digest(records, axis);
  ReportFiles files;
  auto put = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };

  std::ostringstream md;
  md << "# People-counting exploration report\n\n<!-- config_digest: " << digest << " -->\n\n"
     << "Records: " << records.size() << ". Cost axis: " << axis_name(axis) << ".\n";
  for (Precision p : {Precision::kFloat, Precision::kInt8}) {
    if (usable(records, p).empty()) continue;
    md << "\n## Summary (" << precision_name(p) << ")\n\n"
       << summary_markdown(select_summary(records, p), p, p == Precision::kFloat ? baseline : std::nullopt)
       << "\n## Pareto front (" << precision_name(p) << ", " << axis_name(axis) << ")\n\n"
       << pareto_markdown(pareto_front(records, axis, p), axis, p);
    const auto svg = out_dir / ("pareto_" + std::string(axis_name(axis)) + "_" +
                                std::string(precision_name(p)) + ".svg");
    put(svg, scatter_svg(records, axis, p, digest));
    files.svg.push_back(svg);
  }
  md << "\nMean ± std over folds, weighted by test-set size (population std).\n"
     << "Size-H and MAC-H: cheapest model within 5 points of Top.\n";
  files.markdown = out_dir / "report.md";
  put(files.markdown, md.str());
  files.csv = out_dir / ("scatter_" + std::string(axis_name(axis)) + ".csv");
  put(files.csv, scatter_csv(records, axis, digest));
  return files;
}

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Grid exploration: per-fold training and evaluation of every spec (float and
// int8), Pareto fronts and extractor selection for the dependent families.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ircount/arch.hpp"
#include "ircount/cost_model.hpp"
#include "ircount/dataset.hpp"
#include "ircount/metrics.hpp"
#include "ircount/quantizer.hpp"
#include "ircount/trainer.hpp"

namespace ircount {

struct FoldResult {
  int test_session = 0;
  FoldMetrics metrics;

  bool operator==(const FoldResult&) const = default;
};

struct ResultRecord {
  std::string spec;
  Family family = Family::kSingleFrame;
  int window = 1;
  Precision precision = Precision::kFloat;
  std::string status = "ok";  // "ok" or "error: ..."
  std::vector<FoldResult> folds;
  AggregatedMetrics agg;
  CostReport cost;
  std::uint64_t model_seed = 0;
  bool float_only = false;  // no int8 counterpart exists for this family
  std::string config_digest;

  bool ok() const { return status == "ok"; }
  std::int64_t size_bytes() const { return cost.size_bytes(precision); }
};

/// Recomputes `agg` from `folds`.
void reaggregate(ResultRecord& r);

// --- Pareto ----------------------------------------------------------------

enum class CostAxis { kMacs, kParams };
std::string_view axis_name(CostAxis a);
CostAxis parse_axis(std::string_view s);

struct ParetoPoint {
  double cost = 0;
  double accuracy = 0;
  std::string key;  // tie-break: lexicographically smaller wins
};

/// Indices of the non-dominated points, ordered by increasing cost (accuracy
/// strictly increases along the result).
std::vector<std::size_t> pareto_front(const std::vector<ParetoPoint>& points);

double record_cost(const ResultRecord& r, CostAxis axis);

/// Front over successful records of one precision.
std::vector<ResultRecord> pareto_front(const std::vector<ResultRecord>& records, CostAxis axis,
                                       Precision precision = Precision::kFloat);

enum class ExtractorSource { kBoth, kMacs, kParams };
ExtractorSource parse_extractor_source(std::string_view s);

/// sf models on the selected float fronts, deduplicated by conv/pool prefix
/// (first occurrence kept: MACs front first, then params front).
std::vector<ModelSpec> select_extractors(const std::vector<ResultRecord>& sf_records,
                                         ExtractorSource source = ExtractorSource::kBoth);

// --- Results CSV --------------------------------------------------------------

std::string results_header();
std::string results_row(const ResultRecord& r);
void write_results(std::ostream& out, const std::vector<ResultRecord>& records);
std::vector<ResultRecord> read_results(std::istream& in);
std::vector<ResultRecord> read_results_file(const std::filesystem::path& path);

// --- Grid run -------------------------------------------------------------------

struct ExploreConfig {
  std::vector<Family> families;  // stage order is fixed: sf, mc, then the rest
  GridOptions grid;
  ExtractorSource extractor_source = ExtractorSource::kBoth;
  std::uint64_t master_seed = 0;
  TrainConfig float_cfg = TrainConfig::float_defaults();
  TrainConfig qat_cfg = TrainConfig::qat_defaults();
  bool quantize = true;
  int jobs = 1;
  std::filesystem::path results_path;  // appended; existing specs are skipped
  std::filesystem::path timing_path;   // optional wall-clock sidecar
  std::size_t max_specs_per_family = 0;  // 0 = no limit (first N of the grid)
  std::vector<int> folds;  // test sessions to use; empty = all
  std::function<void(const std::string&)> log;

  /// Canonical text of every setting that affects results.
  std::string str() const;
};

/// Trains and evaluates one spec on one fold; returns float and (when
/// supported and enabled) int8 metrics.
struct FoldOutcome {
  FoldMetrics float_metrics;
  std::optional<FoldMetrics> int8_metrics;
  double seconds = 0;
};

/// Trained artifacts behind one FoldOutcome.
struct FoldModels {
  Normalization norm;
  TrainResult float_result;
  std::optional<TrainResult> qat_result;
  std::optional<QuantModel> int_model;
  FoldOutcome outcome;
};
FoldModels train_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                      const ModelSpec& spec, std::uint64_t model_seed, const ExploreConfig& cfg);
FoldOutcome run_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                     const ModelSpec& spec, std::uint64_t model_seed, const ExploreConfig& cfg);

std::uint64_t model_seed(std::uint64_t master, const ModelSpec& spec);

/// Runs the staged grid and returns every record (loaded + new).
std::vector<ResultRecord> run_grid(const std::vector<SessionRecord>& sessions,
                                   const ExploreConfig& cfg);

/// Records for a fixed list of specs (no staging).
std::vector<ResultRecord> run_specs(const std::vector<SessionRecord>& sessions,
                                    const std::vector<ModelSpec>& specs, const ExploreConfig& cfg,
                                    std::vector<ResultRecord> existing = {});

}  // namespace ircount

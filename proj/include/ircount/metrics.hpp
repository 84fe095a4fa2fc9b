// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ircount {

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k) : k_(k), counts_(std::size_t(k) * std::size_t(k), 0) {}
  ConfusionMatrix(int k, std::vector<std::int64_t> counts);

  void add(int truth, int pred);
  int classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return counts_[std::size_t(truth * k_ + pred)]; }
  std::int64_t total() const;
  std::int64_t support(int c) const;    // row sum
  std::int64_t predicted(int c) const;  // column sum

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int k);

/// Mean recall over classes with at least one ground-truth sample.
double balanced_accuracy(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
/// Support-weighted mean of per-class F1 (F1 = 0 when precision + recall = 0).
double weighted_f1(const ConfusionMatrix& cm);

struct ErrorStats {
  double mae = 0;
  double mse = 0;
};
ErrorStats mae_mse(std::span<const int> preds, std::span<const int> labels);

struct FoldMetrics {
  double bal_acc = 0;
  double acc = 0;
  double f1 = 0;
  double mae = 0;
  double mse = 0;
  std::int64_t n_test = 0;

  bool operator==(const FoldMetrics&) const = default;
};

FoldMetrics evaluate_predictions(std::span<const int> preds, std::span<const int> labels, int k);

struct Aggregate {
  double mean = 0;
  double std = 0;
};

/// Weighted mean and population standard deviation.
Aggregate aggregate_folds(std::span<const double> values, std::span<const double> weights);

struct AggregatedMetrics {
  Aggregate bal_acc, acc, f1, mae, mse;
};

/// Aggregates every metric with fold weights n_test.
AggregatedMetrics aggregate(std::span<const FoldMetrics> folds);

}  // namespace ircount

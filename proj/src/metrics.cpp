// SPDX-License-Identifier: Apache-2.0
#include "ircount/metrics.hpp"

#include <cmath>
#include <string>

#include "ircount/error.hpp"

namespace ircount {

ConfusionMatrix::ConfusionMatrix(int k, std::vector<std::int64_t> counts)
    : k_(k), counts_(std::move(counts)) {
  if (counts_.size() != std::size_t(k) * std::size_t(k))
    throw Error("confusion matrix needs K*K entries");
  for (auto c : counts_)
    if (c < 0) throw Error("confusion matrix entries must be >= 0");
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
    throw Error("class id outside [0, " + std::to_string(k_) + ")");
  ++counts_[std::size_t(truth * k_ + pred)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::int64_t ConfusionMatrix::support(int c) const {
  std::int64_t n = 0;
  for (int p = 0; p < k_; ++p) n += at(c, p);
  return n;
}

std::int64_t ConfusionMatrix::predicted(int c) const {
  std::int64_t n = 0;
  for (int t = 0; t < k_; ++t) n += at(t, c);
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, int k) {
  if (preds.size() != labels.size()) throw Error("predictions and labels differ in length");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels[i], preds[i]);
  return cm;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    const auto s = cm.support(c);
    if (s == 0) continue;
    sum += double(cm.at(c, c)) / double(s);
    ++present;
  }
  if (present == 0) throw Error("balanced accuracy of an empty confusion matrix");
  return sum / present;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw Error("accuracy of an empty confusion matrix");
  std::int64_t hit = 0;
  for (int c = 0; c < cm.classes(); ++c) hit += cm.at(c, c);
  return double(hit) / double(n);
}

double weighted_f1(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) return 0.0;
  double f1 = 0;
  for (int c = 0; c < cm.classes(); ++c) {
    const auto support = cm.support(c);
    if (support == 0) continue;
    const auto tp = double(cm.at(c, c));
    const auto pred = cm.predicted(c);
    const double precision = pred == 0 ? 0.0 : tp / double(pred);
    const double recall = tp / double(support);
    const double f = precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
    f1 += double(support) / double(n) * f;
  }
  return f1;
}

ErrorStats mae_mse(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw Error("predictions and labels differ in length");
  if (preds.empty()) throw Error("mae/mse of empty input");
  double a = 0, s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = double(preds[i]) - double(labels[i]);
    a += std::abs(d);
    s += d * d;
  }
  return {a / double(preds.size()), s / double(preds.size())};
}

FoldMetrics evaluate_predictions(std::span<const int> preds, std::span<const int> labels, int k) {
  const auto cm = confusion_matrix(preds, labels, k);
  const auto err = mae_mse(preds, labels);
  FoldMetrics m;
  m.bal_acc = balanced_accuracy(cm);
  m.acc = accuracy(cm);
  m.f1 = weighted_f1(cm);
  m.mae = err.mae;
  m.mse = err.mse;
  m.n_test = cm.total();
  return m;
}

Aggregate aggregate_folds(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) throw Error("one weight per fold required");
  if (values.empty()) throw Error("aggregation over zero folds");
  double wsum = 0, mean = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    wsum += weights[i];
    mean += weights[i] * values[i];
  }
  if (!(wsum > 0)) throw Error("aggregation with zero total weight");
  mean /= wsum;
  double var = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    var += weights[i] * (values[i] - mean) * (values[i] - mean);
  return {mean, std::sqrt(var / wsum)};
}

AggregatedMetrics aggregate(std::span<const FoldMetrics> folds) {
  std::vector<double> w, ba, acc, f1, mae, mse;
  for (const auto& f : folds) {
    w.push_back(double(f.n_test));
    ba.push_back(f.bal_acc);
    acc.push_back(f.acc);
    f1.push_back(f.f1);
    mae.push_back(f.mae);
    mse.push_back(f.mse);
  }
  return {aggregate_folds(ba, w), aggregate_folds(acc, w), aggregate_folds(f1, w),
          aggregate_folds(mae, w), aggregate_folds(mse, w)};
}

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch Adam training with a plateau learning-rate schedule, early
// stopping on the training loss and an optional quantization-aware mode.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ircount/dataset.hpp"
#include "ircount/network.hpp"

namespace ircount {

struct TrainConfig {
  int max_epochs = 500;
  double lr0 = 1e-3;
  double plateau_factor = 0.3;
  int plateau_patience = 5;
  int early_stop_patience = 10;
  double min_delta = 1e-4;
  int batch_size = 128;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  static TrainConfig float_defaults() { return {}; }
  static TrainConfig qat_defaults() {
    TrainConfig c;
    c.lr0 = 5e-4;
    c.plateau_patience = 10;
    c.early_stop_patience = 20;
    return c;
  }

  void validate() const;
  /// Canonical key=value rendering (seed excluded), hashed into config digests.
  std::string str() const;
};

enum class StopReason { kMaxEpochs, kEarlyStop };
std::string_view stop_reason_name(StopReason r);

struct TrainHistory {
  std::vector<double> loss;  // mean training loss per epoch
  std::vector<double> lr;    // learning rate used in that epoch
  StopReason stop = StopReason::kMaxEpochs;
  int best_epoch = -1;
  double best_loss = 0;

  int epochs() const { return int(loss.size()); }
  bool operator==(const TrainHistory&) const = default;
};

template <typename T>
struct AdamState {
  NetworkParams<T> m;
  NetworkParams<T> v;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> init_adam(const NetworkParams<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

/// One bias-corrected Adam update over every trainable tensor.
template <typename T>
void adam_step(NetworkParams<T>& params, const NetworkParams<T>& grads, AdamState<T>& state,
               double lr, const TrainConfig& cfg);

struct ScheduleDecision {
  double lr = 0;
  bool stop = false;
};

/// Replays the schedule over a loss history: an epoch improves when its loss
/// is below the best so far by more than min_delta. The learning rate is
/// multiplied by plateau_factor after plateau_patience epochs without
/// improvement (counter restarts after each reduction); training stops after
/// early_stop_patience epochs without improvement.
ScheduleDecision plateau_and_stop(std::span<const double> losses, const TrainConfig& cfg);

struct TrainResult {
  Model<float> model;  // best-loss snapshot
  TrainHistory history;
};

using EpochCallback = std::function<void(int epoch, double loss, double lr)>;

/// Trains on `units` (one label each). With quant_aware, batch norm is folded
/// first and every forward pass runs through fake quantization.
TrainResult train(Model<float> model, const SampleSet& data, std::span<const double> class_weights,
                  const TrainConfig& cfg, bool quant_aware, const EpochCallback& on_epoch = {});

}  // namespace ircount

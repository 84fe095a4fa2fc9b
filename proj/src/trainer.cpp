// SPDX-License-Identifier: Apache-2.0
#include "ircount/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ircount/cost_model.hpp"
#include "ircount/error.hpp"
#include "ircount/quantizer.hpp"
#include "ircount/rng.hpp"

namespace ircount {

void TrainConfig::validate() const {
  if (max_epochs < 1) throw Error("max_epochs must be >= 1");
  if (!(lr0 > 0)) throw Error("learning rate must be > 0");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw Error("plateau factor must be in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1) throw Error("patience must be >= 1");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (!(min_delta >= 0)) throw Error("min_delta must be >= 0");
}

std::string TrainConfig::str() const {
  std::ostringstream o;
  o.precision(17);
  o << "max_epochs=" << max_epochs << ";lr0=" << lr0 << ";plateau_factor=" << plateau_factor
    << ";plateau_patience=" << plateau_patience << ";early_stop_patience=" << early_stop_patience
    << ";min_delta=" << min_delta << ";batch_size=" << batch_size << ";beta1=" << beta1
    << ";beta2=" << beta2 << ";epsilon=" << epsilon;
  return o.str();
}

std::string_view stop_reason_name(StopReason r) {
  return r == StopReason::kEarlyStop ? "early_stop" : "max_epochs";
}

template <typename T>
void adam_step(NetworkParams<T>& params, const NetworkParams<T>& grads, AdamState<T>& state,
               double lr, const TrainConfig& cfg) {
  std::vector<BasicTensor<T>*> p, m, v;
  std::vector<const BasicTensor<T>*> g;
  params.for_each_trainable([&](const std::string&, BasicTensor<T>& t) { p.push_back(&t); });
  state.m.for_each_trainable([&](const std::string&, BasicTensor<T>& t) { m.push_back(&t); });
  state.v.for_each_trainable([&](const std::string&, BasicTensor<T>& t) { v.push_back(&t); });
  grads.for_each_trainable([&](const std::string&, const BasicTensor<T>& t) { g.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ShapeError("adam: parameter and gradient structures differ");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!(p[i]->shape() == g[i]->shape()) || !(p[i]->shape() == m[i]->shape()) ||
        !(p[i]->shape() == v[i]->shape()))
      throw ShapeError("adam: shape mismatch at tensor " + std::to_string(i));

  ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1 - std::pow(b1, double(state.step));
  const double c2 = 1 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& pt = *p[i];
    auto& mt = *m[i];
    auto& vt = *v[i];
    const auto& gt = *g[i];
    for (std::size_t k = 0; k < pt.size(); ++k) {
      const double gk = double(gt[k]);
      const double mk = b1 * double(mt[k]) + (1 - b1) * gk;
      const double vk = b2 * double(vt[k]) + (1 - b2) * gk * gk;
      mt[k] = T(mk);
      vt[k] = T(vk);
      const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.epsilon);
      pt[k] = T(double(pt[k]) - step);
    }
  }
}

template void adam_step<float>(NetworkParams<float>&, const NetworkParams<float>&,
                               AdamState<float>&, double, const TrainConfig&);
template void adam_step<double>(NetworkParams<double>&, const NetworkParams<double>&,
                                AdamState<double>&, double, const TrainConfig&);

ScheduleDecision plateau_and_stop(std::span<const double> losses, const TrainConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  int plateau_wait = 0, stop_wait = 0;
  ScheduleDecision d{cfg.lr0, false};
  for (double loss : losses) {
    if (loss < best - cfg.min_delta) {
      best = loss;
      plateau_wait = 0;
      stop_wait = 0;
      continue;
    }
    ++plateau_wait;
    ++stop_wait;
    if (plateau_wait >= cfg.plateau_patience) {
      d.lr *= cfg.plateau_factor;
      plateau_wait = 0;
    }
    if (stop_wait >= cfg.early_stop_patience) d.stop = true;
  }
  return d;
}

TrainResult train(Model<float> model, const SampleSet& data, std::span<const double> class_weights,
                  const TrainConfig& cfg, bool quant_aware, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw DataError("empty training set");
  if (class_weights.size() != std::size_t(model.spec().classes))
    throw ShapeError("one class weight per class required");
  if (quant_aware) {
    if (!quantizable(model.spec().family))
      throw QuantUnsupported("quantization-aware training of LSTM cells is not supported: " +
                             model.spec().str());
    if (!model.bn_folded()) model = fold_batchnorm(model);
    model.quant() = QuantState{};
    model.quant().enabled = true;
  }
  const std::vector<float> weights(class_weights.begin(), class_weights.end());

  std::vector<std::size_t> order(data.size());
  auto state = init_adam(model.params());
  TrainHistory hist;
  TrainResult best{model, {}};
  double best_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.lr0;

  std::vector<Window<float>> batch;
  std::vector<int> labels;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
    rng.shuffle(order);

    double sum = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(data.windows[order[i]]);
        labels.push_back(data.labels[order[i]]);
      }
      auto grads = model.params().zeros_like();
      const float loss = model.loss_and_grad(batch, labels, weights, &grads);
      if (!std::isfinite(loss)) throw Error("training diverged (non-finite loss)");
      sum += double(loss) * double(end - start);
      adam_step(model.params(), grads, state, lr, cfg);
    }
    const double epoch_loss = sum / double(order.size());
    hist.loss.push_back(epoch_loss);
    hist.lr.push_back(lr);
    if (on_epoch) on_epoch(epoch, epoch_loss, lr);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best.model = model;
      hist.best_epoch = epoch;
    }
    const auto d = plateau_and_stop(hist.loss, cfg);
    lr = d.lr;
    if (d.stop) {
      hist.stop = StopReason::kEarlyStop;
      break;
    }
  }
  hist.best_loss = best_loss;
  best.history = std::move(hist);
  return best;
}

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Instantiated models for the six families: parameters, batched forward and
// backward passes, and count prediction (including majority voting).
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ircount/arch.hpp"
#include "ircount/layers.hpp"
#include "ircount/quant_params.hpp"

namespace ircount {

/// W frames of shape (8, 8, 1), oldest first; the label belongs to the last.
template <typename T>
using Window = std::vector<BasicTensor<T>>;

template <typename T>
struct ConvBlock {
  nn::Conv2dParams<T> conv;
  std::optional<nn::BatchNormParams<T>> bn;  // empty once folded
};

template <typename T>
struct NetworkParams {
  std::vector<ConvBlock<T>> blocks;
  std::optional<nn::LstmParams<T>> lstm;
  std::optional<nn::Conv1dParams<T>> tcn;
  std::vector<nn::DenseParams<T>> dense;  // hidden layers, then output

  /// Visits every trainable tensor in a fixed order with a stable name.
  template <typename F>
  void for_each_trainable(F&& f) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "conv" + std::to_string(b);
      f(p + ".kernel", blocks[b].conv.kernel);
      f(p + ".bias", blocks[b].conv.bias);
      if (blocks[b].bn) {
        f(p + ".bn.gamma", blocks[b].bn->gamma);
        f(p + ".bn.beta", blocks[b].bn->beta);
      }
    }
    if (lstm) {
      f(std::string("lstm.w_input"), lstm->w_input);
      f(std::string("lstm.w_recurrent"), lstm->w_recurrent);
      f(std::string("lstm.bias"), lstm->bias);
    }
    if (tcn) {
      f(std::string("tcn.kernel"), tcn->kernel);
      f(std::string("tcn.bias"), tcn->bias);
    }
    for (std::size_t d = 0; d < dense.size(); ++d) {
      const std::string p = "fc" + std::to_string(d);
      f(p + ".weight", dense[d].weight);
      f(p + ".bias", dense[d].bias);
    }
  }
  template <typename F>
  void for_each_trainable(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each_trainable(
        [&](const std::string& n, BasicTensor<T>& t) { f(n, static_cast<const BasicTensor<T>&>(t)); });
  }

  /// Trainable tensors plus BN running statistics.
  template <typename F>
  void for_each_tensor(F&& f) {
    for_each_trainable(f);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      if (blocks[b].bn) {
        const std::string p = "conv" + std::to_string(b) + ".bn.";
        f(p + "running_mean", blocks[b].bn->running_mean);
        f(p + "running_var", blocks[b].bn->running_var);
      }
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
    return n;
  }

  /// Same structure, all trainable tensors zero.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each_trainable([](const std::string&, BasicTensor<T>& t) { t.fill(T(0)); });
    return z;
  }

  template <typename U>
  NetworkParams<U> cast() const;
};

/// Activation observers used by quantization-aware forward passes. The
/// fake-quant points are: network input, every conv block output, the TCN
/// output and every dense output.
struct QuantState {
  bool enabled = false;
  RangeObserver input;
  std::vector<RangeObserver> blocks;
  RangeObserver temporal;
  std::vector<RangeObserver> dense;

  bool operator==(const QuantState&) const = default;
};

struct Prediction {
  std::vector<double> probabilities;
  int count = 0;
  std::vector<int> votes;  // majority voting only
};

enum class Mode { kTrain, kInfer };

template <typename T>
struct Tape;

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, NetworkParams<T> params, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  NetworkParams<T>& params() { return params_; }
  const NetworkParams<T>& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  QuantState& quant() { return quant_; }
  const QuantState& quant() const { return quant_; }

  bool bn_folded() const;

  /// Frames per training unit: 1 for majority voting (its network is a
  /// single-frame CNN), W otherwise.
  std::size_t unit_frames() const;

  /// Infer-mode logits, one per unit.
  std::vector<BasicTensor<T>> unit_logits(std::span<const Window<T>> units) const;

  /// Train-mode forward + backward. Returns the mean class-weighted loss and
  /// accumulates the gradient of that mean into `grads` (if non-null). With
  /// `update_stats` false, BN running statistics and quantization observers
  /// are left untouched.
  T loss_and_grad(std::span<const Window<T>> units, std::span<const int> labels,
                  std::span<const T> class_weights, NetworkParams<T>* grads,
                  bool update_stats = true);

  /// Forward pass that only updates the quantization observers (BN must be
  /// folded). Used for post-training calibration.
  void observe(std::span<const Window<T>> units);

  /// Count prediction for a W-frame window.
  Prediction predict(const Window<T>& window) const;

  template <typename U>
  Model<U> cast() const;

 private:
  std::vector<BasicTensor<T>> forward(std::span<const Window<T>> units, Mode mode,
                                      Tape<T>* tape, bool update_stats);
  void backward(Tape<T>& tape, std::vector<BasicTensor<T>> grad_logits,
                NetworkParams<T>& grads) const;

  ModelSpec spec_;
  NetworkParams<T> params_;
  std::uint64_t seed_ = 0;
  QuantState quant_;
};

/// Fresh model: He-normal conv/FC/TCN weights, Xavier-uniform LSTM matrices,
/// zero biases except LSTM forget bias 1, BN gamma 1 / beta 0.
Model<float> build_model(const ModelSpec& spec, std::uint64_t seed);

/// Majority vote over per-frame probabilities: the most frequent argmax wins;
/// ties go to the larger summed probability, then to the smaller count.
int majority_vote(const std::vector<std::vector<double>>& frame_probs,
                  std::vector<int>* votes = nullptr);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace ircount

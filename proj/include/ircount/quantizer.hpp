// SPDX-License-Identifier: Apache-2.0
//
// BN folding, activation calibration, int8 export and integer inference.
//
// Requantization: an int32 accumulator `acc` maps to
//   clamp(zp_out + rhe(acc * mult / 2^shift))
// where mult is in [2^30, 2^31) and rhe rounds half to even. The multiply is
// exact in 64 bits, so the integer path never touches floating point.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ircount/arch.hpp"
#include "ircount/dataset.hpp"
#include "ircount/network.hpp"
#include "ircount/quant_params.hpp"

namespace ircount {

/// Absorbs every BN layer into the preceding convolution.
template <typename T>
Model<T> fold_batchnorm(const Model<T>& model);

/// Folds BN if needed, resets the observers and runs every calibration window
/// through an observing forward pass, in batches drawn in a seeded shuffled
/// order (session-ordered batches would bias the EMA towards the last session).
Model<float> calibrate(const Model<float>& model, std::span<const Window<float>> units,
                       std::size_t batch_size = 128, std::uint64_t seed = 0);

struct Requant {
  std::int32_t mult = 0;
  int shift = 0;

  bool operator==(const Requant&) const = default;
};

/// Encodes a positive real multiplier. Throws for non-positive or
/// non-representable values.
Requant quantize_multiplier(double m);
/// rhe(acc * mult / 2^shift) with saturation to int32.
std::int32_t apply_requant(std::int64_t acc, const Requant& r);

enum class QLayerKind : std::uint8_t { kConv2d, kConv1d, kDense };

struct QLayer {
  QLayerKind kind = QLayerKind::kDense;
  Shape weight_shape;  // same layout as the float tensor
  std::vector<std::int8_t> weight;
  std::vector<std::int32_t> bias;
  QuantParams in, w, out;
  Requant requant;
  bool relu = false;

  bool operator==(const QLayer&) const = default;
};

struct QuantModel {
  ModelSpec spec;
  QuantParams input;
  std::vector<QLayer> conv;
  std::optional<QLayer> tcn;
  std::vector<QLayer> dense;

  /// Bytes of int8 weights, int32 biases and one 4-byte scale plus one 4-byte
  /// zero point per weight tensor.
  std::int64_t size_bytes() const;
  bool operator==(const QuantModel&) const = default;
};

/// Requires folded BN and initialized observers (calibrated or QAT-trained).
QuantModel export_int8(const Model<float>& model);

/// Int8 frames (W x 64 codes, oldest first).
using IntWindow = std::vector<std::vector<std::int8_t>>;

IntWindow quantize_window(const Window<float>& window, const QuantParams& q);

struct IntTrace {
  // Per conv block, per image: outputs after ReLU (before pooling); then the
  // pooled outputs per image.
  std::vector<std::vector<std::vector<std::int8_t>>> blocks;
  std::vector<std::vector<std::int8_t>> pooled;
  std::vector<std::int8_t> temporal;
  std::vector<std::vector<std::int8_t>> dense;  // per layer
};

struct IntPrediction {
  int count = 0;
  // Output codes; for majority voting, the per-class sum over frames (the
  // vote tie-break).
  std::vector<std::int32_t> logits;
  std::vector<int> votes;  // majority voting only
};

/// Pure integer inference. Optionally records every layer's output codes
/// (for majority voting, the trace covers the last frame only).
IntPrediction int_forward(const QuantModel& qm, const IntWindow& window, IntTrace* trace = nullptr);

/// Reference fixed-point simulation: same arithmetic definition, evaluated in
/// extended precision with separate loops. Only the last layer's codes and the
/// trace are produced.
IntTrace reference_forward(const QuantModel& qm, const IntWindow& window);

}  // namespace ircount

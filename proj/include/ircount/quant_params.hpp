// SPDX-License-Identifier: Apache-2.0
//
// Affine int8 quantization parameters, range observers and fake quantization.
// Activations are asymmetric int8 [-128, 127]; weights are symmetric
// [-127, 127] with zero point 0.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "ircount/tensor.hpp"

namespace ircount {

inline constexpr int kQMin = -128;
inline constexpr int kQMax = 127;
inline constexpr int kWeightQMax = 127;
/// Half-width of the range substituted for an all-zero observation.
inline constexpr double kDegenerateRange = 1e-6;

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  std::int32_t qmin = kQMin;
  std::int32_t qmax = kQMax;

  bool operator==(const QuantParams&) const = default;
};

/// Round half to even, the rounding mode used everywhere in the quantizer.
inline double round_half_even(double x) { return std::nearbyint(x); }

/// Asymmetric parameters covering [lo, hi] (always extended to include 0).
inline QuantParams activation_qparams(double lo, double hi) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (hi - lo < 2 * kDegenerateRange) {
    lo = -kDegenerateRange;
    hi = kDegenerateRange;
  }
  QuantParams q;
  q.scale = (hi - lo) / double(kQMax - kQMin);
  const double zp = round_half_even(double(kQMin) - lo / q.scale);
  q.zero_point = static_cast<std::int32_t>(std::clamp(zp, double(kQMin), double(kQMax)));
  return q;
}

/// Symmetric parameters for a weight tensor with max |w| = `max_abs`.
inline QuantParams weight_qparams(double max_abs) {
  if (!(max_abs > 0)) max_abs = kDegenerateRange;
  QuantParams q;
  q.scale = max_abs / double(kWeightQMax);
  q.zero_point = 0;
  q.qmin = -kWeightQMax;
  q.qmax = kWeightQMax;
  return q;
}

template <typename T>
QuantParams weight_qparams(const BasicTensor<T>& w) {
  double m = 0;
  for (const T v : w.values()) m = std::max(m, std::abs(double(v)));
  return weight_qparams(m);
}

inline std::int32_t quantize_value(double x, const QuantParams& q) {
  const double v = round_half_even(x / q.scale) + q.zero_point;
  return static_cast<std::int32_t>(std::clamp(v, double(q.qmin), double(q.qmax)));
}

inline double dequantize_value(std::int32_t code, const QuantParams& q) {
  return double(code - q.zero_point) * q.scale;
}

/// x' = (clamp(round(x/s) + z) - z) * s.
template <typename T>
T fake_quant(T x, const QuantParams& q) {
  return T(dequantize_value(quantize_value(double(x), q), q));
}

/// Real interval representable without clamping; the straight-through
/// estimator passes gradients only inside it.
inline double representable_lo(const QuantParams& q) {
  return (q.qmin - q.zero_point) * q.scale;
}
inline double representable_hi(const QuantParams& q) {
  return (q.qmax - q.zero_point) * q.scale;
}

/// Fake-quantizes in place; optionally records the STE pass-through mask.
template <typename T>
void fake_quant_inplace(BasicTensor<T>& x, const QuantParams& q,
                        std::vector<std::uint8_t>* mask = nullptr) {
  const double lo = representable_lo(q) - q.scale / 2;
  const double hi = representable_hi(q) + q.scale / 2;
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask) (*mask)[i] = double(x[i]) >= lo && double(x[i]) <= hi;
    x[i] = fake_quant(x[i], q);
  }
}

/// EMA min/max observer (momentum 0.99); the first observation initializes.
struct RangeObserver {
  double lo = 0;
  double hi = 0;
  bool initialized = false;
  double momentum = 0.99;

  void observe(double batch_lo, double batch_hi) {
    if (!initialized) {
      lo = batch_lo;
      hi = batch_hi;
      initialized = true;
      return;
    }
    lo = momentum * lo + (1 - momentum) * batch_lo;
    hi = momentum * hi + (1 - momentum) * batch_hi;
  }

  QuantParams params() const { return activation_qparams(lo, hi); }

  bool operator==(const RangeObserver&) const = default;
};

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Hardware-independent cost proxies computed from the architecture alone.
//
// Conventions:
//   params  conv Cout*(9*Cin+1), BN 2*C, FC In*Out+Out, LSTM 4*(H*(In+H)+H),
//           TCN Cout*(3*Cin+1); majority voting counts its CNN once.
//   MACs    conv outH*outW*Cout*9*Cin, FC In*Out, LSTM 4*H*(In+H) per step,
//           TCN W*Cout*3*Cin; per-frame extractors repeat W times, majority
//           voting repeats the whole CNN W times. BN, pooling, activations
//           and LSTM elementwise gate math are free.
//   size    float: 4 bytes per parameter after BN folding.
//           int8: 1 byte per weight, 4 per int32 bias, plus an 8-byte
//           scale/zero-point record per quantized weight tensor.
#pragma once

#include <cstdint>
#include <string>

#include "ircount/arch.hpp"

namespace ircount {

enum class Precision { kFloat, kInt8 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view s);

struct CostReport {
  std::int64_t params = 0;         // trainable parameters, BN included
  std::int64_t params_folded = 0;  // after BN folding
  std::int64_t macs = 0;
  std::int64_t size_float = 0;
  std::int64_t size_int8 = 0;      // 0 for families that cannot be quantized

  std::int64_t size_bytes(Precision p) const {
    return p == Precision::kFloat ? size_float : size_int8;
  }
};

std::int64_t count_params(const ModelSpec& spec);
std::int64_t count_params_folded(const ModelSpec& spec);
std::int64_t count_macs(const ModelSpec& spec);
/// Throws QuantUnsupported for int8 on the lstm family.
std::int64_t size_bytes(const ModelSpec& spec, Precision precision);
CostReport cost_report(const ModelSpec& spec);

/// Whether a family has an int8 deployment path.
bool quantizable(Family f);

}  // namespace ircount

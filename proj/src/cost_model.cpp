// SPDX-License-Identifier: Apache-2.0
#include "ircount/cost_model.hpp"

#include "ircount/error.hpp"

namespace ircount {

namespace {

struct Tally {
  std::int64_t weights = 0;  // multiplicative weights
  std::int64_t biases = 0;
  std::int64_t bn = 0;       // gamma + beta
  std::int64_t weight_tensors = 0;
  std::int64_t extractor_macs = 0;
  std::int64_t tail_macs = 0;  // everything after the extractor
};

Tally tally(const ModelSpec& spec) {
  validate(spec);
  Tally t;
  std::int64_t side = kFrameSize;
  std::int64_t cin = spec.input_channels();
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const std::int64_t cout = spec.conv_channels[i];
    side -= 2;
    t.weights += 9 * cin * cout;
    t.biases += cout;
    t.bn += 2 * cout;
    t.weight_tensors += 1;
    t.extractor_macs += side * side * cout * 9 * cin;
    if (i == 0 && spec.pool) side /= 2;
    cin = cout;
  }
  const std::int64_t feat = spec.feature_size();
  const std::int64_t w = spec.window;
  if (spec.family == Family::kLstm) {
    const std::int64_t h = spec.temporal_units;
    t.weights += 4 * h * (feat + h);
    t.biases += 4 * h;
    t.weight_tensors += 2;
    t.tail_macs += w * 4 * h * (feat + h);
  } else if (spec.family == Family::kTcn) {
    const std::int64_t c = spec.temporal_units;
    t.weights += 3 * feat * c;
    t.biases += c;
    t.weight_tensors += 1;
    t.tail_macs += w * c * 3 * feat;
  }
  std::int64_t in = spec.head_input_size();
  auto dense = [&](std::int64_t out) {
    t.weights += in * out;
    t.biases += out;
    t.weight_tensors += 1;
    t.tail_macs += in * out;
    in = out;
  };
  for (int h : spec.hidden_fc) dense(h);
  dense(spec.classes);
  return t;
}

}  // namespace

std::string_view precision_name(Precision p) {
  return p == Precision::kFloat ? "float" : "int8";
}

Precision parse_precision(std::string_view s) {
  if (s == "float") return Precision::kFloat;
  if (s == "int8") return Precision::kInt8;
  throw Error("unknown precision '" + std::string(s) + "'");
}

bool quantizable(Family f) { return f != Family::kLstm; }

std::int64_t count_params(const ModelSpec& spec) {
  const Tally t = tally(spec);
  return t.weights + t.biases + t.bn;
}

std::int64_t count_params_folded(const ModelSpec& spec) {
  const Tally t = tally(spec);
  return t.weights + t.biases;
}

std::int64_t count_macs(const ModelSpec& spec) {
  const Tally t = tally(spec);
  switch (spec.family) {
    case Family::kMajorityVoting:
      return spec.window * (t.extractor_macs + t.tail_macs);
    case Family::kConcat:
    case Family::kLstm:
    case Family::kTcn:
      return spec.window * t.extractor_macs + t.tail_macs;
    default:
      return t.extractor_macs + t.tail_macs;
  }
}

std::int64_t size_bytes(const ModelSpec& spec, Precision precision) {
  const Tally t = tally(spec);
  if (precision == Precision::kFloat) return 4 * (t.weights + t.biases);
  if (!quantizable(spec.family))
    throw QuantUnsupported("int8 quantization of LSTM cells is not supported: " + spec.str());
  return t.weights + 4 * t.biases + 8 * t.weight_tensors;
}

CostReport cost_report(const ModelSpec& spec) {
  CostReport r;
  r.params = count_params(spec);
  r.params_folded = count_params_folded(spec);
  r.macs = count_macs(spec);
  r.size_float = size_bytes(spec, Precision::kFloat);
  r.size_int8 = quantizable(spec.family) ? size_bytes(spec, Precision::kInt8) : 0;
  return r;
}

}  // namespace ircount

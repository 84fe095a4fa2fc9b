// SPDX-License-Identifier: Apache-2.0
#include "ircount/quantizer.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <limits>
#include <numeric>

#include "ircount/cost_model.hpp"
#include "ircount/error.hpp"
#include "ircount/rng.hpp"

namespace ircount {

template <typename T>
Model<T> fold_batchnorm(const Model<T>& model) {
  Model<T> out = model;
  for (auto& b : out.params().blocks) {
    if (!b.bn) continue;
    const auto f = nn::batchnorm_fold(*b.bn);
    const std::size_t cout = b.conv.out_channels();
    for (std::size_t i = 0; i < b.conv.kernel.size(); ++i) b.conv.kernel[i] *= f.scale[i % cout];
    for (std::size_t oc = 0; oc < cout; ++oc)
      b.conv.bias[oc] = b.conv.bias[oc] * f.scale[oc] + f.shift[oc];
    b.bn.reset();
  }
  return out;
}

template Model<float> fold_batchnorm(const Model<float>&);
template Model<double> fold_batchnorm(const Model<double>&);

Model<float> calibrate(const Model<float>& model, std::span<const Window<float>> units,
                       std::size_t batch_size, std::uint64_t seed) {
  if (units.empty()) throw Error("empty calibration set");
  if (!quantizable(model.spec().family))
    throw QuantUnsupported("int8 quantization of LSTM cells is not supported: " +
                           model.spec().str());
  Model<float> m = model.bn_folded() ? model : fold_batchnorm(model);
  m.quant() = QuantState{};
  m.quant().enabled = true;
  batch_size = std::max<std::size_t>(batch_size, 1);
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng(derive_seed(seed, "calibration")).shuffle(order);
  std::vector<Window<float>> batch;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    batch.clear();
    for (std::size_t i = s; i < std::min(order.size(), s + batch_size); ++i)
      batch.push_back(units[order[i]]);
    m.observe(batch);
  }
  return m;
}

Requant quantize_multiplier(double m) {
  if (!(m > 0) || !std::isfinite(m)) throw Error("requantization multiplier must be positive");
  int e = 0;
  const double f = std::frexp(m, &e);  // m = f * 2^e, f in [0.5, 1)
  std::int64_t q = static_cast<std::int64_t>(round_half_even(std::ldexp(f, 31)));
  if (q == (std::int64_t(1) << 31)) {
    q >>= 1;
    ++e;
  }
  const int shift = 31 - e;
  if (shift < -31) throw Error("requantization multiplier too large");
  return {static_cast<std::int32_t>(q), std::min(shift, 63)};
}

std::int32_t apply_requant(std::int64_t acc, const Requant& r) {
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  acc = std::clamp(acc, lo, hi);
  const std::int64_t p = acc * std::int64_t(r.mult);  // |p| < 2^62
  std::int64_t v;
  if (r.shift >= 63) {
    v = 0;
  } else if (r.shift > 0) {
    const std::int64_t q = p >> r.shift;  // floor
    const std::int64_t rem = p - (q << r.shift);
    const std::int64_t half = std::int64_t(1) << (r.shift - 1);
    v = q + ((rem > half || (rem == half && (q & 1))) ? 1 : 0);
  } else if (r.shift == 0) {
    v = p;
  } else {
    const int s = -r.shift;
    const std::int64_t limit = hi >> s;
    v = p > limit ? hi : p < -limit ? lo : p * (std::int64_t(1) << s);
  }
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

std::int64_t QuantModel::size_bytes() const {
  std::int64_t n = 0;
  auto add = [&](const QLayer& l) {
    n += std::int64_t(l.weight.size()) + 4 * std::int64_t(l.bias.size()) + 8;
  };
  for (const auto& l : conv) add(l);
  if (tcn) add(*tcn);
  for (const auto& l : dense) add(l);
  return n;
}

namespace {

template <typename Tensor>
QLayer make_layer(QLayerKind kind, const Tensor& weight, const Tensor& bias, const QuantParams& in,
                  const QuantParams& out, bool relu) {
  QLayer l;
  l.kind = kind;
  l.weight_shape = weight.shape();
  l.w = weight_qparams(weight);
  l.in = in;
  l.out = out;
  l.relu = relu;
  l.weight.reserve(weight.size());
  for (const float v : weight.values()) l.weight.push_back(std::int8_t(quantize_value(v, l.w)));
  const double bias_scale = in.scale * l.w.scale;
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  for (const float b : bias.values())
    l.bias.push_back(std::int32_t(std::clamp(round_half_even(double(b) / bias_scale), lo, hi)));
  l.requant = quantize_multiplier(in.scale * l.w.scale / out.scale);
  return l;
}

void require_observed(const RangeObserver& o, const char* what) {
  if (!o.initialized) throw Error(std::string("model is not calibrated (") + what + ")");
}

}  // namespace

QuantModel export_int8(const Model<float>& model) {
  const ModelSpec& spec = model.spec();
  if (!quantizable(spec.family))
    throw QuantUnsupported("int8 export of LSTM cells is not supported: " + spec.str());
  if (!model.bn_folded()) throw Error("int8 export requires folded batch norm");
  const QuantState& qs = model.quant();
  const auto& p = model.params();
  require_observed(qs.input, "input");
  if (qs.blocks.size() != p.blocks.size() || qs.dense.size() != p.dense.size())
    throw Error("model is not calibrated (observer count)");
  for (const auto& o : qs.blocks) require_observed(o, "conv");
  for (const auto& o : qs.dense) require_observed(o, "dense");
  if (p.tcn) require_observed(qs.temporal, "tcn");

  QuantModel qm;
  qm.spec = spec;
  qm.input = qs.input.params();
  QuantParams cur = qm.input;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const QuantParams out = qs.blocks[b].params();
    qm.conv.push_back(make_layer(QLayerKind::kConv2d, p.blocks[b].conv.kernel,
                                 p.blocks[b].conv.bias, cur, out, true));
    cur = out;
  }
  if (p.tcn) {
    const QuantParams out = qs.temporal.params();
    qm.tcn = make_layer(QLayerKind::kConv1d, p.tcn->kernel, p.tcn->bias, cur, out, true);
    cur = out;
  }
  for (std::size_t d = 0; d < p.dense.size(); ++d) {
    const QuantParams out = qs.dense[d].params();
    qm.dense.push_back(make_layer(QLayerKind::kDense, p.dense[d].weight, p.dense[d].bias, cur, out,
                                  d + 1 < p.dense.size()));
    cur = out;
  }
  return qm;
}

IntWindow quantize_window(const Window<float>& window, const QuantParams& q) {
  IntWindow w;
  w.reserve(window.size());
  for (const auto& f : window) {
    std::vector<std::int8_t> codes;
    codes.reserve(f.size());
    for (const float v : f.values()) codes.push_back(std::int8_t(quantize_value(v, q)));
    w.push_back(std::move(codes));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Integer path
// ---------------------------------------------------------------------------

namespace {

using Codes = std::vector<std::int8_t>;

std::int8_t finish(std::int64_t acc, const QLayer& l) {
  const std::int64_t v = std::int64_t(apply_requant(acc, l.requant)) + l.out.zero_point;
  const std::int64_t lo = l.relu ? std::max<std::int64_t>(l.out.zero_point, l.out.qmin) : l.out.qmin;
  return std::int8_t(std::clamp<std::int64_t>(v, lo, l.out.qmax));
}

Codes conv2d_int(const Codes& in, std::size_t h, std::size_t w, const QLayer& l) {
  const std::size_t cin = l.weight_shape[1], cout = l.weight_shape[2];
  const std::size_t ho = h - 2, wo = w - 2;
  const std::int32_t zp = l.in.zero_point;
  Codes out(ho * wo * cout);
  std::vector<std::int64_t> acc(cout);
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] = l.bias[oc];
      for (std::size_t t = 0; t < 9; ++t) {
        const std::size_t base = ((i + t / 3) * w + (j + t % 3)) * cin;
        for (std::size_t c = 0; c < cin; ++c) {
          const std::int32_t x = std::int32_t(in[base + c]) - zp;
          const std::int8_t* k = &l.weight[(t * cin + c) * cout];
          for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] += x * std::int32_t(k[oc]);
        }
      }
      for (std::size_t oc = 0; oc < cout; ++oc) out[(i * wo + j) * cout + oc] = finish(acc[oc], l);
    }
  return out;
}

Codes maxpool_int(const Codes& in, std::size_t h, std::size_t w, std::size_t c) {
  Codes out((h / 2) * (w / 2) * c);
  for (std::size_t i = 0; i < h / 2; ++i)
    for (std::size_t j = 0; j < w / 2; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        std::int8_t m = in[((2 * i) * w + 2 * j) * c + k];
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj)
            m = std::max(m, in[((2 * i + di) * w + 2 * j + dj) * c + k]);
        out[(i * (w / 2) + j) * c + k] = m;
      }
  return out;
}

Codes conv1d_int(const Codes& in, std::size_t steps, const QLayer& l) {
  const std::size_t cin = l.weight_shape[1], cout = l.weight_shape[2];
  const std::int32_t zp = l.in.zero_point;
  Codes out(steps * cout);
  std::vector<std::int64_t> acc(cout);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] = l.bias[oc];
    for (std::size_t tap = 0; tap < 3; ++tap) {
      if (t + tap < 2) continue;  // zero padding contributes nothing
      const std::size_t src = t + tap - 2;
      for (std::size_t c = 0; c < cin; ++c) {
        const std::int32_t x = std::int32_t(in[src * cin + c]) - zp;
        const std::int8_t* k = &l.weight[(tap * cin + c) * cout];
        for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] += x * std::int32_t(k[oc]);
      }
    }
    for (std::size_t oc = 0; oc < cout; ++oc) out[t * cout + oc] = finish(acc[oc], l);
  }
  return out;
}

Codes dense_int(const Codes& in, const QLayer& l) {
  const std::size_t n_in = l.weight_shape[0], n_out = l.weight_shape[1];
  if (in.size() != n_in) throw ShapeError("int dense input size mismatch");
  std::vector<std::int64_t> acc(l.bias.begin(), l.bias.end());
  for (std::size_t i = 0; i < n_in; ++i) {
    const std::int32_t x = std::int32_t(in[i]) - l.in.zero_point;
    const std::int8_t* wr = &l.weight[i * n_out];
    for (std::size_t o = 0; o < n_out; ++o) acc[o] += x * std::int32_t(wr[o]);
  }
  Codes out(n_out);
  for (std::size_t o = 0; o < n_out; ++o) out[o] = finish(acc[o], l);
  return out;
}

/// Runs the extractor on one image; returns the flattened feature codes.
Codes extract_int(const QuantModel& qm, Codes x, std::size_t channels, IntTrace* trace) {
  std::size_t side = kFrameSize;
  for (std::size_t b = 0; b < qm.conv.size(); ++b) {
    const auto& l = qm.conv[b];
    if (l.weight_shape[1] != channels) throw ShapeError("int conv channel mismatch");
    x = conv2d_int(x, side, side, l);
    side -= 2;
    channels = l.weight_shape[2];
    if (trace) trace->blocks[b].push_back(x);
    if (b == 0 && qm.spec.pool) {
      x = maxpool_int(x, side, side, channels);
      side /= 2;
      if (trace) trace->pooled.push_back(x);
    }
  }
  return x;
}

void check_window(const QuantModel& qm, const IntWindow& window) {
  if (window.size() != std::size_t(qm.spec.window))
    throw ShapeError("window has " + std::to_string(window.size()) + " frames, model expects W=" +
                     std::to_string(qm.spec.window));
  for (const auto& f : window)
    if (f.size() != std::size_t(kPixels)) throw ShapeError("int frames must have 64 codes");
}

/// Head input for one unit (everything except majority voting).
Codes unit_features_int(const QuantModel& qm, const IntWindow& window, IntTrace* trace) {
  const std::size_t w = window.size();
  switch (qm.spec.family) {
    case Family::kSingleFrame:
      return extract_int(qm, window.back(), 1, trace);
    case Family::kMultiChannel: {
      Codes stacked(std::size_t(kPixels) * w);
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t p = 0; p < std::size_t(kPixels); ++p) stacked[p * w + k] = window[k][p];
      return extract_int(qm, std::move(stacked), w, trace);
    }
    case Family::kConcat:
    case Family::kTcn: {
      Codes seq;
      for (const auto& f : window) {
        const Codes feat = extract_int(qm, f, 1, trace);
        seq.insert(seq.end(), feat.begin(), feat.end());
      }
      if (qm.spec.family == Family::kConcat) return seq;
      Codes out = conv1d_int(seq, w, *qm.tcn);
      if (trace) trace->temporal = out;
      return out;
    }
    default:
      throw QuantUnsupported("no integer path for family " + std::string(family_name(qm.spec.family)));
  }
}

Codes head_int(const QuantModel& qm, Codes h, IntTrace* trace) {
  for (const auto& l : qm.dense) {
    h = dense_int(h, l);
    if (trace) trace->dense.push_back(h);
  }
  return h;
}

int argmax_first(const std::vector<std::int32_t>& v) {
  return int(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

IntPrediction int_forward(const QuantModel& qm, const IntWindow& window, IntTrace* trace) {
  check_window(qm, window);
  if (trace) {
    *trace = IntTrace{};
    trace->blocks.resize(qm.conv.size());
  }
  IntPrediction pred;
  if (qm.spec.family == Family::kMajorityVoting) {
    const std::size_t k = std::size_t(qm.spec.classes);
    std::vector<int> count(k, 0);
    pred.logits.assign(k, 0);
    for (std::size_t f = 0; f < window.size(); ++f) {
      IntTrace* t = f + 1 == window.size() ? trace : nullptr;
      const Codes feat = extract_int(qm, window[f], 1, t);
      const Codes logits = head_int(qm, feat, t);
      const std::vector<std::int32_t> l(logits.begin(), logits.end());
      const int v = argmax_first(l);
      pred.votes.push_back(v);
      ++count[std::size_t(v)];
      for (std::size_t c = 0; c < k; ++c) pred.logits[c] += l[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (count[c] > count[best] || (count[c] == count[best] && pred.logits[c] > pred.logits[best]))
        best = c;
    pred.count = int(best);
    return pred;
  }
  const Codes logits = head_int(qm, unit_features_int(qm, window, trace), trace);
  pred.logits.assign(logits.begin(), logits.end());
  pred.count = argmax_first(pred.logits);
  return pred;
}

// ---------------------------------------------------------------------------
// Reference simulation
// ---------------------------------------------------------------------------

namespace {

struct RefImage {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<long> v;  // codes
  long& at(std::size_t i, std::size_t j, std::size_t k) { return v[(i * w + j) * c + k]; }
  long at(std::size_t i, std::size_t j, std::size_t k) const { return v[(i * w + j) * c + k]; }
};

long ref_requant(long long acc, const QLayer& l) {
  const long double lim_lo = std::numeric_limits<std::int32_t>::min();
  const long double lim_hi = std::numeric_limits<std::int32_t>::max();
  long double a = std::clamp<long double>(static_cast<long double>(acc), lim_lo, lim_hi);
  // Exact: |a * mult| < 2^62 fits the 64-bit significand.
  long double scaled = std::ldexp(a * static_cast<long double>(l.requant.mult), -l.requant.shift);
  scaled = std::clamp(std::nearbyint(scaled), lim_lo, lim_hi);
  long double v = scaled + l.out.zero_point;
  const long double lo = l.relu ? std::max(l.out.zero_point, l.out.qmin) : l.out.qmin;
  return static_cast<long>(std::clamp<long double>(v, lo, l.out.qmax));
}

long wcode(const QLayer& l, std::size_t a, std::size_t b, std::size_t c) {
  return l.weight[(a * l.weight_shape[1] + b) * l.weight_shape[2] + c];
}

RefImage ref_conv(const RefImage& x, const QLayer& l) {
  RefImage y{x.h - 2, x.w - 2, l.weight_shape[2], {}};
  y.v.assign(y.h * y.w * y.c, 0);
  for (std::size_t oc = 0; oc < y.c; ++oc)
    for (std::size_t i = 0; i < y.h; ++i)
      for (std::size_t j = 0; j < y.w; ++j) {
        long long acc = l.bias[oc];
        for (std::size_t di = 0; di < 3; ++di)
          for (std::size_t dj = 0; dj < 3; ++dj)
            for (std::size_t c = 0; c < x.c; ++c)
              acc += (long long)(x.at(i + di, j + dj, c) - l.in.zero_point) *
                     wcode(l, di * 3 + dj, c, oc);
        y.at(i, j, oc) = ref_requant(acc, l);
      }
  return y;
}

RefImage ref_pool(const RefImage& x) {
  RefImage y{x.h / 2, x.w / 2, x.c, {}};
  y.v.assign(y.h * y.w * y.c, 0);
  for (std::size_t k = 0; k < x.c; ++k)
    for (std::size_t i = 0; i < y.h; ++i)
      for (std::size_t j = 0; j < y.w; ++j)
        y.at(i, j, k) = std::max({x.at(2 * i, 2 * j, k), x.at(2 * i, 2 * j + 1, k),
                                  x.at(2 * i + 1, 2 * j, k), x.at(2 * i + 1, 2 * j + 1, k)});
  return y;
}

std::vector<long> ref_dense(const std::vector<long>& x, const QLayer& l) {
  std::vector<long> y(l.weight_shape[1]);
  for (std::size_t o = 0; o < y.size(); ++o) {
    long long acc = l.bias[o];
    for (std::size_t i = 0; i < x.size(); ++i) acc += (long long)(x[i] - l.in.zero_point) * long(l.weight[i * l.weight_shape[1] + o]);
    y[o] = ref_requant(acc, l);
  }
  return y;
}

Codes to_codes(const std::vector<long>& v) { return Codes(v.begin(), v.end()); }

std::vector<long> ref_extract(const QuantModel& qm, RefImage x, IntTrace& trace) {
  for (std::size_t b = 0; b < qm.conv.size(); ++b) {
    x = ref_conv(x, qm.conv[b]);
    trace.blocks[b].push_back(to_codes(x.v));
    if (b == 0 && qm.spec.pool) {
      x = ref_pool(x);
      trace.pooled.push_back(to_codes(x.v));
    }
  }
  return x.v;
}

RefImage ref_frame(const std::vector<std::int8_t>& f) {
  RefImage x{kFrameSize, kFrameSize, 1, {}};
  x.v.assign(f.begin(), f.end());
  return x;
}

}  // namespace

IntTrace reference_forward(const QuantModel& qm, const IntWindow& window) {
  check_window(qm, window);
  IntTrace trace;
  trace.blocks.resize(qm.conv.size());
  const std::size_t w = window.size();
  std::vector<long> h;
  switch (qm.spec.family) {
    case Family::kSingleFrame:
    case Family::kMajorityVoting:
      h = ref_extract(qm, ref_frame(window.back()), trace);
      break;
    case Family::kMultiChannel: {
      RefImage x{kFrameSize, kFrameSize, w, {}};
      x.v.assign(std::size_t(kPixels) * w, 0);
      for (std::size_t i = 0; i < std::size_t(kFrameSize); ++i)
        for (std::size_t j = 0; j < std::size_t(kFrameSize); ++j)
          for (std::size_t k = 0; k < w; ++k) x.at(i, j, k) = window[k][i * kFrameSize + j];
      h = ref_extract(qm, x, trace);
      break;
    }
    case Family::kConcat:
    case Family::kTcn: {
      std::vector<std::vector<long>> steps;
      for (const auto& f : window) steps.push_back(ref_extract(qm, ref_frame(f), trace));
      if (qm.spec.family == Family::kConcat) {
        for (const auto& s : steps) h.insert(h.end(), s.begin(), s.end());
        break;
      }
      const QLayer& l = *qm.tcn;
      const std::size_t cout = l.weight_shape[2];
      for (std::size_t t = 0; t < w; ++t)
        for (std::size_t oc = 0; oc < cout; ++oc) {
          long long acc = l.bias[oc];
          for (std::size_t back = 0; back < 3 && back <= t; ++back) {
            const auto& x = steps[t - back];
            for (std::size_t c = 0; c < x.size(); ++c)
              acc += (long long)(x[c] - l.in.zero_point) * wcode(l, 2 - back, c, oc);
          }
          h.push_back(ref_requant(acc, l));
        }
      trace.temporal = to_codes(h);
      break;
    }
    default:
      throw QuantUnsupported("no integer path for family " + std::string(family_name(qm.spec.family)));
  }
  for (const auto& l : qm.dense) {
    h = ref_dense(h, l);
    trace.dense.push_back(to_codes(h));
  }
  return trace;
}

}  // namespace ircount

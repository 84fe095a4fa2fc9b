// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ircount/cost_model.hpp"
#include "ircount/quantizer.hpp"
#include "ircount/rng.hpp"
#include "random_models.hpp"

using namespace ircount;
using namespace ircount::testing;

namespace {

// Round-half-even of p / 2^shift in 128-bit integers.
std::int64_t oracle_requant(std::int64_t acc, const Requant& r) {
  acc = std::clamp<std::int64_t>(acc, INT32_MIN, INT32_MAX);
  const __int128 p = (__int128)acc * r.mult;
  if (r.shift <= 0) {
    const __int128 v = p * ((__int128)1 << -r.shift);
    return (std::int64_t)std::clamp<__int128>(v, INT32_MIN, INT32_MAX);
  }
  const __int128 d = (__int128)1 << r.shift;
  __int128 q = p / d, rem = p % d;
  if (rem < 0) q -= 1, rem += d;  // floor division
  if (2 * rem > d || (2 * rem == d && (q & 1))) q += 1;
  return (std::int64_t)std::clamp<__int128>(q, INT32_MIN, INT32_MAX);
}

}  // namespace

TEST_CASE("quantize_multiplier normalizes into [2^30, 2^31)") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double m = std::exp(rng.uniform(std::log(1e-7), std::log(50.0)));
    const Requant r = quantize_multiplier(m);
    CHECK(r.mult >= (1 << 30));
    CHECK(std::int64_t(r.mult) < (std::int64_t(1) << 31));
    CHECK(std::abs(std::ldexp(double(r.mult), -r.shift) - m) <= std::ldexp(0.5, -r.shift) * (1 + 1e-12));
  }
  CHECK_THROWS_AS(quantize_multiplier(0.0), Error);
  CHECK_THROWS_AS(quantize_multiplier(-1.0), Error);
}

TEST_CASE("apply_requant matches a 128-bit round-half-even oracle") {
  Rng rng(2);
  for (int i = 0; i < 20000; ++i) {
    const double m = std::exp(rng.uniform(std::log(1e-6), std::log(4.0)));
    const Requant r = quantize_multiplier(m);
    const std::int64_t acc = std::int64_t(rng.below(1u << 26)) - (1 << 25);
    REQUIRE(apply_requant(acc, r) == oracle_requant(acc, r));
  }
  // Exact halves round to even.
  const Requant half{1 << 30, 31};  // multiply by 1/2
  CHECK(apply_requant(1, half) == 0);
  CHECK(apply_requant(3, half) == 2);
  CHECK(apply_requant(5, half) == 2);
  CHECK(apply_requant(-1, half) == 0);
  CHECK(apply_requant(-3, half) == -2);
}

TEST_CASE("fake quantization is idempotent and within half a step") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double lo = -rng.uniform(0, 5), hi = rng.uniform(0.01, 8);
    const QuantParams q = activation_qparams(lo, hi);
    CHECK(q.zero_point >= q.qmin);
    CHECK(q.zero_point <= q.qmax);
    CHECK(fake_quant(0.0, q) == 0.0);  // zero is exactly representable
    for (int k = 0; k < 50; ++k) {
      const double x = rng.uniform(representable_lo(q), representable_hi(q));
      const double y = fake_quant(x, q);
      CHECK(fake_quant(y, q) == y);
      CHECK(std::abs(y - x) <= q.scale / 2 * (1 + 1e-9));
    }
  }
  const QuantParams w = weight_qparams(0.5);
  CHECK(w.zero_point == 0);
  CHECK(w.qmin == -127);
  CHECK(w.qmax == 127);
  CHECK(quantize_value(0.5, w) == 127);
  CHECK(quantize_value(-0.5, w) == -127);
}

TEST_CASE("batchnorm folding preserves inference outputs") {
  Rng rng(4);
  for (int i = 0; i < 30; ++i) {
    Model<float> m = random_model(rng, false);
    randomize_bn(m, rng);
    const Model<float> f = fold_batchnorm(m);
    CHECK(f.bn_folded());
    CHECK(count_params_folded(m.spec()) == std::int64_t(f.params().trainable_count()));
    const auto units = random_units(m, rng, 4);
    const auto a = m.unit_logits(units), b = f.unit_logits(units);
    for (std::size_t u = 0; u < a.size(); ++u)
      for (std::size_t k = 0; k < a[u].size(); ++k)
        CHECK(std::abs(a[u][k] - b[u][k]) <= 1e-4 * (1 + std::abs(a[u][k])));
  }
}

TEST_CASE("integer forward equals the fixed-point reference on 100 random models") {
  Rng rng(5);
  int windows = 0;
  for (int i = 0; i < 100; ++i) {
    Model<float> m = random_model(rng, true);
    CAPTURE(m.spec().str());
    randomize_bn(m, rng);
    const auto calib = random_units(m, rng, 64);
    const Model<float> c = calibrate(m, calib, 16, std::uint64_t(i));
    const QuantModel qm = export_int8(c);
    CHECK(qm.size_bytes() == size_bytes(m.spec(), Precision::kInt8));
    for (int k = 0; k < 5; ++k) {
      const Window<float> w = random_window(m.spec().window, rng);
      const IntWindow iw = quantize_window(w, qm.input);
      IntTrace t1;
      const IntPrediction p = int_forward(qm, iw, &t1);
      const IntTrace t2 = reference_forward(qm, iw);
      REQUIRE(t1.blocks == t2.blocks);
      REQUIRE(t1.pooled == t2.pooled);
      REQUIRE(t1.temporal == t2.temporal);
      REQUIRE(t1.dense == t2.dense);
      CHECK(p.count >= 0);
      CHECK(p.count < m.spec().classes);
      ++windows;
    }
  }
  MESSAGE("bit-exact on " << windows << " windows");
}

TEST_CASE("integer logits track the fake-quant float model") {
  Rng rng(6);
  int within = 0, total = 0;
  for (int i = 0; i < 40; ++i) {
    Model<float> m = random_model(rng, true);
    if (m.spec().family == Family::kMajorityVoting) continue;
    randomize_bn(m, rng);
    const Model<float> c = calibrate(m, random_units(m, rng, 64), 16, std::uint64_t(i));
    const QuantModel qm = export_int8(c);
    const QuantParams& out = qm.dense.back().out;
    for (int k = 0; k < 5; ++k) {
      const Window<float> w = random_window(m.spec().window, rng);
      const auto fq = c.unit_logits(std::span<const Window<float>>(&w, 1)).front();
      const IntPrediction p = int_forward(qm, quantize_window(w, qm.input));
      for (std::size_t j = 0; j < fq.size(); ++j) {
        const double code = double(fq[j]) / out.scale + out.zero_point;
        within += std::abs(code - p.logits[j]) <= 1.0 + 1e-6;
        ++total;
      }
    }
  }
  MESSAGE(within << " of " << total << " logits within one code");
  CHECK(double(within) / total >= 0.95);
}

TEST_CASE("lstm models cannot be quantized") {
  Model<float> m = build_model(parse_arch("lstm:w3:C4-P-C4-L4-FC"), 1);
  Rng rng(7);
  CHECK_THROWS_AS(calibrate(m, random_units(m, rng, 4)), QuantUnsupported);
  CHECK_THROWS_AS(export_int8(fold_batchnorm(m)), QuantUnsupported);
  CHECK_THROWS_AS(size_bytes(m.spec(), Precision::kInt8), QuantUnsupported);
}

TEST_CASE("export requires calibration") {
  Model<float> m = fold_batchnorm(build_model(parse_arch("sf:w1:C4-P-FC"), 1));
  CHECK_THROWS(export_int8(m));
}

TEST_CASE("exported weights dequantize within half a step") {
  Rng rng(8);
  for (int i = 0; i < 30; ++i) {
    Model<float> m = random_model(rng, true);
    randomize_bn(m, rng);
    const Model<float> c = calibrate(m, random_units(m, rng, 16), 16, 1);
    const QuantModel qm = export_int8(c);
    REQUIRE(qm.dense.size() == c.params().dense.size());
    for (std::size_t l = 0; l < qm.dense.size(); ++l) {
      const auto& q = qm.dense[l];
      const auto& f = c.params().dense[l].weight;
      REQUIRE(q.weight.size() == f.size());
      for (std::size_t k = 0; k < f.size(); ++k)
        CHECK(std::abs(q.w.scale * q.weight[k] - f[k]) <= q.w.scale / 2 * (1 + 1e-6));
    }
    for (std::size_t l = 0; l < qm.conv.size(); ++l) {
      const auto& q = qm.conv[l];
      const auto& f = c.params().blocks[l].conv.kernel;
      for (std::size_t k = 0; k < f.size(); ++k)
        CHECK(std::abs(q.w.scale * q.weight[k] - f[k]) <= q.w.scale / 2 * (1 + 1e-6));
    }
  }
}

TEST_CASE("input at the zero point gives constant logits from the bias path") {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    Model<float> m = random_model(rng, true);
    randomize_bn(m, rng);
    const QuantModel qm = export_int8(calibrate(m, random_units(m, rng, 16), 16, 1));
    const IntWindow zp(std::size_t(m.spec().window),
                       std::vector<std::int8_t>(64, std::int8_t(qm.input.zero_point)));
    const IntPrediction a = int_forward(qm, zp), b = int_forward(qm, zp);
    CHECK(a.logits == b.logits);
    CHECK(a.count == b.count);
    const IntTrace t = reference_forward(qm, zp);
    // First conv layer: every output position equals requant(bias).
    const auto& first = t.blocks.front().back();
    const auto& l0 = qm.conv.front();
    const std::size_t cout = std::size_t(l0.weight_shape[2]);
    for (std::size_t p = 0; p < first.size(); ++p) CHECK(first[p] == first[p % cout]);
  }
}

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ircount/cost_model.hpp"
#include "ircount/network.hpp"
#include "ircount/rng.hpp"
#include "random_models.hpp"

using namespace ircount;

namespace {

// Independent cost oracle written against the layer formulas.
struct Oracle {
  std::int64_t params = 0, folded = 0, macs = 0, bias = 0, tensors = 0;
};

Oracle oracle(const ModelSpec& s) {
  Oracle o;
  const bool per_frame = s.family != Family::kMultiChannel && s.family != Family::kSingleFrame;
  std::int64_t side = 8, cin = s.family == Family::kMultiChannel ? s.window : 1;
  for (std::size_t i = 0; i < s.conv_channels.size(); ++i) {
    const std::int64_t c = s.conv_channels[i];
    side -= 2;
    o.params += c * (9 * cin + 1) + 2 * c;
    o.folded += c * (9 * cin + 1);
    o.macs += side * side * c * 9 * cin;
    o.bias += c, o.tensors += 1;
    if (i == 0 && s.pool) side /= 2;
    cin = c;
  }
  const std::int64_t feat = side * side * cin;
  const std::int64_t steps = s.window;
  if (per_frame && s.family != Family::kMajorityVoting) o.macs *= steps;
  std::int64_t head = feat;
  if (s.family == Family::kConcat) head = feat * steps;
  if (s.family == Family::kLstm) {
    const std::int64_t h = s.temporal_units;
    o.params += 4 * (h * (feat + h) + h);
    o.folded += 4 * (h * (feat + h) + h);
    o.macs += steps * 4 * h * (feat + h);
    head = h;
  }
  if (s.family == Family::kTcn) {
    const std::int64_t c = s.temporal_units;
    o.params += c * (3 * feat + 1);
    o.folded += c * (3 * feat + 1);
    o.macs += steps * c * 3 * feat;
    o.bias += c, o.tensors += 1;
    head = steps * c;
  }
  std::vector<std::int64_t> widths(s.hidden_fc.begin(), s.hidden_fc.end());
  widths.push_back(s.classes);
  for (std::int64_t w : widths) {
    o.params += head * w + w;
    o.folded += head * w + w;
    o.macs += head * w;
    o.bias += w, o.tensors += 1;
    head = w;
  }
  if (s.family == Family::kMajorityVoting) o.macs *= steps;
  return o;
}

bool rounds_to(double value, double stated, double unit) {
  return std::round(value / unit) == std::round(stated / unit);
}

}  // namespace

TEST_CASE("parse_arch examples") {
  const ModelSpec mc = parse_arch("mc:w3:C8-P-C16-FC");
  CHECK(mc.family == Family::kMultiChannel);
  CHECK(mc.window == 3);
  CHECK(mc.conv_channels == std::vector<int>{8, 16});
  CHECK(mc.pool);
  CHECK(mc.hidden_fc.empty());
  CHECK(mc.classes == 4);

  const ModelSpec l = parse_arch("lstm:w3:C8-P-C8-L16-FC");
  CHECK(l.family == Family::kLstm);
  CHECK(l.temporal_units == 16);

  CHECK(parse_arch("tcn:w5:C8-P-C8-TCN16-FC").str() == "tcn:w5:C8-P-C8-T16-FC");
  CHECK(parse_arch("cat:w3:C8-P-C8-Cat-FC32-FC").hidden_fc == std::vector<int>{32});

  for (const char* bad : {"sf:w3:C8-FC", "sf:w1:C8-C8-C8-FC", "mv:w4:C8-P-FC", "lstm:w3:C8-P-C8-FC",
                          "sf:w1:C8-L16-FC", "cat:w3:C8-P-FC", "sf:w1:FC", "sf:w1:C8-X-FC", "sf:w1:C8-FC8",
                          "sf:w1:C8-FC8-FC8-FC", "zz:w1:C8-FC", "sf:C8-FC", "sf:w1:C8-P-P-FC"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_arch(bad), ArchError);
  }
}

TEST_CASE("parsing round-trips to canonical form") {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const ModelSpec s = testing::random_spec(rng, false);
    CHECK(parse_arch(s.str()) == s);
    CHECK(parse_arch(s.str()).str() == s.str());
  }
}

TEST_CASE("cost anchors") {
  CHECK(count_params(parse_arch("sf:w1:C8-P-FC")) == 388);
  CHECK(count_params(parse_arch("lstm:w3:C8-P-C8-L16-FC")) == 2364);
  CHECK(count_params(parse_arch("mc:w3:C8-P-C16-FC")) == 1508);
  CHECK(count_params_folded(parse_arch("mc:w3:C8-P-C16-FC")) == 1460);
  CHECK(count_macs(parse_arch("sf:w1:C8-P-FC")) == 2880);
  CHECK(count_macs(parse_arch("lstm:w3:C8-P-C8-L16-FC")) == 14176);
  CHECK(count_macs(parse_arch("mv:w5:C8-P-C8-FC64-FC")) == 19680);
  const auto top_q = size_bytes(parse_arch("sf:w1:C8-P-C8-FC64-FC"), Precision::kInt8);
  CHECK(top_q >= 1532);
  CHECK(top_q <= 1800);
  CHECK(size_bytes(parse_arch("sf:w1:C8-P-FC"), Precision::kFloat) == 1488);
  CHECK_THROWS_AS(size_bytes(parse_arch("lstm:w3:C8-P-C8-L16-FC"), Precision::kInt8), QuantUnsupported);
}

TEST_CASE("reference cost endpoints at their stated precision") {
  // 2.9k and 2.38k carry enough digits for a 1% check.
  CHECK(std::abs(count_macs(parse_arch("sf:w1:C8-P-FC")) - 2900.0) / 2900 < 0.01);
  CHECK(std::abs(count_params(parse_arch("lstm:w3:C8-P-C8-L16-FC")) - 2380.0) / 2380 < 0.01);
  // 0.4k, 14k and 20k are one- or two-digit figures.
  CHECK(rounds_to(count_params(parse_arch("sf:w1:C8-P-FC")), 400, 100));
  CHECK(rounds_to(count_macs(parse_arch("lstm:w3:C8-P-C8-L16-FC")), 14000, 1000));
  CHECK(rounds_to(count_macs(parse_arch("mv:w5:C8-P-C8-FC64-FC")), 20000, 1000));
}

TEST_CASE("cost model matches an independent oracle") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const ModelSpec s = testing::random_spec(rng, false);
    CAPTURE(s.str());
    const Oracle o = oracle(s);
    const CostReport r = cost_report(s);
    CHECK(r.params == o.params);
    CHECK(r.params_folded == o.folded);
    CHECK(r.macs == o.macs);
    CHECK(r.size_float == 4 * o.folded);
    if (quantizable(s.family)) {
      // int8 weights, int32 biases, one scale and zero point per tensor.
      CHECK(r.size_int8 == (o.folded - o.bias) + 4 * o.bias + 8 * o.tensors);
    } else {
      CHECK(r.size_int8 == 0);
    }
    CHECK(std::int64_t(build_model(s, 1).params().trainable_count()) == r.params);
  }
}

TEST_CASE("majority voting cost identities") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    ModelSpec s = testing::random_spec(rng, false);
    s.family = Family::kSingleFrame, s.window = 1, s.temporal_units = 0;
    const ModelSpec sf = parse_arch(s.str());
    ModelSpec mv = sf;
    mv.family = Family::kMajorityVoting;
    mv.window = int(3 + 2 * rng.below(4));
    mv = parse_arch(mv.str());
    CHECK(count_params(mv) == count_params(sf));
    CHECK(count_macs(mv) == mv.window * count_macs(sf));
  }
}

TEST_CASE("widening channels or units never lowers params or MACs") {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const ModelSpec s = testing::random_spec(rng, false);
    ModelSpec w = s;
    const int which = int(rng.below(3));
    if (which == 0) {
      w.conv_channels[rng.below(w.conv_channels.size())] += int(1 + rng.below(8));
    } else if (which == 1 && w.temporal_units) {
      w.temporal_units += int(1 + rng.below(8));
    } else if (!w.hidden_fc.empty()) {
      w.hidden_fc[0] += int(1 + rng.below(8));
    } else {
      w.hidden_fc.push_back(64);
    }
    w = parse_arch(w.str());
    CAPTURE(s.str());
    CAPTURE(w.str());
    CHECK(count_params(w) >= count_params(s));
    CHECK(count_macs(w) >= count_macs(s));
  }
  // Inserting a second conv shrinks the head: params drop, MACs rise.
  CHECK(count_params(parse_arch("sf:w1:C8-C8-FC")) < count_params(parse_arch("sf:w1:C8-FC")));
  CHECK(count_macs(parse_arch("sf:w1:C8-C8-FC")) > count_macs(parse_arch("sf:w1:C8-FC")));
}

TEST_CASE("grid enumeration") {
  const auto sf = enumerate_family(Family::kSingleFrame);
  CHECK(sf.size() == 80);
  GridOptions pooled;
  pooled.two_conv_requires_pool = true;
  const auto sf48 = enumerate_family(Family::kSingleFrame, {}, pooled);
  CHECK(sf48.size() == 48);
  CHECK(enumerate_family(Family::kMultiChannel).size() == 320);
  std::set<std::string> names;
  for (const auto& s : sf) {
    CHECK_NOTHROW(validate(s));
    names.insert(s.str());
  }
  CHECK(names.size() == sf.size());
  CHECK(enumerate_family(Family::kSingleFrame) == sf);

  const std::vector<ModelSpec> ex{parse_arch("sf:w1:C8-P-FC"), parse_arch("sf:w1:C8-P-C8-FC64-FC"),
                                  parse_arch("sf:w1:C16-P-C8-FC")};
  CHECK(enumerate_family(Family::kLstm, ex).size() == 48);
  CHECK(enumerate_family(Family::kTcn, ex).size() == 48);
  CHECK(enumerate_family(Family::kConcat, ex).size() == 48);
  CHECK(enumerate_family(Family::kMajorityVoting, ex).size() == 12);
  for (Family f : {Family::kMajorityVoting, Family::kConcat, Family::kLstm, Family::kTcn}) {
    CHECK_THROWS(enumerate_family(f, {}));
    for (const auto& s : enumerate_family(f, ex)) CHECK_NOTHROW(validate(s));
  }
}

TEST_CASE("reference architecture strings parse") {
  for (const char* s : {"sf:w1:C8-P-C8-FC64-FC", "sf:w1:C8-P-FC", "sf:w1:C8-P-C8-FC", "mc:w3:C8-P-C16-FC",
                        "mv:w5:C8-P-C8-FC64-FC", "lstm:w3:C8-P-C8-L16-FC", "sf:w1:C8-P-C8-FC-FC"}) {
    CAPTURE(s);
    CHECK_NOTHROW(parse_arch(s));
  }
}

TEST_CASE("mc with one frame equals sf with the same layers") {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    ModelSpec s = testing::random_spec(rng, false);
    s.family = Family::kSingleFrame, s.window = 1, s.temporal_units = 0;
    const ModelSpec sf = parse_arch(s.str());
    ModelSpec mc = sf;
    mc.family = Family::kMultiChannel;
    mc = parse_arch(mc.str());
    const auto a = build_model(sf, 9), b = build_model(mc, 9);
    for (int k = 0; k < 5; ++k) {
      const auto w = testing::random_window(1, rng);
      CHECK(a.predict(w).probabilities == b.predict(w).probabilities);
    }
  }
}

TEST_CASE("mv prediction is invariant under frame permutation and inference is pure") {
  Rng rng(6);
  const auto m = build_model(parse_arch("mv:w5:C4-P-C4-FC"), 3);
  for (int i = 0; i < 30; ++i) {
    auto w = testing::random_window(5, rng);
    const Prediction p = m.predict(w);
    CHECK(m.predict(w).probabilities == p.probabilities);
    for (std::size_t k = w.size() - 1; k > 0; --k) std::swap(w[k], w[rng.below(k + 1)]);
    CHECK(m.predict(w).count == p.count);
  }
}

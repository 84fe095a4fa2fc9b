// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "baseline_fixtures.hpp"
#include "ircount/baseline.hpp"
#include "ircount/error.hpp"
#include "ircount/rng.hpp"
#include "ircount/synth.hpp"

using namespace ircount;
using namespace ircount::testing;

namespace {

Image blank(double v = 22.0) { return Image(15, 15, v); }

Image warm_frame(const std::vector<HotSpot>& spots, double ambient = 22.0) {
  return upsample_bilinear(from_frame(render_frame(ambient, spots)), 2);
}

}  // namespace

TEST_CASE("EMA smoothing closed form") {
  const BaselineConfig cfg;
  BaselineState st;
  const Image first = preprocess(Tensor(Shape{8, 8, 1}, 0.0f), st, cfg);
  CHECK(first.rows == 15);
  for (double v : first.v) CHECK(v == 0.0);
  for (int k = 1; k <= 12; ++k) {
    const Image x = preprocess(Tensor(Shape{8, 8, 1}, 1.0f), st, cfg);
    const double expect = 1 - std::pow(1 - cfg.alpha, k);
    for (double v : x.v) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  }
  BaselineState c;
  for (int k = 0; k < 60; ++k) preprocess(Tensor(Shape{8, 8, 1}, 3.5f), c, cfg);
  for (double v : c.smoothed->v) CHECK(v == doctest::Approx(3.5));
}

TEST_CASE("bilinear upsampling") {
  Image g(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) g.at(r, c) = 2.0 * r - 0.5 * c + 1;
  const Image u = upsample_bilinear(g, 2);
  REQUIRE(u.rows == 15);
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 15; ++c) CHECK(u.at(r, c) == doctest::Approx(2.0 * r / 2 - 0.5 * c / 2 + 1));
}

TEST_CASE("segmentation fixtures") {
  const BaselineConfig cfg;
  CHECK(segment(blank(), blank(), cfg).empty());
  const auto one = segment(warm_frame({{3.5, 3.5, 4.0, 1.5}}), blank(), cfg);
  CHECK(one.size() == 1);
  // sigma 1.5 frame pixels covers more than max_area interpolated pixels.
  CHECK(one[0].area > cfg.max_area);
  const auto person = segment(warm_frame({{3.5, 3.5, 4.0, 1.0}}), blank(), cfg);
  REQUIRE(person.size() == 1);
  CHECK(classify_and_count(person, cfg) == 1);
  const auto two = segment(warm_frame({{3.5, 0.5, 4.0, 0.8}, {3.5, 6.5, 4.0, 0.8}}), blank(), cfg);
  REQUIRE(two.size() == 2);
  CHECK(classify_and_count(two, cfg) == 2);
  CHECK(two[0].centroid_col < two[1].centroid_col);
  CHECK_THROWS(segment(blank(), Image(8, 8), cfg));

  // A room-wide warm region is far above max_area and is not a person.
  Image big = blank();
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 8; ++c) big.at(r, c) += 3.0;
  big.at(12, 13) += 3.0, big.at(12, 14) += 3.0, big.at(13, 13) += 3.0;
  const auto mixed = segment(big, blank(), cfg);
  REQUIRE(mixed.size() == 2);
  CHECK(classify_and_count(mixed, cfg) == 1);
  CHECK(classify_and_count({}, cfg) == 0);

  std::vector<Blob> many(6);
  for (auto& b : many) b.area = 5, b.peak_excess = 3;
  CHECK(classify_and_count(many, cfg) == 3);
}

TEST_CASE("labelling matches a flood-fill oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int rows = int(1 + rng.below(15)), cols = int(1 + rng.below(15));
    const double density = rng.uniform(0.1, 0.7);
    std::vector<std::uint8_t> mask(std::size_t(rows * cols));
    for (auto& m : mask) m = rng.uniform() < density;
    for (int conn : {4, 8}) REQUIRE(label_components(mask, rows, cols, conn) == flood_fill_labels(mask, rows, cols, conn));
  }
}

TEST_CASE("background model") {
  BaselineConfig cfg;
  Image bg = blank(0.0);
  const Image one = blank(1.0);
  for (int i = 0; i < 500; ++i) update_background(bg, one, {}, cfg.warmup, cfg);
  for (double v : bg.v) CHECK(std::abs(v - 1.0) < 0.01);

  Image b2 = blank(0.0);
  Blob blob;
  blob.pixels = {0, 16};
  blob.area = 2;
  update_background(b2, one, {blob}, cfg.warmup, cfg);
  CHECK(b2.v[0] == 0.0);
  CHECK(b2.v[16] == 0.0);
  CHECK(b2.v[1] == doctest::Approx(cfg.beta));

  // Warmup: running mean of every frame, blobs ignored.
  Rng rng(2);
  Image w = blank(rng.normal());
  double sum = w.v[7];
  for (int k = 1; k < cfg.warmup; ++k) {
    const Image f = blank(rng.normal());
    sum += f.v[7];
    update_background(w, f, {blob}, k, cfg);
    CHECK(w.v[7] == doctest::Approx(sum / (k + 1)).epsilon(1e-12));
    CHECK(w.v[0] == doctest::Approx(sum / (k + 1)).epsilon(1e-12));
  }
}

TEST_CASE("scripted sessions give the exact count trace after warmup") {
  const BaselineConfig cfg;
  const ScriptedSession s = scripted_session(cfg);
  const auto counts = run_baseline(s.session, cfg);
  const std::vector<int> after(counts.begin() + cfg.warmup, counts.end());
  CHECK(after == s.expected);
  if (after != s.expected)
    for (std::size_t i = 0; i < after.size(); ++i)
      if (after[i] != s.expected[i]) MESSAGE("frame " << i << " got " << after[i] << " want " << s.expected[i]);

  SessionRecord empty = s.session;
  for (auto& f : empty.frames) f = render_frame(22.0, {});
  for (int c : run_baseline(empty, cfg)) CHECK(c == 0);
  CHECK_THROWS_AS(run_baseline(SessionRecord{}, cfg), DataError);
}

TEST_CASE("uniform offsets and reruns leave counts unchanged") {
  const BaselineConfig cfg;
  SynthConfig sc;
  sc.scale = 0.02;
  const auto sessions = generate_synthetic(sc);
  for (const auto& s : sessions) {
    const auto a = run_baseline(s, cfg);
    CHECK(run_baseline(s, cfg) == a);
    SessionRecord shifted = s;
    for (auto& f : shifted.frames)
      for (auto& v : f.values()) v += 4.0f;
    CHECK(run_baseline(shifted, cfg) == a);
  }
}

TEST_CASE("configuration text") {
  BaselineConfig cfg;
  cfg.parse("# tuned\nalpha = 0.5\n delta_t=2.0\nconnectivity = 4\n");
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.delta_t == 2.0);
  CHECK(cfg.connectivity == 4);
  BaselineConfig back;
  back.parse(cfg.str());
  CHECK(back.str() == cfg.str());
  CHECK_THROWS(cfg.set("nope", "1"));
  CHECK_THROWS(cfg.set("alpha", "x"));
  for (auto [key, value] : {std::pair{"alpha", "0"}, {"connectivity", "6"}, {"min_area", "50"}, {"delta_t", "-1"}}) {
    BaselineConfig bad;
    bad.set(key, value);
    CHECK_THROWS(bad.validate());
  }
}

// SPDX-License-Identifier: Apache-2.0
#include "ircount/synth.hpp"

#include <algorithm>
#include <cmath>

#include "ircount/error.hpp"

namespace ircount {

Tensor render_frame(double ambient, const std::vector<HotSpot>& spots, Rng* rng, double noise_sd) {
  Tensor f(Shape{kFrameSize, kFrameSize, 1});
  for (int r = 0; r < kFrameSize; ++r)
    for (int c = 0; c < kFrameSize; ++c) {
      double v = ambient;
      for (const auto& s : spots) {
        const double dr = r - s.row, dc = c - s.col;
        v += s.amplitude * std::exp(-(dr * dr + dc * dc) / (2 * s.sigma * s.sigma));
      }
      if (rng) v += noise_sd * rng->normal();
      f[std::size_t(r * kFrameSize + c)] = float(v);
    }
  return f;
}

namespace {

struct Walker {
  HotSpot spot;
  double vr = 0, vc = 0;
};

Walker spawn(Rng& rng, double amp_lo, double amp_hi) {
  Walker w;
  // Enter from a random border.
  const double t = rng.uniform(0, 7);
  switch (rng.below(4)) {
    case 0: w.spot.row = -0.5, w.spot.col = t; break;
    case 1: w.spot.row = 7.5, w.spot.col = t; break;
    case 2: w.spot.row = t, w.spot.col = -0.5; break;
    default: w.spot.row = t, w.spot.col = 7.5; break;
  }
  w.spot.amplitude = rng.uniform(amp_lo, amp_hi);
  w.spot.sigma = rng.uniform(0.7, 1.3);
  return w;
}

void step(Walker& w, Rng& rng) {
  w.vr = 0.8 * w.vr + 0.08 * rng.normal();
  w.vc = 0.8 * w.vc + 0.08 * rng.normal();
  w.spot.row += w.vr;
  w.spot.col += w.vc;
  // Keep people inside the field of view once they entered it.
  auto bounce = [](double& x, double& v) {
    if (x < 0.3) x = 0.3, v = std::abs(v);
    if (x > 6.7) x = 6.7, v = -std::abs(v);
  };
  bounce(w.spot.row, w.vr);
  bounce(w.spot.col, w.vc);
}

/// Piecewise-constant count trace with the requested class totals.
std::vector<int> count_trace(int n, const std::array<double, 4>& mix, Rng& rng) {
  std::array<int, 4> left{};
  int assigned = 0;
  double total = 0;
  for (double m : mix) total += m;
  for (int c = 0; c < 4; ++c) {
    left[std::size_t(c)] = int(std::floor(n * mix[std::size_t(c)] / total));
    assigned += left[std::size_t(c)];
  }
  const int top = int(std::max_element(mix.begin(), mix.end()) - mix.begin());
  left[std::size_t(top)] += n - assigned;

  std::vector<int> labels;
  labels.reserve(std::size_t(n));
  int prev = -1;
  while (int(labels.size()) < n) {
    int remaining = 0;
    for (int c = 0; c < 4; ++c)
      if (c != prev) remaining += left[std::size_t(c)];
    int c = 0;
    if (remaining == 0) {
      c = prev;
    } else {
      auto pick = std::int64_t(rng.below(std::uint64_t(remaining)));
      for (c = 0; c < 4; ++c) {
        if (c == prev) continue;
        pick -= left[std::size_t(c)];
        if (pick < 0) break;
      }
    }
    const int dur = std::min(left[std::size_t(c)], int(15 + rng.below(106)));
    labels.insert(labels.end(), std::size_t(dur), c);
    left[std::size_t(c)] -= dur;
    prev = c;
  }
  return labels;
}

}  // namespace

std::vector<SessionRecord> generate_synthetic(const SynthConfig& cfg) {
  if (cfg.mix.size() < cfg.sizes.size()) throw Error("synthetic: one class mix per session");
  if (!(cfg.scale > 0)) throw Error("synthetic: scale must be > 0");
  std::vector<SessionRecord> out;
  for (std::size_t s = 0; s < cfg.sizes.size(); ++s) {
    const int sid = int(s) + 1;
    Rng rng(derive_seed(cfg.seed, "session:" + std::to_string(sid)));
    const int n = std::max(1, int(std::lround(cfg.sizes[s] * cfg.scale)));
    const auto labels = count_trace(n, cfg.mix[s], rng);

    const double ambient0 = rng.uniform(21.0, 25.0);
    // Warmer rooms give weaker contrast.
    const double amp_hi = std::clamp(34.0 - ambient0, 3.0, 8.0) * 0.6;
    const double amp_lo = amp_hi * 0.45;
    std::vector<double> fixed(static_cast<std::size_t>(kPixels));
    for (auto& v : fixed) v = 0.2 * rng.normal();

    SessionRecord rec;
    rec.session_id = sid;
    rec.metadata["environment"] = "synthetic-room-" + std::to_string(sid);
    rec.metadata["room_temp"] = std::to_string(ambient0).substr(0, 5);
    rec.metadata["timestamp"] = "2023-01-0" + std::to_string(std::min(sid, 9)) + "T10:00:00";

    std::vector<Walker> people;
    double ambient = ambient0;
    int idx = 0;
    auto emit = [&](int label, std::uint8_t conf) {
      for (auto& p : people) step(p, rng);
      ambient += 0.002 * rng.normal();
      std::vector<HotSpot> spots;
      for (const auto& p : people) spots.push_back(p.spot);
      Tensor f = render_frame(ambient, spots, &rng, cfg.noise_sd);
      for (std::size_t p = 0; p < std::size_t(kPixels); ++p) f[p] += float(fixed[p]);
      rec.frames.push_back(std::move(f));
      rec.labels.push_back(label);
      rec.frame_idx.push_back(idx++);
      rec.confidence.push_back(conf);
      rec.segment_start.push_back(rec.frames.size() == 1 ? 1 : 0);
    };
    for (int i = 0; i < n; ++i) {
      const int target = labels[std::size_t(i)];
      while (int(people.size()) < target) people.push_back(spawn(rng, amp_lo, amp_hi));
      while (int(people.size()) > target) people.erase(people.begin() + std::ptrdiff_t(rng.below(people.size())));
      if (rng.uniform() < cfg.low_confidence) emit(target, 0);
      emit(target, 1);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Synthetic 8x8 thermal sessions: warm Gaussian blobs walking over a noisy
// ambient background. Used for fixtures and desk-scale runs without the
// public recordings.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ircount/dataset.hpp"
#include "ircount/rng.hpp"

namespace ircount {

struct HotSpot {
  double row = 3.5;
  double col = 3.5;
  double amplitude = 3.0;  // degrees above ambient at the centre
  double sigma = 1.0;      // pixels
};

/// ambient + sum of spots, plus N(0, noise_sd) per pixel when `rng` is given.
Tensor render_frame(double ambient, const std::vector<HotSpot>& spots, Rng* rng = nullptr,
                    double noise_sd = 0.0);

struct SynthConfig {
  // Retained (confidence 1) frames per session; session ids are 1..N.
  std::vector<int> sizes{17958, 1581, 1519, 2202, 1850};
  // Class mix per session in percent.
  std::vector<std::array<double, 4>> mix{{21.41, 44.90, 26.16, 7.53},
                                         {14.86, 30.68, 54.46, 0.0},
                                         {71.89, 21.72, 5.66, 0.72},
                                         {26.02, 51.27, 19.16, 3.54},
                                         {33.78, 38.38, 18.92, 8.92}};
  double scale = 1.0;              // multiplies every session size
  double low_confidence = 0.03;    // extra unlabelled-quality rows per retained row
  double noise_sd = 0.25;
  std::uint64_t seed = 1;
};

std::vector<SessionRecord> generate_synthetic(const SynthConfig& cfg);

}  // namespace ircount

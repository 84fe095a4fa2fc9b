// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checker shared by the gradient tests and the
// acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "ircount/rng.hpp"
#include "ircount/tensor.hpp"

namespace ircount::testing {

inline constexpr double kStep = 1e-3;
inline constexpr double kMaxRelErr = 1e-4;
// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kGradFloor = 1e-6;
// Richardson estimates from (h, h/2) and (h/2, h/4) disagreeing by more
// than this mark a ReLU/maxpool kink inside [x-h, x+h].
inline constexpr double kKinkTol = 1e-7;
inline constexpr double kMaxKinkFraction = 0.10;

struct GradStats {
  long checked = 0;
  long kinks = 0;
  double max_rel = 0;
  std::string worst;

  bool ok() const {
    return checked > 0 && max_rel < kMaxRelErr && double(kinks) <= kMaxKinkFraction * double(checked + kinks);
  }
  std::string summary() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "checked %ld, kinks skipped %ld, max rel err %.3g", checked, kinks, max_rel);
    return buf + (worst.empty() ? std::string() : " at " + worst);
  }
};

/// Compares `grad` with Richardson-extrapolated central differences of `f`
/// w.r.t. every element of `x` (or `sample` random elements given an rng).
template <typename F>
void check_tensor(GradStats& stats, F&& f, BasicTensor<double>& x, const BasicTensor<double>& grad,
                  Rng* rng = nullptr, std::size_t sample = 0) {
  const std::size_t n = x.size();
  const std::size_t count = rng && sample ? std::min(sample, n) : n;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = rng && sample ? std::size_t(rng->below(n)) : k;
    const double v = x[i];
    auto diff = [&](double h) {
      x[i] = v + h;
      const double up = f();
      x[i] = v - h;
      const double down = f();
      x[i] = v;
      return (up - down) / (2 * h);
    };
    const double d1 = diff(kStep), d2 = diff(kStep / 2), d4 = diff(kStep / 4);
    const double n1 = (4 * d2 - d1) / 3;
    const double n2 = (4 * d4 - d2) / 3;
    if (std::abs(n1 - n2) > kKinkTol * std::max(1.0, std::abs(n1))) {
      ++stats.kinks;
      continue;
    }
    const double a = grad[i];
    const double rel = std::abs(a - n1) / std::max({std::abs(a), std::abs(n1), kGradFloor});
    ++stats.checked;
    if (rel > stats.max_rel) {
      stats.max_rel = rel;
      stats.worst = "index " + std::to_string(i) + " analytic " + std::to_string(a) + " numeric " +
                    std::to_string(n1);
    }
  }
}

}  // namespace ircount::testing

#ifdef DOCTEST_LIBRARY_INCLUDED
namespace ircount::testing {
inline void require_ok(const GradStats& s) {
  MESSAGE(s.summary());
  REQUIRE(s.ok());
}
}  // namespace ircount::testing
#endif

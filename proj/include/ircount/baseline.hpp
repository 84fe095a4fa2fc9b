// SPDX-License-Identifier: Apache-2.0
//
// Deterministic people counter: EMA smoothing, bilinear upsampling,
// background subtraction, connected-component labelling, blob filtering and
// a background model that only learns from pixels outside detected blobs.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ircount/dataset.hpp"

namespace ircount {

struct BaselineConfig {
  double alpha = 0.6;        // EMA weight of the newest frame
  int upsample = 2;          // 8x8 -> (8-1)*f+1 per side
  double delta_t = 1.5;      // degrees above background
  int min_area = 2;          // interpolated pixels
  int max_area = 40;
  int connectivity = 8;      // 4 or 8
  double beta = 0.01;        // background learning rate
  int warmup = 20;           // frames averaged into the initial background
  int max_count = 3;

  void validate() const;
  /// Canonical `key = value` lines.
  std::string str() const;
  /// Applies `key = value` lines ('#' comments allowed).
  void parse(const std::string& text);
  void set(const std::string& key, const std::string& value);
};

/// Row-major single-channel image.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Image() = default;
  Image(int r, int c, double fill = 0) : rows(r), cols(c), v(std::size_t(r * c), fill) {}
  double& at(int r, int c) { return v[std::size_t(r * cols + c)]; }
  double at(int r, int c) const { return v[std::size_t(r * cols + c)]; }
};

struct Blob {
  std::vector<int> pixels;  // row * cols + col, ascending
  int area = 0;
  double peak = 0;        // max temperature inside the blob
  double peak_excess = 0; // max (frame - background) inside the blob
  double centroid_row = 0;
  double centroid_col = 0;
};

struct BaselineState {
  std::optional<Image> smoothed;
  std::optional<Image> background;
  int absorbed = 0;  // frames averaged into the background so far
};

/// Bilinear resampling of an n x n grid to ((n-1)*f+1)^2.
Image upsample_bilinear(const Image& in, int factor);
Image from_frame(const Tensor& frame);

/// EMA smoothing (first frame passes through) followed by upsampling.
Image preprocess(const Tensor& frame, BaselineState& state, const BaselineConfig& cfg);

/// Component labels for a binary mask (-1 = background), numbered in raster
/// order of each component's first pixel.
std::vector<int> label_components(const std::vector<std::uint8_t>& mask, int rows, int cols,
                                  int connectivity);

std::vector<Blob> segment(const Image& frame, const Image& background, const BaselineConfig& cfg);
int classify_and_count(const std::vector<Blob>& blobs, const BaselineConfig& cfg);
/// Warmup frames: running mean over every pixel. Afterwards an EMA with rate
/// beta on pixels outside all blobs.
void update_background(Image& background, const Image& frame, const std::vector<Blob>& blobs,
                       int absorbed, const BaselineConfig& cfg);

/// One count per frame, processed in order with a fresh state.
std::vector<int> run_baseline(const SessionRecord& session, const BaselineConfig& cfg);

void write_predictions(std::ostream& out, const SessionRecord& session, const std::vector<int>& counts);

}  // namespace ircount

// SPDX-License-Identifier: Apache-2.0
//
// Session ingestion, leave-one-session-out folds and window construction.
//
// CSV layout (UTF-8, header row, one row per frame):
//   session,frame_idx,label,confidence,p00,...,p77[,timestamp,environment,room_temp]
// Pixel pRC is row R, column C. Extra columns are kept as session metadata
// (first row of the session wins) or ignored.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ircount/network.hpp"
#include "ircount/tensor.hpp"

namespace ircount {

inline constexpr int kPixels = kFrameSize * kFrameSize;

struct SessionRecord {
  int session_id = 0;
  std::vector<Tensor> frames;  // (8, 8, 1), acquisition order
  std::vector<int> labels;
  std::vector<int> frame_idx;
  std::vector<std::uint8_t> confidence;
  // True where a window has to restart: the first frame and the first frame
  // after a gap (filtered rows or a jump in frame_idx).
  std::vector<std::uint8_t> segment_start;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return frames.size(); }
};

struct LoadOptions {
  bool filter_low_confidence = true;
  int num_classes = kDefaultClasses;
};

std::vector<SessionRecord> load_sessions(const std::filesystem::path& path,
                                         const LoadOptions& opt = {});
std::vector<SessionRecord> parse_sessions(std::istream& in, const LoadOptions& opt = {},
                                          const std::string& source = "<stream>");
/// Writes every frame (including low-confidence ones) in the CSV layout above.
void write_sessions(std::ostream& out, const std::vector<SessionRecord>& sessions);
void save_sessions(const std::filesystem::path& path, const std::vector<SessionRecord>& sessions);

/// Drops confidence-0 frames and marks the frame after each removal as a
/// segment start, exactly as load_sessions does.
std::vector<SessionRecord> filter_low_confidence(std::vector<SessionRecord> sessions);

std::size_t total_samples(const std::vector<SessionRecord>& sessions);

struct Fold {
  int test_session = 0;
  std::vector<int> train_sessions;
};

/// One fold per session other than session 1, ascending by test session id.
std::vector<Fold> make_folds(const std::vector<SessionRecord>& sessions);

/// A window of frame positions inside one session, oldest first.
struct Sample {
  int session_id = 0;
  int position = 0;  // index of the labelled (last) frame in the session
  int label = 0;
  std::vector<int> frames;
};

/// One sample per frame. Windows never cross a segment start; missing history
/// is filled by repeating the segment's first frame.
std::vector<Sample> make_windows(const SessionRecord& session, int window);

/// w_c = N / (K N_c) for present classes, 0 for absent ones.
std::vector<double> class_weights(const std::vector<int>& labels, int k);

struct Normalization {
  double mean = 0;
  double std = 1;

  float apply(float x) const { return float((double(x) - mean) / std); }
};

inline constexpr double kStdFloor = 1e-6;

/// Scalar statistics over every pixel of the given frames (population std,
/// floored at kStdFloor).
Normalization normalization_stats(const std::vector<const Tensor*>& frames);

/// Normalized, materialized windows ready for a model.
struct SampleSet {
  std::vector<Window<float>> windows;
  std::vector<int> labels;
  std::vector<int> session_ids;
  std::vector<int> frame_idx;

  std::size_t size() const { return labels.size(); }
};

SampleSet materialize(const std::vector<SessionRecord>& sessions, const std::vector<int>& ids,
                      int window, const Normalization& norm);

struct FoldData {
  Fold fold;
  Normalization norm;
  std::vector<double> class_weights;
  SampleSet train;  // unit windows (single frames for majority voting)
  SampleSet test;   // full W-frame windows
};

/// Train/test material for one spec and fold. Normalization and class weights
/// come from the training sessions only.
FoldData prepare_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                      const ModelSpec& spec);

const SessionRecord& find_session(const std::vector<SessionRecord>& sessions, int id);

}  // namespace ircount

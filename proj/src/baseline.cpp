// SPDX-License-Identifier: Apache-2.0
#include "ircount/baseline.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ircount/error.hpp"

namespace ircount {

void BaselineConfig::validate() const {
  if (!(alpha > 0 && alpha <= 1)) throw Error("baseline: alpha must be in (0, 1]");
  if (upsample < 1) throw Error("baseline: upsample must be >= 1");
  if (!(delta_t > 0)) throw Error("baseline: delta_t must be > 0");
  if (min_area < 1 || min_area > max_area) throw Error("baseline: need 1 <= min_area <= max_area");
  if (connectivity != 4 && connectivity != 8) throw Error("baseline: connectivity must be 4 or 8");
  if (!(beta >= 0 && beta <= 1)) throw Error("baseline: beta must be in [0, 1]");
  if (warmup < 1) throw Error("baseline: warmup must be >= 1");
  if (max_count < 0) throw Error("baseline: max_count must be >= 0");
}

std::string BaselineConfig::str() const {
  std::ostringstream o;
  o.precision(17);
  o << "alpha = " << alpha << "\nupsample = " << upsample << "\ndelta_t = " << delta_t
    << "\nmin_area = " << min_area << "\nmax_area = " << max_area
    << "\nconnectivity = " << connectivity << "\nbeta = " << beta << "\nwarmup = " << warmup
    << "\nmax_count = " << max_count << "\n";
  return o.str();
}

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw Error("baseline: bad value '" + s + "' for " + key);
  return v;
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void BaselineConfig::set(const std::string& key, const std::string& value) {
  if (key == "alpha") alpha = parse_value<double>(key, value);
  else if (key == "upsample") upsample = parse_value<int>(key, value);
  else if (key == "delta_t") delta_t = parse_value<double>(key, value);
  else if (key == "min_area") min_area = parse_value<int>(key, value);
  else if (key == "max_area") max_area = parse_value<int>(key, value);
  else if (key == "connectivity") connectivity = parse_value<int>(key, value);
  else if (key == "beta") beta = parse_value<double>(key, value);
  else if (key == "warmup") warmup = parse_value<int>(key, value);
  else if (key == "max_count") max_count = parse_value<int>(key, value);
  else throw Error("baseline: unknown key '" + key + "'");
}

void BaselineConfig::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("baseline config line " + std::to_string(n) + ": expected key = value");
    set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  validate();
}

Image from_frame(const Tensor& frame) {
  Image img(kFrameSize, kFrameSize);
  if (frame.size() != std::size_t(kPixels)) throw ShapeError("baseline expects 8x8 frames");
  for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = frame[i];
  return img;
}

Image upsample_bilinear(const Image& in, int factor) {
  if (factor == 1) return in;
  Image out((in.rows - 1) * factor + 1, (in.cols - 1) * factor + 1);
  for (int r = 0; r < out.rows; ++r) {
    const int r0 = std::min(r / factor, in.rows - 2);
    const double fr = double(r - r0 * factor) / factor;
    for (int c = 0; c < out.cols; ++c) {
      const int c0 = std::min(c / factor, in.cols - 2);
      const double fc = double(c - c0 * factor) / factor;
      out.at(r, c) = (1 - fr) * ((1 - fc) * in.at(r0, c0) + fc * in.at(r0, c0 + 1)) +
                     fr * ((1 - fc) * in.at(r0 + 1, c0) + fc * in.at(r0 + 1, c0 + 1));
    }
  }
  return out;
}

Image preprocess(const Tensor& frame, BaselineState& state, const BaselineConfig& cfg) {
  Image x = from_frame(frame);
  if (state.smoothed) {
    for (std::size_t i = 0; i < x.v.size(); ++i)
      x.v[i] = cfg.alpha * x.v[i] + (1 - cfg.alpha) * state.smoothed->v[i];
  }
  state.smoothed = x;
  return upsample_bilinear(x, cfg.upsample);
}

std::vector<int> label_components(const std::vector<std::uint8_t>& mask, int rows, int cols,
                                  int connectivity) {
  const int n = rows * cols;
  if (int(mask.size()) != n) throw ShapeError("mask size mismatch");
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[std::size_t(a)] != a) {
      parent[std::size_t(a)] = parent[std::size_t(parent[std::size_t(a)])];
      a = parent[std::size_t(a)];
    }
    return a;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
  };
  // Already-visited neighbours in raster order.
  const int dr8[] = {-1, -1, -1, 0}, dc8[] = {-1, 0, 1, -1};
  const int dr4[] = {-1, 0}, dc4[] = {0, -1};
  const int* dr = connectivity == 8 ? dr8 : dr4;
  const int* dc = connectivity == 8 ? dc8 : dc4;
  const int nn = connectivity == 8 ? 4 : 2;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (!mask[std::size_t(r * cols + c)]) continue;
      for (int k = 0; k < nn; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || cc < 0 || cc >= cols) continue;
        if (mask[std::size_t(rr * cols + cc)]) unite(r * cols + c, rr * cols + cc);
      }
    }
  std::vector<int> labels(std::size_t(n), -1), root_label(std::size_t(n), -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[std::size_t(i)]) continue;
    const int root = find(i);
    if (root_label[std::size_t(root)] < 0) root_label[std::size_t(root)] = next++;
    labels[std::size_t(i)] = root_label[std::size_t(root)];
  }
  return labels;
}

std::vector<Blob> segment(const Image& frame, const Image& background, const BaselineConfig& cfg) {
  if (frame.rows != background.rows || frame.cols != background.cols)
    throw ShapeError("frame and background differ in shape");
  std::vector<std::uint8_t> mask(frame.v.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = frame.v[i] - background.v[i] > cfg.delta_t;
  const auto labels = label_components(mask, frame.rows, frame.cols, cfg.connectivity);
  const int n = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<Blob> blobs(std::size_t(std::max(n, 0)));
  for (auto& b : blobs) b.peak = b.peak_excess = -1e300;
  for (int i = 0; i < int(labels.size()); ++i) {
    const int l = labels[std::size_t(i)];
    if (l < 0) continue;
    Blob& b = blobs[std::size_t(l)];
    b.pixels.push_back(i);
    ++b.area;
    b.peak = std::max(b.peak, frame.v[std::size_t(i)]);
    b.peak_excess = std::max(b.peak_excess, frame.v[std::size_t(i)] - background.v[std::size_t(i)]);
    b.centroid_row += i / frame.cols;
    b.centroid_col += i % frame.cols;
  }
  for (auto& b : blobs) {
    b.centroid_row /= b.area;
    b.centroid_col /= b.area;
  }
  return blobs;
}

int classify_and_count(const std::vector<Blob>& blobs, const BaselineConfig& cfg) {
  int n = 0;
  for (const auto& b : blobs)
    if (b.area >= cfg.min_area && b.area <= cfg.max_area && b.peak_excess >= cfg.delta_t) ++n;
  return std::clamp(n, 0, cfg.max_count);
}

void update_background(Image& background, const Image& frame, const std::vector<Blob>& blobs,
                       int absorbed, const BaselineConfig& cfg) {
  if (absorbed < cfg.warmup) {
    for (std::size_t i = 0; i < background.v.size(); ++i)
      background.v[i] += (frame.v[i] - background.v[i]) / double(absorbed + 1);
    return;
  }
  std::vector<std::uint8_t> inside(background.v.size(), 0);
  for (const auto& b : blobs)
    for (int p : b.pixels) inside[std::size_t(p)] = 1;
  for (std::size_t i = 0; i < background.v.size(); ++i)
    if (!inside[i]) background.v[i] = (1 - cfg.beta) * background.v[i] + cfg.beta * frame.v[i];
}

std::vector<int> run_baseline(const SessionRecord& session, const BaselineConfig& cfg) {
  cfg.validate();
  if (session.size() == 0) throw DataError("baseline on an empty session");
  BaselineState st;
  std::vector<int> counts;
  counts.reserve(session.size());
  for (const auto& f : session.frames) {
    const Image x = preprocess(f, st, cfg);
    if (!st.background) {
      st.background = x;
      st.absorbed = 1;
      counts.push_back(0);
      continue;
    }
    const auto blobs = segment(x, *st.background, cfg);
    counts.push_back(classify_and_count(blobs, cfg));
    update_background(*st.background, x, blobs, st.absorbed, cfg);
    if (st.absorbed < cfg.warmup) ++st.absorbed;
  }
  return counts;
}

void write_predictions(std::ostream& out, const SessionRecord& session, const std::vector<int>& counts) {
  for (std::size_t i = 0; i < counts.size(); ++i)
    out << session.session_id << ',' << session.frame_idx[i] << ',' << counts[i] << '\n';
}

}  // namespace ircount

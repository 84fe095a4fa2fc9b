// SPDX-License-Identifier: Apache-2.0
#include "ircount/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ircount/error.hpp"

namespace ircount {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& raw, const std::string& what, const std::string& where) {
  const std::string s = trim(raw);
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw DataError(where + ": cannot parse " + what + " '" + raw + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw DataError(where + ": non-finite " + what);
  }
  return v;
}

std::string pixel_name(int r, int c) { return "p" + std::to_string(r) + std::to_string(c); }

}  // namespace

std::vector<SessionRecord> parse_sessions(std::istream& in, const LoadOptions& opt,
                                          const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw DataError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);

  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  auto need = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw DataError(source + ": missing column '" + name + "'");
    return it->second;
  };
  const std::size_t c_session = need("session"), c_idx = need("frame_idx"),
                    c_label = need("label"), c_conf = need("confidence");
  std::vector<std::size_t> c_pix;
  for (int r = 0; r < kFrameSize; ++r)
    for (int c = 0; c < kFrameSize; ++c) c_pix.push_back(need(pixel_name(r, c)));
  std::vector<std::pair<std::string, std::size_t>> meta_cols;
  std::set<std::size_t> known{c_session, c_idx, c_label, c_conf};
  known.insert(c_pix.begin(), c_pix.end());
  for (std::size_t i = 0; i < header.size(); ++i)
    if (!known.count(i)) meta_cols.emplace_back(trim(header[i]), i);

  std::vector<SessionRecord> sessions;
  std::set<int> closed;
  bool gap = false;
  int last_idx = 0;
  std::size_t rows = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto f = split_csv(line);
    if (f.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    ++rows;
    const int sid = parse_number<int>(f[c_session], "session", where);
    const int idx = parse_number<int>(f[c_idx], "frame_idx", where);
    const int label = parse_number<int>(f[c_label], "label", where);
    const int conf = parse_number<int>(f[c_conf], "confidence", where);
    if (label < 0 || label >= opt.num_classes)
      throw DataError(where + ": label " + std::to_string(label) + " outside [0, " +
                      std::to_string(opt.num_classes - 1) + "]");
    if (conf != 0 && conf != 1) throw DataError(where + ": confidence must be 0 or 1");

    if (sessions.empty() || sessions.back().session_id != sid) {
      if (closed.count(sid))
        throw DataError(where + ": rows of session " + std::to_string(sid) + " are not contiguous");
      if (!sessions.empty()) closed.insert(sessions.back().session_id);
      SessionRecord s;
      s.session_id = sid;
      for (const auto& [name, i] : meta_cols) s.metadata[name] = trim(f[i]);
      sessions.push_back(std::move(s));
      gap = true;
      last_idx = idx - 1;
    } else if (idx <= last_idx) {
      throw DataError(where + ": frame_idx not increasing within session " + std::to_string(sid));
    }
    if (idx != last_idx + 1) gap = true;
    last_idx = idx;

    if (opt.filter_low_confidence && conf == 0) {
      gap = true;
      continue;
    }
    auto& s = sessions.back();
    std::vector<float> px(kPixels);
    for (int p = 0; p < kPixels; ++p) px[p] = parse_number<float>(f[c_pix[p]], "pixel", where);
    s.frames.emplace_back(Shape{kFrameSize, kFrameSize, 1}, std::move(px));
    s.labels.push_back(label);
    s.frame_idx.push_back(idx);
    s.confidence.push_back(std::uint8_t(conf));
    s.segment_start.push_back(gap ? 1 : 0);
    gap = false;
  }
  if (rows == 0) throw DataError(source + ": no data rows");
  std::erase_if(sessions, [](const SessionRecord& s) { return s.frames.empty(); });
  return sessions;
}

std::vector<SessionRecord> load_sessions(const std::filesystem::path& path, const LoadOptions& opt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  return parse_sessions(in, opt, path.string());
}

void write_sessions(std::ostream& out, const std::vector<SessionRecord>& sessions) {
  std::set<std::string> meta_names;
  for (const auto& s : sessions)
    for (const auto& [k, v] : s.metadata) meta_names.insert(k);
  out << "session,frame_idx,label,confidence";
  for (int r = 0; r < kFrameSize; ++r)
    for (int c = 0; c < kFrameSize; ++c) out << ',' << pixel_name(r, c);
  for (const auto& m : meta_names) out << ',' << m;
  out << '\n';
  char buf[32];
  for (const auto& s : sessions) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << s.session_id << ',' << s.frame_idx[i] << ',' << s.labels[i] << ','
          << int(s.confidence[i]);
      for (float v : s.frames[i].values()) {
        const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        out << ',' << std::string_view(buf, std::size_t(p - buf));
      }
      for (const auto& m : meta_names) {
        auto it = s.metadata.find(m);
        out << ',' << (it == s.metadata.end() ? "" : it->second);
      }
      out << '\n';
    }
  }
}

void save_sessions(const std::filesystem::path& path, const std::vector<SessionRecord>& sessions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_sessions(out, sessions);
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<SessionRecord> filter_low_confidence(std::vector<SessionRecord> sessions) {
  for (auto& s : sessions) {
    SessionRecord kept;
    kept.session_id = s.session_id;
    kept.metadata = s.metadata;
    bool gap = true;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i > 0 && s.frame_idx[i] != s.frame_idx[i - 1] + 1) gap = true;
      if (s.segment_start[i]) gap = true;
      if (!s.confidence[i]) {
        gap = true;
        continue;
      }
      kept.frames.push_back(std::move(s.frames[i]));
      kept.labels.push_back(s.labels[i]);
      kept.frame_idx.push_back(s.frame_idx[i]);
      kept.confidence.push_back(1);
      kept.segment_start.push_back(gap ? 1 : 0);
      gap = false;
    }
    s = std::move(kept);
  }
  std::erase_if(sessions, [](const SessionRecord& s) { return s.frames.empty(); });
  return sessions;
}

std::size_t total_samples(const std::vector<SessionRecord>& sessions) {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.size();
  return n;
}

std::vector<Fold> make_folds(const std::vector<SessionRecord>& sessions) {
  if (sessions.size() < 2) throw DataError("cross validation needs at least 2 sessions");
  std::vector<int> ids;
  for (const auto& s : sessions) ids.push_back(s.session_id);
  std::sort(ids.begin(), ids.end());
  if (!std::binary_search(ids.begin(), ids.end(), 1))
    throw DataError("session 1 is required (it always stays in the training split)");
  std::vector<Fold> folds;
  for (int test : ids) {
    if (test == 1) continue;
    Fold f;
    f.test_session = test;
    for (int id : ids)
      if (id != test) f.train_sessions.push_back(id);
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Sample> make_windows(const SessionRecord& session, int window) {
  if (window < 1) throw DataError("window length must be >= 1");
  std::vector<Sample> out;
  out.reserve(session.size());
  int seg = 0;
  for (int i = 0; i < int(session.size()); ++i) {
    if (i == 0 || session.segment_start[std::size_t(i)]) seg = i;
    Sample s;
    s.session_id = session.session_id;
    s.position = i;
    s.label = session.labels[std::size_t(i)];
    for (int k = window - 1; k >= 0; --k) s.frames.push_back(std::max(seg, i - k));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> class_weights(const std::vector<int>& labels, int k) {
  if (labels.empty()) throw DataError("class weights of an empty training set");
  std::vector<std::size_t> counts(std::size_t(k), 0);
  for (int l : labels) {
    if (l < 0 || l >= k) throw DataError("label outside class range");
    ++counts[std::size_t(l)];
  }
  std::vector<double> w(std::size_t(k), 0.0);
  for (int c = 0; c < k; ++c)
    if (counts[std::size_t(c)] > 0)
      w[std::size_t(c)] = double(labels.size()) / (double(k) * double(counts[std::size_t(c)]));
  return w;
}

Normalization normalization_stats(const std::vector<const Tensor*>& frames) {
  if (frames.empty()) throw DataError("normalization statistics of no frames");
  double sum = 0;
  std::size_t n = 0;
  for (const auto* f : frames)
    for (float v : f->values()) {
      sum += v;
      ++n;
    }
  const double mean = sum / double(n);
  double sq = 0;
  for (const auto* f : frames)
    for (float v : f->values()) sq += (v - mean) * (v - mean);
  return {mean, std::max(std::sqrt(sq / double(n)), kStdFloor)};
}

const SessionRecord& find_session(const std::vector<SessionRecord>& sessions, int id) {
  for (const auto& s : sessions)
    if (s.session_id == id) return s;
  throw DataError("unknown session " + std::to_string(id));
}

SampleSet materialize(const std::vector<SessionRecord>& sessions, const std::vector<int>& ids,
                      int window, const Normalization& norm) {
  SampleSet set;
  for (int id : ids) {
    const auto& s = find_session(sessions, id);
    std::vector<Tensor> normed;
    normed.reserve(s.size());
    for (const auto& f : s.frames) {
      Tensor t = f;
      for (auto& v : t.values()) v = norm.apply(v);
      normed.push_back(std::move(t));
    }
    for (const auto& sample : make_windows(s, window)) {
      Window<float> w;
      w.reserve(sample.frames.size());
      for (int p : sample.frames) w.push_back(normed[std::size_t(p)]);
      set.windows.push_back(std::move(w));
      set.labels.push_back(sample.label);
      set.session_ids.push_back(id);
      set.frame_idx.push_back(s.frame_idx[std::size_t(sample.position)]);
    }
  }
  return set;
}

FoldData prepare_fold(const std::vector<SessionRecord>& sessions, const Fold& fold,
                      const ModelSpec& spec) {
  FoldData d;
  d.fold = fold;
  std::vector<const Tensor*> frames;
  std::vector<int> labels;
  for (int id : fold.train_sessions) {
    const auto& s = find_session(sessions, id);
    for (const auto& f : s.frames) frames.push_back(&f);
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  d.norm = normalization_stats(frames);
  d.class_weights = class_weights(labels, spec.classes);
  const int unit = spec.family == Family::kMajorityVoting ? 1 : spec.window;
  d.train = materialize(sessions, fold.train_sessions, unit, d.norm);
  d.test = materialize(sessions, {fold.test_session}, spec.window, d.norm);
  return d;
}

}  // namespace ircount

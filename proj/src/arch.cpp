// SPDX-License-Identifier: Apache-2.0
#include "ircount/arch.hpp"

#include <algorithm>

#include <charconv>

#include "ircount/error.hpp"

namespace ircount {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<int> parse_positive(std::string_view digits) {
  if (digits.empty()) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || v <= 0)
    return std::nullopt;
  return v;
}

bool starts_with(std::string_view s, std::string_view p) {
  return s.substr(0, p.size()) == p;
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kSingleFrame: return "sf";
    case Family::kMultiChannel: return "mc";
    case Family::kMajorityVoting: return "mv";
    case Family::kConcat: return "cat";
    case Family::kLstm: return "lstm";
    case Family::kTcn: return "tcn";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : all_families())
    if (family_name(f) == name) return f;
  throw ArchError("unknown model family", std::string(name));
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> kAll = {
      Family::kSingleFrame, Family::kMultiChannel, Family::kMajorityVoting,
      Family::kConcat,      Family::kLstm,         Family::kTcn};
  return kAll;
}

bool uses_frame_extractor(Family f) {
  return f == Family::kConcat || f == Family::kLstm || f == Family::kTcn;
}

int ModelSpec::input_channels() const {
  return family == Family::kMultiChannel ? window : 1;
}

std::vector<int> ModelSpec::block_sides() const {
  std::vector<int> sides;
  int side = kFrameSize;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    side -= 2;
    if (i == 0 && pool) side /= 2;
    sides.push_back(side);
  }
  return sides;
}

int ModelSpec::feature_size() const {
  const auto sides = block_sides();
  return sides.back() * sides.back() * conv_channels.back();
}

int ModelSpec::head_input_size() const {
  switch (family) {
    case Family::kConcat: return window * feature_size();
    case Family::kLstm: return temporal_units;
    case Family::kTcn: return window * temporal_units;
    default: return feature_size();
  }
}

std::string ModelSpec::extractor_str() const {
  std::string s;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (i) s += "-";
    s += "C" + std::to_string(conv_channels[i]);
    if (i == 0 && pool) s += "-P";
  }
  return s;
}

std::string ModelSpec::str() const {
  std::string s = std::string(family_name(family)) + ":w" +
                  std::to_string(window) + ":" + extractor_str();
  switch (family) {
    case Family::kConcat: s += "-Cat"; break;
    case Family::kLstm: s += "-L" + std::to_string(temporal_units); break;
    case Family::kTcn: s += "-T" + std::to_string(temporal_units); break;
    default: break;
  }
  for (int h : hidden_fc) s += "-FC" + std::to_string(h);
  s += "-FC";
  return s;
}

void validate(const ModelSpec& spec) {
  const std::string fam(family_name(spec.family));
  if (spec.family == Family::kSingleFrame) {
    if (spec.window != 1) throw ArchError("sf requires W=1", "w" + std::to_string(spec.window));
  } else {
    const int min_w = spec.family == Family::kMultiChannel ? 1 : 3;
    if (spec.window < min_w || spec.window % 2 == 0)
      throw ArchError(fam + " requires an odd window size >= " + std::to_string(min_w),
                      "w" + std::to_string(spec.window));
  }
  if (spec.conv_channels.empty()) throw ArchError("at least one conv layer is required");
  int side = kFrameSize;
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    const std::string tok = "C" + std::to_string(spec.conv_channels[i]);
    if (spec.conv_channels[i] <= 0) throw ArchError("conv channels must be positive", tok);
    if (side < 3)
      throw ArchError("infeasible geometry: conv on " + std::to_string(side) + "x" +
                          std::to_string(side) + " input",
                      tok);
    side -= 2;
    if (i == 0 && spec.pool) {
      if (side % 2 != 0) throw ArchError("infeasible geometry: pool on odd extent", "P");
      side /= 2;
    }
  }
  if (spec.conv_channels.size() > 2) throw ArchError("at most two conv layers", "C");
  const bool wants_temporal = spec.family == Family::kLstm || spec.family == Family::kTcn;
  if (wants_temporal && spec.temporal_units <= 0)
    throw ArchError(fam + " requires a positive temporal layer size");
  if (!wants_temporal && spec.temporal_units != 0)
    throw ArchError("temporal layer not allowed in " + fam);
  if (spec.hidden_fc.size() > 1) throw ArchError("at most one hidden FC layer", "FC");
  for (int h : spec.hidden_fc)
    if (h <= 0) throw ArchError("FC width must be positive", "FC" + std::to_string(h));
  if (spec.classes < 2) throw ArchError("need at least two output classes");
}

ModelSpec parse_arch(std::string_view text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3)
    throw ArchError("expected <family>:w<W>:<layers>", std::string(text));
  ModelSpec spec;
  spec.family = parse_family(parts[0]);
  const std::string fam(parts[0]);
  if (!starts_with(parts[1], "w"))
    throw ArchError("window field must look like w<W>", std::string(parts[1]));
  const auto w = parse_positive(parts[1].substr(1));
  if (!w) throw ArchError("bad window size", std::string(parts[1]));
  spec.window = *w;

  const auto tokens = split(parts[2], '-');
  enum class Stage { kExtractor, kTemporal, kHead } stage = Stage::kExtractor;
  bool saw_terminal = false;
  bool saw_cat = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string_view tok = tokens[i];
    const std::string stok(tok);
    const bool last = i + 1 == tokens.size();
    if (saw_terminal) throw ArchError("layers after the output FC", stok);
    if (tok == "P") {
      if (stage != Stage::kExtractor || spec.conv_channels.size() != 1 || spec.pool)
        throw ArchError("pooling is only allowed once, directly after the first conv", stok);
      spec.pool = true;
    } else if (starts_with(tok, "FC")) {
      stage = Stage::kHead;
      if (last) {
        if (tok != "FC") throw ArchError("the output layer must be a bare FC", stok);
        saw_terminal = true;
      } else if (tok == "FC") {
        spec.hidden_fc.push_back(kDefaultHiddenUnits);
      } else {
        const auto n = parse_positive(tok.substr(2));
        if (!n) throw ArchError("bad FC width", stok);
        spec.hidden_fc.push_back(*n);
      }
    } else if (tok == "Cat") {
      if (spec.family != Family::kConcat) throw ArchError("Cat is only valid in cat models", stok);
      if (stage != Stage::kExtractor) throw ArchError("Cat must follow the feature extractor", stok);
      stage = Stage::kTemporal;
      saw_cat = true;
    } else if (starts_with(tok, "TCN") || (starts_with(tok, "T") && tok.size() > 1)) {
      if (spec.family != Family::kTcn) throw ArchError("TCN layer is only valid in tcn models", stok);
      if (stage != Stage::kExtractor) throw ArchError("TCN layer must follow the feature extractor", stok);
      const auto n = parse_positive(tok.substr(starts_with(tok, "TCN") ? 3 : 1));
      if (!n) throw ArchError("bad TCN channel count", stok);
      spec.temporal_units = *n;
      stage = Stage::kTemporal;
    } else if (starts_with(tok, "L")) {
      if (spec.family != Family::kLstm) throw ArchError("LSTM layer is only valid in lstm models", stok);
      if (stage != Stage::kExtractor) throw ArchError("LSTM layer must follow the feature extractor", stok);
      const auto n = parse_positive(tok.substr(1));
      if (!n) throw ArchError("bad LSTM hidden size", stok);
      spec.temporal_units = *n;
      stage = Stage::kTemporal;
    } else if (starts_with(tok, "C")) {
      if (stage != Stage::kExtractor) throw ArchError("conv after the feature extractor", stok);
      const auto n = parse_positive(tok.substr(1));
      if (!n) throw ArchError("bad conv channel count", stok);
      spec.conv_channels.push_back(*n);
      // Catch the third conv here so the error names it.
      ModelSpec probe = spec;
      probe.family = Family::kSingleFrame;
      probe.window = 1;
      probe.temporal_units = 0;
      try {
        validate(probe);
      } catch (const ArchError& e) {
        throw ArchError(std::string(e.what()).substr(0, std::string(e.what()).find(" (at")), stok);
      }
    } else {
      throw ArchError("unknown token", stok);
    }
  }
  if (!saw_terminal) throw ArchError("architecture must end with the output FC", std::string(tokens.back()));
  if (spec.family == Family::kConcat && !saw_cat)
    throw ArchError("cat models need a Cat token");
  if ((spec.family == Family::kLstm || spec.family == Family::kTcn) && spec.temporal_units == 0)
    throw ArchError(fam + " models need a temporal layer token");
  validate(spec);
  return spec;
}

std::vector<ModelSpec> enumerate_family(Family family, const std::vector<ModelSpec>& extractors,
                                        const GridOptions& grid) {
  std::vector<ModelSpec> out;
  auto push = [&](ModelSpec s) {
    validate(s);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  };
  if (family == Family::kSingleFrame || family == Family::kMultiChannel) {
    const std::vector<int> windows =
        family == Family::kSingleFrame ? std::vector<int>{1} : grid.windows;
    for (int w : windows)
      for (int n_conv = 1; n_conv <= 2; ++n_conv)
        for (std::size_t a = 0; a < grid.channels.size(); ++a)
          for (std::size_t b = 0; b < (n_conv == 2 ? grid.channels.size() : 1); ++b)
            for (int pool = 0; pool <= 1; ++pool) {
              if (n_conv == 2 && !pool && grid.two_conv_requires_pool) continue;
              for (int fc = 1; fc <= 2; ++fc) {
                ModelSpec s;
                s.family = family;
                s.window = w;
                s.conv_channels = {grid.channels[a]};
                if (n_conv == 2) s.conv_channels.push_back(grid.channels[b]);
                s.pool = pool;
                if (fc == 2) s.hidden_fc = {kDefaultHiddenUnits};
                push(std::move(s));
              }
            }
    return out;
  }
  if (extractors.empty())
    throw ArchError("family " + std::string(family_name(family)) +
                    " needs at least one feature extractor");
  for (const auto& e : extractors) {
    for (int w : grid.windows) {
      if (family == Family::kMajorityVoting) {
        ModelSpec s = e;
        s.family = family;
        s.window = w;
        s.temporal_units = 0;
        push(std::move(s));
        continue;
      }
      for (int u : grid.units) {
        ModelSpec s;
        s.family = family;
        s.window = w;
        s.conv_channels = e.conv_channels;
        s.pool = e.pool;
        s.classes = e.classes;
        if (family == Family::kConcat)
          s.hidden_fc = {u};
        else
          s.temporal_units = u;
        push(std::move(s));
      }
    }
  }
  return out;
}

}  // namespace ircount

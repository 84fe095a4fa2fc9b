// SPDX-License-Identifier: Apache-2.0
//
// Architecture strings: `<family>:w<W>:<tokens>`, tokens joined by '-':
//   C<n>       3x3 conv + BN + ReLU with n output channels (1 or 2 of them)
//   P          2x2 max pool, only directly after the first conv
//   Cat        frame-feature concatenation (cat family)
//   L<h>       LSTM cell with h hidden units (lstm family)
//   T<c>       causal 1D conv with c channels, also spelled TCN<c> (tcn family)
//   FC<n>      hidden fully connected + ReLU; bare FC before the last token
//              means FC64
//   FC         terminal output layer with K units
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ircount {

enum class Family { kSingleFrame, kMultiChannel, kMajorityVoting, kConcat, kLstm, kTcn };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);
const std::vector<Family>& all_families();

/// True for families whose first stage is a per-frame feature extractor.
bool uses_frame_extractor(Family f);

inline constexpr int kFrameSize = 8;
inline constexpr int kDefaultClasses = 4;
inline constexpr int kDefaultHiddenUnits = 64;

struct ModelSpec {
  Family family = Family::kSingleFrame;
  int window = 1;
  std::vector<int> conv_channels;  // one or two conv blocks
  bool pool = false;               // max pool after the first conv block
  int temporal_units = 0;          // LSTM hidden size or TCN channels
  std::vector<int> hidden_fc;      // at most one hidden FC
  int classes = kDefaultClasses;

  /// Canonical architecture string.
  std::string str() const;
  /// Conv/pool prefix, e.g. "C8-P-C16".
  std::string extractor_str() const;

  /// Input channels seen by the first conv (W for mc, 1 otherwise).
  int input_channels() const;
  /// Spatial side after each conv block (after pooling when present).
  std::vector<int> block_sides() const;
  /// Flattened size of one extractor output.
  int feature_size() const;
  /// Flattened size entering the dense head.
  int head_input_size() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Parses and validates; throws ArchError naming the offending token.
ModelSpec parse_arch(std::string_view text);

/// Re-runs every validation rule on an already-built spec.
void validate(const ModelSpec& spec);

struct GridOptions {
  std::vector<int> channels{8, 16, 32, 64};
  std::vector<int> windows{3, 5, 7, 9};
  std::vector<int> units{8, 16, 32, 64};  // cat hidden FC, LSTM hidden, TCN channels
  // sf/mc only: two-conv variants must pool (48 instead of 80 sf specs).
  bool two_conv_requires_pool = false;
};

/// Hyper-parameter grid of one family. sf/mc: 1 or 2 convs with independent
/// channels, optional pool, with or without an FC64 hidden layer (mc crossed
/// with every window). mv: every `extractors` model crossed with every window.
/// cat/lstm/tcn: every extractor prefix x window x unit count.
std::vector<ModelSpec> enumerate_family(Family family, const std::vector<ModelSpec>& extractors = {},
                                        const GridOptions& grid = {});

}  // namespace ircount

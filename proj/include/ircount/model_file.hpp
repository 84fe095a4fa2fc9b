// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary model container.
//
//   "IRCM" | u32 version | str spec | u8 precision | provenance | norm | info
//   float: u8 bn_folded | u32 n | n x (str name | u8 rank | u32 dims | f32 data)
//   int8:  qparams input | u32 layers | per layer: u8 kind | shape | i8 weights
//          | i32 biases | qparams in/w/out | i32 mult | i32 shift | u8 relu
// Integers and floats are little-endian; str is u32 length + UTF-8 bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "ircount/cost_model.hpp"
#include "ircount/dataset.hpp"
#include "ircount/network.hpp"
#include "ircount/quantizer.hpp"

namespace ircount {

inline constexpr std::uint32_t kModelFileVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  int fold = 0;  // test session, 0 when not trained on a fold
  std::string config_digest;
  std::string config;  // canonical training configuration

  bool operator==(const Provenance&) const = default;
};

struct ModelFile {
  ModelSpec spec;
  Precision precision = Precision::kFloat;
  Provenance provenance;
  Normalization norm;
  std::map<std::string, std::string> info;  // free-form, e.g. metrics at train time
  std::optional<Model<float>> float_model;
  std::optional<QuantModel> int_model;
};

std::string serialize_model(const ModelFile& file);
ModelFile deserialize_model(std::string_view bytes);
void save_model_file(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model_file(const std::filesystem::path& path);

/// Hex digest of a configuration string (FNV-1a 64).
std::string config_digest(std::string_view config);

/// Counts for raw (unnormalized) windows using whichever model the file holds.
int predict_count(const ModelFile& file, const Window<float>& raw_window);

/// Counts for already-normalized windows.
std::vector<int> predict_counts(const ModelFile& file, const std::vector<Window<float>>& windows);

}  // namespace ircount

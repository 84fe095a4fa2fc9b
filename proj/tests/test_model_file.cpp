// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <map>

#include "ircount/error.hpp"
#include "ircount/model_file.hpp"
#include "random_models.hpp"

using namespace ircount;
using namespace ircount::testing;
namespace fs = std::filesystem;

namespace {

ModelFile float_file(const Model<float>& m) {
  ModelFile f;
  f.spec = m.spec();
  f.precision = Precision::kFloat;
  f.provenance = {42, 3, config_digest("cfg"), "cfg"};
  f.norm = {22.5, 1.25};
  f.info = {{"bal_acc", "0.81"}, {"note", "unit test"}};
  f.float_model = m;
  return f;
}

std::map<std::string, std::vector<float>> tensors(const Model<float>& m) {
  std::map<std::string, std::vector<float>> out;
  auto p = m.params();
  p.for_each_tensor([&](const std::string& name, Tensor& t) { out[name].assign(t.values().begin(), t.values().end()); });
  return out;
}

}  // namespace

TEST_CASE("float models round-trip exactly") {
  Rng rng(11);
  for (int i = 0; i < 60; ++i) {
    Model<float> m = random_model(rng, false);
    randomize_bn(m, rng);
    if (i % 2) m = fold_batchnorm(m);
    CAPTURE(m.spec().str());
    const ModelFile f = float_file(m);
    const std::string bytes = serialize_model(f);
    const ModelFile g = deserialize_model(bytes);
    CHECK(g.spec == f.spec);
    CHECK(g.precision == Precision::kFloat);
    CHECK(g.provenance == f.provenance);
    CHECK(g.norm.mean == f.norm.mean);
    CHECK(g.norm.std == f.norm.std);
    CHECK(g.info == f.info);
    REQUIRE(g.float_model);
    CHECK(g.float_model->bn_folded() == m.bn_folded());
    CHECK(tensors(*g.float_model) == tensors(m));
    CHECK(serialize_model(g) == bytes);
    const auto units = random_units(m, rng, 3);
    const auto a = m.unit_logits(units), b = g.float_model->unit_logits(units);
    for (std::size_t u = 0; u < a.size(); ++u)
      for (std::size_t k = 0; k < a[u].size(); ++k) CHECK(a[u][k] == b[u][k]);
  }
}

TEST_CASE("int8 models round-trip bit-exactly") {
  Rng rng(12);
  for (int i = 0; i < 40; ++i) {
    Model<float> m = random_model(rng, true);
    randomize_bn(m, rng);
    const QuantModel qm = export_int8(calibrate(m, random_units(m, rng, 32), 16, std::uint64_t(i)));
    ModelFile f;
    f.spec = m.spec();
    f.precision = Precision::kInt8;
    f.provenance = {7, 0, config_digest("q"), "q"};
    f.int_model = qm;
    const std::string bytes = serialize_model(f);
    const ModelFile g = deserialize_model(bytes);
    REQUIRE(g.int_model);
    CHECK(*g.int_model == qm);
    CHECK(!g.float_model);
    CHECK(serialize_model(g) == bytes);
  }
}

TEST_CASE("malformed containers are rejected") {
  const ModelFile f = float_file(build_model(parse_arch("sf:w1:C8-P-FC"), 1));
  const std::string bytes = serialize_model(f);
  REQUIRE(bytes.substr(0, 4) == "IRCM");

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad), FormatError);
  std::string version = bytes;
  version[4] = char(kModelFileVersion + 1);
  CHECK_THROWS_AS(deserialize_model(version), FormatError);
  CHECK_THROWS_AS(deserialize_model(bytes + '\0'), FormatError);
  CHECK_THROWS_AS(deserialize_model(""), FormatError);
  for (std::size_t n = 0; n < bytes.size(); n += 1 + bytes.size() / 97)
    CHECK_THROWS_AS(deserialize_model(std::string_view(bytes).substr(0, n)), FormatError);
}

TEST_CASE("files on disk and prediction") {
  const fs::path p = fs::temp_directory_path() / "ircount_test_model.ircm";
  Model<float> m = build_model(parse_arch("mv:w3:C8-P-FC"), 5);
  const ModelFile f = float_file(m);
  save_model_file(p, f);
  const ModelFile g = load_model_file(p);
  CHECK(serialize_model(g) == serialize_model(f));
  save_model_file(p, g);
  const ModelFile h = load_model_file(p);
  CHECK(serialize_model(h) == serialize_model(f));
  fs::remove(p);
  CHECK_THROWS(load_model_file(p));

  // predict_count normalizes raw frames with the stored statistics.
  Rng rng(14);
  Window<float> raw = random_window(3, rng);
  for (auto& t : raw)
    for (auto& v : t.values()) v = float(v * f.norm.std + f.norm.mean);
  Window<float> norm = raw;
  for (auto& t : norm)
    for (auto& v : t.values()) v = f.norm.apply(v);
  const int c = predict_count(f, raw);
  CHECK(c == predict_counts(f, {norm}).front());
  CHECK(c == m.predict(norm).count);
}

TEST_CASE("config digests") {
  CHECK(config_digest("abc") == config_digest("abc"));
  CHECK(config_digest("abc") != config_digest("abd"));
  CHECK(config_digest("").size() == 16);
  // FNV-1a 64 of the empty string is the offset basis.
  CHECK(config_digest("") == "cbf29ce484222325");
  CHECK(config_digest("a") == "af63dc4c8601ec8c");
}

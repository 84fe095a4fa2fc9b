// SPDX-License-Identifier: Apache-2.0
#include "ircount/model_file.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ircount/error.hpp"
#include "ircount/rng.hpp"

namespace ircount {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(char(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(std::uint8_t(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(std::uint32_t(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(std::uint32_t(s.size()));
    buf_.append(s);
  }
  void shape(const Shape& s) {
    u8(std::uint8_t(s.rank()));
    for (std::size_t i = 0; i < s.rank(); ++i) u32(std::uint32_t(s[i]));
  }
  void qparams(const QuantParams& q) {
    f64(q.scale);
    i32(q.zero_point);
    i32(q.qmin);
    i32(q.qmax);
  }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return std::uint8_t(b_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return std::int32_t(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Shape shape() {
    const int rank = u8();
    std::size_t d[3] = {0, 0, 0};
    if (rank < 1 || rank > 3) throw FormatError("model file: bad tensor rank");
    for (int i = 0; i < rank; ++i) {
      d[i] = u32();
      if (d[i] == 0 || d[i] > (1u << 20)) throw FormatError("model file: bad tensor extent");
    }
    if (rank == 1) return Shape{d[0]};
    if (rank == 2) return Shape{d[0], d[1]};
    return Shape{d[0], d[1], d[2]};
  }
  QuantParams qparams() {
    QuantParams q;
    q.scale = f64();
    q.zero_point = i32();
    q.qmin = i32();
    q.qmax = i32();
    if (!(q.scale > 0) || q.qmin > q.qmax || q.zero_point < q.qmin || q.zero_point > q.qmax)
      throw FormatError("model file: invalid quantization parameters");
    return q;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("model file: truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'I', 'R', 'C', 'M'};

}  // namespace

std::string config_digest(std::string_view config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config)));
  return buf;
}

std::string serialize_model(const ModelFile& f) {
  Writer w;
  for (char c : kMagic) w.u8(std::uint8_t(c));
  w.u32(kModelFileVersion);
  w.str(f.spec.str());
  w.u8(f.precision == Precision::kInt8 ? 1 : 0);
  w.u64(f.provenance.seed);
  w.i32(f.provenance.fold);
  w.str(f.provenance.config_digest);
  w.str(f.provenance.config);
  w.f64(f.norm.mean);
  w.f64(f.norm.std);
  w.u32(std::uint32_t(f.info.size()));
  for (const auto& [k, v] : f.info) {
    w.str(k);
    w.str(v);
  }
  if (f.precision == Precision::kFloat) {
    if (!f.float_model) throw FormatError("float model file without a float model");
    const auto& m = *f.float_model;
    w.u8(m.bn_folded() ? 1 : 0);
    auto params = m.params();
    std::uint32_t n = 0;
    params.for_each_tensor([&](const std::string&, BasicTensor<float>&) { ++n; });
    w.u32(n);
    params.for_each_tensor([&](const std::string& name, BasicTensor<float>& t) {
      w.str(name);
      w.shape(t.shape());
      for (float v : t.values()) w.f32(v);
    });
  } else {
    if (!f.int_model) throw FormatError("int8 model file without an int8 model");
    const auto& q = *f.int_model;
    w.qparams(q.input);
    std::vector<const QLayer*> layers;
    for (const auto& l : q.conv) layers.push_back(&l);
    if (q.tcn) layers.push_back(&*q.tcn);
    for (const auto& l : q.dense) layers.push_back(&l);
    w.u32(std::uint32_t(layers.size()));
    for (const QLayer* l : layers) {
      w.u8(std::uint8_t(l->kind));
      w.shape(l->weight_shape);
      for (std::int8_t v : l->weight) w.u8(std::uint8_t(v));
      w.u32(std::uint32_t(l->bias.size()));
      for (std::int32_t v : l->bias) w.i32(v);
      w.qparams(l->in);
      w.qparams(l->w);
      w.qparams(l->out);
      w.i32(l->requant.mult);
      w.i32(l->requant.shift);
      w.u8(l->relu ? 1 : 0);
    }
  }
  return w.take();
}

ModelFile deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  for (char c : kMagic)
    if (r.u8() != std::uint8_t(c)) throw FormatError("not a model file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kModelFileVersion)
    throw FormatError("unsupported model file version " + std::to_string(version));
  ModelFile f;
  try {
    f.spec = parse_arch(r.str());
  } catch (const ArchError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  const std::uint8_t prec = r.u8();
  if (prec > 1) throw FormatError("model file: unknown precision");
  f.precision = prec ? Precision::kInt8 : Precision::kFloat;
  f.provenance.seed = r.u64();
  f.provenance.fold = r.i32();
  f.provenance.config_digest = r.str();
  f.provenance.config = r.str();
  f.norm.mean = r.f64();
  f.norm.std = r.f64();
  const std::uint32_t n_info = r.u32();
  for (std::uint32_t i = 0; i < n_info; ++i) {
    std::string k = r.str();
    f.info[k] = r.str();
  }
  if (f.precision == Precision::kFloat) {
    const bool folded = r.u8() != 0;
    Model<float> m = build_model(f.spec, f.provenance.seed);
    if (folded) m = fold_batchnorm(m);
    std::vector<std::pair<std::string, BasicTensor<float>*>> slots;
    m.params().for_each_tensor(
        [&](const std::string& name, BasicTensor<float>& t) { slots.emplace_back(name, &t); });
    const std::uint32_t n = r.u32();
    if (n != slots.size()) throw FormatError("model file: tensor count does not match the spec");
    for (auto& [name, t] : slots) {
      if (r.str() != name) throw FormatError("model file: unexpected tensor, wanted " + name);
      if (!(r.shape() == t->shape())) throw FormatError("model file: shape mismatch for " + name);
      for (auto& v : t->values()) v = r.f32();
    }
    f.float_model = std::move(m);
  } else {
    if (!quantizable(f.spec.family)) throw FormatError("model file: int8 LSTM model");
    QuantModel q;
    q.spec = f.spec;
    q.input = r.qparams();
    const std::uint32_t n = r.u32();
    const std::size_t expect = f.spec.conv_channels.size() + (f.spec.family == Family::kTcn ? 1 : 0) +
                               f.spec.hidden_fc.size() + 1;
    if (n != expect) throw FormatError("model file: layer count does not match the spec");
    for (std::uint32_t i = 0; i < n; ++i) {
      QLayer l;
      const std::uint8_t kind = r.u8();
      if (kind > 2) throw FormatError("model file: unknown layer kind");
      l.kind = QLayerKind(kind);
      l.weight_shape = r.shape();
      l.weight.resize(l.weight_shape.size());
      for (auto& v : l.weight) v = std::int8_t(r.u8());
      const std::uint32_t nb = r.u32();
      if (nb != l.weight_shape[l.weight_shape.rank() - 1]) throw FormatError("model file: bias size");
      l.bias.resize(nb);
      for (auto& v : l.bias) v = r.i32();
      l.in = r.qparams();
      l.w = r.qparams();
      l.out = r.qparams();
      l.requant.mult = r.i32();
      l.requant.shift = r.i32();
      l.relu = r.u8() != 0;
      if (l.kind == QLayerKind::kConv2d) q.conv.push_back(std::move(l));
      else if (l.kind == QLayerKind::kConv1d) q.tcn = std::move(l);
      else q.dense.push_back(std::move(l));
    }
    f.int_model = std::move(q);
  }
  if (!r.done()) throw FormatError("model file: trailing bytes");
  return f;
}

void save_model_file(const std::filesystem::path& path, const ModelFile& file) {
  const std::string bytes = serialize_model(file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

ModelFile load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

std::vector<int> predict_counts(const ModelFile& file, const std::vector<Window<float>>& windows) {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    if (file.int_model)
      out.push_back(int_forward(*file.int_model, quantize_window(w, file.int_model->input)).count);
    else
      out.push_back(file.float_model->predict(w).count);
  }
  return out;
}

int predict_count(const ModelFile& file, const Window<float>& raw_window) {
  Window<float> w = raw_window;
  for (auto& f : w)
    for (auto& v : f.values()) v = file.norm.apply(v);
  return predict_counts(file, {w}).front();
}

}  // namespace ircount

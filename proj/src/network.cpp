// SPDX-License-Identifier: Apache-2.0
#include "ircount/network.hpp"

#include <algorithm>
#include <cmath>

#include "ircount/error.hpp"
#include "ircount/rng.hpp"

namespace ircount {

template <typename T>
struct BlockTape {
  std::vector<BasicTensor<T>> input;
  std::vector<BasicTensor<T>> act;  // post-ReLU, before fake quant and pooling
  nn::BatchNormCache<T> bn;
  std::vector<std::vector<std::uint8_t>> fq_mask;
  std::vector<std::vector<std::uint32_t>> argmax;
  Shape pre_pool_shape;
  Shape out_shape;
};

template <typename T>
struct Tape {
  NetworkParams<T> effective;  // weights as used in the forward pass
  std::vector<BlockTape<T>> blocks;
  std::size_t images_per_unit = 1;
  // Temporal stage, per unit.
  std::vector<std::vector<nn::LstmStepCache<T>>> lstm;
  std::vector<BasicTensor<T>> tcn_in, tcn_out;
  std::vector<std::vector<std::uint8_t>> tcn_mask;
  // Dense head, [layer][unit].
  std::vector<std::vector<BasicTensor<T>>> dense_in, dense_out;
  std::vector<std::vector<std::vector<std::uint8_t>>> dense_mask;
};

namespace {

template <typename T>
void fake_quant_weights(NetworkParams<T>& p) {
  for (auto& b : p.blocks) fake_quant_inplace(b.conv.kernel, weight_qparams(b.conv.kernel));
  if (p.tcn) fake_quant_inplace(p.tcn->kernel, weight_qparams(p.tcn->kernel));
  for (auto& d : p.dense) fake_quant_inplace(d.weight, weight_qparams(d.weight));
}

template <typename T>
void observe_batch(RangeObserver& obs, const std::vector<BasicTensor<T>>& xs) {
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& x : xs)
    for (const T v : x.values()) {
      if (first) {
        lo = hi = double(v);
        first = false;
      }
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
  if (!first) obs.observe(lo, hi);
}

/// Observer update (train) and fake quantization of a whole batch point.
template <typename T>
void quant_point(RangeObserver& obs, std::vector<BasicTensor<T>>& xs, bool observe,
                 std::vector<std::vector<std::uint8_t>>* masks) {
  if (observe || !obs.initialized) observe_batch(obs, xs);
  const QuantParams qp = obs.params();
  if (masks) masks->resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    fake_quant_inplace(xs[i], qp, masks ? &(*masks)[i] : nullptr);
}

template <typename T>
void apply_mask(BasicTensor<T>& g, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!mask[i]) g[i] = T(0);
}

template <typename T, typename U>
BasicTensor<U> cast_tensor(const BasicTensor<T>& t) {
  return t.empty() ? BasicTensor<U>() : t.template cast<U>();
}

}  // namespace

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
  NetworkParams<U> out;
  for (const auto& b : blocks) {
    ConvBlock<U> cb;
    cb.conv.kernel = cast_tensor<T, U>(b.conv.kernel);
    cb.conv.bias = cast_tensor<T, U>(b.conv.bias);
    if (b.bn) {
      nn::BatchNormParams<U> bn;
      bn.gamma = cast_tensor<T, U>(b.bn->gamma);
      bn.beta = cast_tensor<T, U>(b.bn->beta);
      bn.running_mean = cast_tensor<T, U>(b.bn->running_mean);
      bn.running_var = cast_tensor<T, U>(b.bn->running_var);
      bn.epsilon = U(b.bn->epsilon);
      bn.momentum = U(b.bn->momentum);
      cb.bn = std::move(bn);
    }
    out.blocks.push_back(std::move(cb));
  }
  if (lstm) {
    nn::LstmParams<U> l;
    l.w_input = cast_tensor<T, U>(lstm->w_input);
    l.w_recurrent = cast_tensor<T, U>(lstm->w_recurrent);
    l.bias = cast_tensor<T, U>(lstm->bias);
    out.lstm = std::move(l);
  }
  if (tcn) {
    nn::Conv1dParams<U> c;
    c.kernel = cast_tensor<T, U>(tcn->kernel);
    c.bias = cast_tensor<T, U>(tcn->bias);
    out.tcn = std::move(c);
  }
  for (const auto& d : dense) {
    nn::DenseParams<U> e;
    e.weight = cast_tensor<T, U>(d.weight);
    e.bias = cast_tensor<T, U>(d.bias);
    out.dense.push_back(std::move(e));
  }
  return out;
}

template <typename T>
Model<T>::Model(ModelSpec spec, NetworkParams<T> params, std::uint64_t seed)
    : spec_(std::move(spec)), params_(std::move(params)), seed_(seed) {
  quant_.blocks.resize(params_.blocks.size());
  quant_.dense.resize(params_.dense.size());
}

template <typename T>
bool Model<T>::bn_folded() const {
  return std::none_of(params_.blocks.begin(), params_.blocks.end(),
                      [](const ConvBlock<T>& b) { return b.bn.has_value(); });
}

template <typename T>
std::size_t Model<T>::unit_frames() const {
  if (spec_.family == Family::kMajorityVoting) return 1;
  return static_cast<std::size_t>(spec_.window);
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m(spec_, params_.template cast<U>(), seed_);
  m.quant() = quant_;
  return m;
}

template <typename T>
std::vector<BasicTensor<T>> Model<T>::forward(std::span<const Window<T>> units, Mode mode,
                                              Tape<T>* tape, bool update_stats) {
  const bool train = mode == Mode::kTrain;
  const bool observe = train && update_stats;
  const bool quant = quant_.enabled;
  if (quant && !bn_folded())
    throw Error("quantization-aware forward requires folded batch norm");
  if (quant) {
    quant_.blocks.resize(params_.blocks.size());
    quant_.dense.resize(params_.dense.size());
  }

  NetworkParams<T> eff_storage;
  const NetworkParams<T>* eff = &params_;
  if (quant) {
    eff_storage = params_;
    fake_quant_weights(eff_storage);
    eff = &eff_storage;
  }

  const std::size_t frames = unit_frames();
  const std::size_t per_unit = uses_frame_extractor(spec_.family) ? frames : 1;
  const std::size_t n_units = units.size();

  // Network inputs.
  std::vector<BasicTensor<T>> x;
  x.reserve(n_units * per_unit);
  for (const auto& unit : units) {
    if (unit.size() != frames)
      throw ShapeError("window has " + std::to_string(unit.size()) + " frames, model expects " +
                       std::to_string(frames));
    for (const auto& f : unit)
      if (f.size() != std::size_t(kFrameSize * kFrameSize))
        throw ShapeError("frames must be 8x8, got " + f.shape().str());
    if (spec_.family == Family::kMultiChannel) {
      const std::size_t w = frames;
      BasicTensor<T> stacked(Shape{kFrameSize, kFrameSize, w});
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t p = 0; p < std::size_t(kFrameSize * kFrameSize); ++p)
          stacked[p * w + k] = unit[k][p];
      x.push_back(std::move(stacked));
    } else {
      for (const auto& f : unit) x.push_back(f.reshaped(Shape{kFrameSize, kFrameSize, 1}));
    }
  }
  if (quant) quant_point(quant_.input, x, observe, nullptr);

  if (tape) {
    tape->effective = *eff;
    tape->blocks.assign(params_.blocks.size(), BlockTape<T>{});
    tape->images_per_unit = per_unit;
  }

  // Feature extractor, batched over every image so BN sees the whole batch.
  for (std::size_t b = 0; b < params_.blocks.size(); ++b) {
    BlockTape<T>* bt = tape ? &tape->blocks[b] : nullptr;
    if (bt) bt->input = x;
    std::vector<BasicTensor<T>> y;
    y.reserve(x.size());
    for (const auto& xi : x) y.push_back(nn::conv2d3x3(xi, eff->blocks[b].conv));
    if (auto& bn = params_.blocks[b].bn) {
      if (train) {
        nn::BatchNormCache<T> local;
        y = nn::batchnorm_train<T>(y, *bn, bt ? bt->bn : local, update_stats);
      } else {
        for (auto& yi : y) yi = nn::batchnorm_infer(yi, *bn);
      }
    }
    for (auto& yi : y) nn::relu_inplace(yi);
    if (bt) bt->act = y;
    if (quant) quant_point(quant_.blocks[b], y, observe, bt ? &bt->fq_mask : nullptr);
    if (b == 0 && spec_.pool) {
      if (bt) {
        bt->pre_pool_shape = y.front().shape();
        bt->argmax.resize(y.size());
      }
      for (std::size_t i = 0; i < y.size(); ++i) {
        auto r = nn::maxpool2x2(y[i]);
        if (bt) bt->argmax[i] = std::move(r.argmax);
        y[i] = std::move(r.out);
      }
    }
    if (bt) bt->out_shape = y.front().shape();
    x = std::move(y);
  }

  // Temporal aggregation into one head input per unit.
  const std::size_t feat = static_cast<std::size_t>(spec_.feature_size());
  std::vector<BasicTensor<T>> h(n_units);
  switch (spec_.family) {
    case Family::kSingleFrame:
    case Family::kMultiChannel:
    case Family::kMajorityVoting:
      for (std::size_t u = 0; u < n_units; ++u) h[u] = x[u].reshaped(Shape{feat});
      break;
    case Family::kConcat:
      for (std::size_t u = 0; u < n_units; ++u) {
        std::vector<T> cat;
        cat.reserve(per_unit * feat);
        for (std::size_t k = 0; k < per_unit; ++k) {
          const auto& v = x[u * per_unit + k].vec();
          cat.insert(cat.end(), v.begin(), v.end());
        }
        h[u] = BasicTensor<T>(Shape{per_unit * feat}, std::move(cat));
      }
      break;
    case Family::kLstm: {
      const std::size_t hs = eff->lstm->hidden();
      if (tape) tape->lstm.assign(n_units, {});
      for (std::size_t u = 0; u < n_units; ++u) {
        nn::LstmState<T> s{BasicTensor<T>(Shape{hs}), BasicTensor<T>(Shape{hs})};
        if (tape) tape->lstm[u].resize(per_unit);
        for (std::size_t k = 0; k < per_unit; ++k) {
          s = nn::lstm_cell_step(x[u * per_unit + k].reshaped(Shape{feat}), s.h, s.c, *eff->lstm,
                                 tape ? &tape->lstm[u][k] : nullptr);
        }
        h[u] = std::move(s.h);
      }
      break;
    }
    case Family::kTcn: {
      std::vector<BasicTensor<T>> seqs(n_units), outs(n_units);
      for (std::size_t u = 0; u < n_units; ++u) {
        std::vector<T> seq;
        seq.reserve(per_unit * feat);
        for (std::size_t k = 0; k < per_unit; ++k) {
          const auto& v = x[u * per_unit + k].vec();
          seq.insert(seq.end(), v.begin(), v.end());
        }
        seqs[u] = BasicTensor<T>(Shape{per_unit, feat}, std::move(seq));
        outs[u] = nn::causal_conv1d(seqs[u], *eff->tcn);
      }
      if (tape) {
        tape->tcn_in = seqs;
        tape->tcn_out = outs;
      }
      if (quant) quant_point(quant_.temporal, outs, observe, tape ? &tape->tcn_mask : nullptr);
      for (std::size_t u = 0; u < n_units; ++u) h[u] = outs[u].reshaped(Shape{outs[u].size()});
      break;
    }
  }

  // Dense head.
  const std::size_t n_dense = eff->dense.size();
  if (tape) {
    tape->dense_in.assign(n_dense, {});
    tape->dense_out.assign(n_dense, {});
    tape->dense_mask.assign(n_dense, {});
  }
  for (std::size_t d = 0; d < n_dense; ++d) {
    const auto act = d + 1 < n_dense ? nn::Activation::kRelu : nn::Activation::kNone;
    std::vector<BasicTensor<T>> out(n_units);
    for (std::size_t u = 0; u < n_units; ++u) out[u] = nn::fully_connected(h[u], eff->dense[d], act);
    if (tape) {
      tape->dense_in[d] = h;
      tape->dense_out[d] = out;
    }
    if (quant) quant_point(quant_.dense[d], out, observe, tape ? &tape->dense_mask[d] : nullptr);
    h = std::move(out);
  }
  return h;
}

template <typename T>
void Model<T>::backward(Tape<T>& tape, std::vector<BasicTensor<T>> g,
                        NetworkParams<T>& grads) const {
  const bool quant = quant_.enabled;
  const NetworkParams<T>& eff = tape.effective;
  const std::size_t n_units = g.size();
  const std::size_t n_dense = eff.dense.size();
  for (std::size_t d = n_dense; d-- > 0;) {
    const auto act = d + 1 < n_dense ? nn::Activation::kRelu : nn::Activation::kNone;
    for (std::size_t u = 0; u < n_units; ++u) {
      if (quant) apply_mask(g[u], tape.dense_mask[d][u]);
      g[u] = nn::fully_connected_backward(tape.dense_in[d][u], eff.dense[d], tape.dense_out[d][u],
                                          std::move(g[u]), act, grads.dense[d]);
    }
  }

  const std::size_t per_unit = tape.images_per_unit;
  const std::size_t feat = static_cast<std::size_t>(spec_.feature_size());
  std::vector<BasicTensor<T>> gf(n_units * per_unit);
  switch (spec_.family) {
    case Family::kSingleFrame:
    case Family::kMultiChannel:
    case Family::kMajorityVoting:
      for (std::size_t u = 0; u < n_units; ++u) gf[u] = std::move(g[u]);
      break;
    case Family::kConcat:
      for (std::size_t u = 0; u < n_units; ++u)
        for (std::size_t k = 0; k < per_unit; ++k) {
          std::vector<T> part(g[u].vec().begin() + std::ptrdiff_t(k * feat),
                              g[u].vec().begin() + std::ptrdiff_t((k + 1) * feat));
          gf[u * per_unit + k] = BasicTensor<T>(Shape{feat}, std::move(part));
        }
      break;
    case Family::kLstm: {
      const std::size_t hs = eff.lstm->hidden();
      for (std::size_t u = 0; u < n_units; ++u) {
        BasicTensor<T> dh = g[u], dc(Shape{hs});
        for (std::size_t k = per_unit; k-- > 0;) {
          auto r = nn::lstm_cell_step_backward(tape.lstm[u][k], *eff.lstm, dh, dc, *grads.lstm);
          gf[u * per_unit + k] = std::move(r.dx);
          dh = std::move(r.dh_prev);
          dc = std::move(r.dc_prev);
        }
      }
      break;
    }
    case Family::kTcn:
      for (std::size_t u = 0; u < n_units; ++u) {
        BasicTensor<T> go = g[u].reshaped(tape.tcn_out[u].shape());
        if (quant) apply_mask(go, tape.tcn_mask[u]);
        auto gs = nn::causal_conv1d_backward(tape.tcn_in[u], *eff.tcn, tape.tcn_out[u],
                                             std::move(go), *grads.tcn);
        for (std::size_t k = 0; k < per_unit; ++k) {
          std::vector<T> part(gs.vec().begin() + std::ptrdiff_t(k * feat),
                              gs.vec().begin() + std::ptrdiff_t((k + 1) * feat));
          gf[u * per_unit + k] = BasicTensor<T>(Shape{feat}, std::move(part));
        }
      }
      break;
  }

  for (std::size_t b = params_.blocks.size(); b-- > 0;) {
    BlockTape<T>& bt = tape.blocks[b];
    for (std::size_t i = 0; i < gf.size(); ++i) {
      gf[i] = gf[i].reshaped(bt.out_shape);
      if (b == 0 && spec_.pool) gf[i] = nn::maxpool2x2_backward<T>(bt.pre_pool_shape, bt.argmax[i], gf[i]);
      if (quant) apply_mask(gf[i], bt.fq_mask[i]);
      nn::relu_backward_inplace(bt.act[i], gf[i]);
    }
    if (const auto& bn = params_.blocks[b].bn)
      gf = nn::batchnorm_train_backward<T>(bt.bn, *bn, gf, *grads.blocks[b].bn);
    for (std::size_t i = 0; i < gf.size(); ++i)
      gf[i] = nn::conv2d3x3_backward(bt.input[i], eff.blocks[b].conv, gf[i], grads.blocks[b].conv);
  }
}

template <typename T>
std::vector<BasicTensor<T>> Model<T>::unit_logits(std::span<const Window<T>> units) const {
  // Infer mode touches no state.
  return const_cast<Model*>(this)->forward(units, Mode::kInfer, nullptr, false);
}

template <typename T>
T Model<T>::loss_and_grad(std::span<const Window<T>> units, std::span<const int> labels,
                          std::span<const T> class_weights, NetworkParams<T>* grads,
                          bool update_stats) {
  if (labels.size() != units.size()) throw ShapeError("one label per unit required");
  if (units.empty()) throw ShapeError("empty batch");
  Tape<T> tape;
  auto logits = forward(units, Mode::kTrain, grads ? &tape : nullptr, update_stats);
  const T inv_n = T(1) / T(units.size());
  T loss = T(0);
  std::vector<BasicTensor<T>> g(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto r = nn::weighted_softmax_xent<T>(logits[u], labels[u], class_weights);
    loss += r.loss;
    for (auto& v : r.grad.values()) v *= inv_n;
    g[u] = std::move(r.grad);
  }
  if (grads) backward(tape, std::move(g), *grads);
  return loss * inv_n;
}

template <typename T>
void Model<T>::observe(std::span<const Window<T>> units) {
  if (!bn_folded()) throw Error("calibration requires folded batch norm");
  if (units.empty()) throw Error("empty calibration batch");
  forward(units, Mode::kTrain, nullptr, true);
}

template <typename T>
Prediction Model<T>::predict(const Window<T>& window) const {
  if (window.size() != static_cast<std::size_t>(spec_.window))
    throw ShapeError("window has " + std::to_string(window.size()) + " frames, model expects W=" +
                     std::to_string(spec_.window));
  Prediction p;
  if (spec_.family == Family::kMajorityVoting) {
    std::vector<Window<T>> units;
    for (const auto& f : window) units.push_back(Window<T>{f});
    const auto logits = unit_logits(units);
    std::vector<std::vector<double>> probs;
    p.probabilities.assign(std::size_t(spec_.classes), 0.0);
    for (const auto& l : logits) {
      const auto s = nn::softmax(l);
      probs.emplace_back(s.vec().begin(), s.vec().end());
      for (std::size_t k = 0; k < s.size(); ++k) p.probabilities[k] += double(s[k]) / double(logits.size());
    }
    p.count = majority_vote(probs, &p.votes);
    return p;
  }
  const std::vector<Window<T>> units{window};
  const auto logits = unit_logits(units);
  const auto s = nn::softmax(logits[0]);
  p.probabilities.assign(s.vec().begin(), s.vec().end());
  p.count = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                             p.probabilities.begin());
  return p;
}

int majority_vote(const std::vector<std::vector<double>>& frame_probs, std::vector<int>* votes) {
  if (frame_probs.empty()) throw ShapeError("majority vote over an empty window");
  const std::size_t k = frame_probs.front().size();
  std::vector<int> count(k, 0);
  std::vector<double> mass(k, 0.0);
  std::vector<int> local;
  for (const auto& p : frame_probs) {
    const int v = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    local.push_back(v);
    ++count[std::size_t(v)];
    for (std::size_t c = 0; c < k; ++c) mass[c] += p[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (count[c] > count[best] || (count[c] == count[best] && mass[c] > mass[best])) best = c;
  }
  if (votes) *votes = std::move(local);
  return static_cast<int>(best);
}

Model<float> build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  auto he_normal = [&](BasicTensor<float>& t, double fan_in) {
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values()) v = float(sd * rng.normal());
  };
  auto xavier_uniform = [&](BasicTensor<float>& t, double fan_in, double fan_out) {
    const double lim = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.values()) v = float(rng.uniform(-lim, lim));
  };

  NetworkParams<float> p;
  std::size_t cin = static_cast<std::size_t>(spec.input_channels());
  for (int c : spec.conv_channels) {
    ConvBlock<float> b;
    b.conv = nn::Conv2dParams<float>(cin, std::size_t(c));
    he_normal(b.conv.kernel, 9.0 * double(cin));
    b.bn = nn::BatchNormParams<float>(std::size_t(c));
    p.blocks.push_back(std::move(b));
    cin = std::size_t(c);
  }
  const std::size_t feat = std::size_t(spec.feature_size());
  if (spec.family == Family::kLstm) {
    const std::size_t hs = std::size_t(spec.temporal_units);
    nn::LstmParams<float> l(feat, hs);
    xavier_uniform(l.w_input, double(feat), double(4 * hs));
    xavier_uniform(l.w_recurrent, double(hs), double(4 * hs));
    for (std::size_t k = hs; k < 2 * hs; ++k) l.bias[k] = 1.0f;
    p.lstm = std::move(l);
  }
  if (spec.family == Family::kTcn) {
    nn::Conv1dParams<float> c(feat, std::size_t(spec.temporal_units));
    he_normal(c.kernel, 3.0 * double(feat));
    p.tcn = std::move(c);
  }
  std::size_t in = std::size_t(spec.head_input_size());
  for (int hdim : spec.hidden_fc) {
    nn::DenseParams<float> d(in, std::size_t(hdim));
    he_normal(d.weight, double(in));
    p.dense.push_back(std::move(d));
    in = std::size_t(hdim);
  }
  nn::DenseParams<float> out(in, std::size_t(spec.classes));
  he_normal(out.weight, double(in));
  p.dense.push_back(std::move(out));
  return Model<float>(spec, std::move(p), seed);
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;
template NetworkParams<float> NetworkParams<float>::cast<float>() const;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

}  // namespace ircount

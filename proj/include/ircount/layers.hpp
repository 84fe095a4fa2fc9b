// SPDX-License-Identifier: Apache-2.0
//
// Forward/backward kernels for every layer of the six model families.
// Kernels are pure functions templated on the scalar type: training runs in
// float, gradient checks instantiate the same code in double.
//
// Backward functions accumulate (+=) into parameter gradients so that a
// mini-batch can be reduced by repeated calls; input gradients are returned.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ircount/tensor.hpp"

namespace ircount::nn {

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

/// 3x3 valid convolution. Kernel is stored as (9, Cin, Cout), tap index
/// di * 3 + dj.
template <typename T>
struct Conv2dParams {
  BasicTensor<T> kernel;
  BasicTensor<T> bias;

  Conv2dParams() = default;
  Conv2dParams(std::size_t cin, std::size_t cout)
      : kernel(Shape{9, cin, cout}), bias(Shape{cout}) {}
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(2); }
};

template <typename T>
struct BatchNormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  T epsilon = T(1e-3);
  T momentum = T(0.99);

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t c)
      : gamma(Shape{c}, T(1)),
        beta(Shape{c}),
        running_mean(Shape{c}),
        running_var(Shape{c}, T(1)) {}
  std::size_t channels() const { return gamma.size(); }
};

/// Fully connected layer, weight (In, Out).
template <typename T>
struct DenseParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  DenseParams() = default;
  DenseParams(std::size_t in, std::size_t out)
      : weight(Shape{in, out}), bias(Shape{out}) {}
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// LSTM cell; gate blocks of H rows in the order input, forget, cell, output.
template <typename T>
struct LstmParams {
  BasicTensor<T> w_input;      // (4H, In)
  BasicTensor<T> w_recurrent;  // (4H, H)
  BasicTensor<T> bias;         // (4H)

  LstmParams() = default;
  LstmParams(std::size_t in, std::size_t hidden)
      : w_input(Shape{4 * hidden, in}),
        w_recurrent(Shape{4 * hidden, hidden}),
        bias(Shape{4 * hidden}) {}
  std::size_t hidden() const { return w_recurrent.dim(1); }
  std::size_t input_size() const { return w_input.dim(1); }
};

/// Causal 1D convolution, kernel (3, Cin, Cout); tap 2 is the current step,
/// tap 0 reaches two steps back.
template <typename T>
struct Conv1dParams {
  BasicTensor<T> kernel;
  BasicTensor<T> bias;

  Conv1dParams() = default;
  Conv1dParams(std::size_t cin, std::size_t cout)
      : kernel(Shape{3, cin, cout}), bias(Shape{cout}) {}
  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(2); }
};

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

template <typename T>
void relu_inplace(BasicTensor<T>& x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

/// Gradient through ReLU given its output.
template <typename T>
void relu_backward_inplace(const BasicTensor<T>& out, BasicTensor<T>& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > T(0))) grad[i] = T(0);
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// conv2d 3x3, valid padding, stride 1
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d3x3(const BasicTensor<T>& in, const Conv2dParams<T>& p) {
  if (in.shape().rank() != 3) throw ShapeError("conv2d3x3 expects HxWxC");
  const std::size_t h = in.dim(0), w = in.dim(1), cin = in.dim(2);
  if (h < 3 || w < 3) throw ShapeError("conv2d3x3 needs spatial extent >= 3");
  if (cin != p.in_channels())
    throw ShapeError("conv2d3x3 input has " + std::to_string(cin) +
                     " channels, kernel expects " +
                     std::to_string(p.in_channels()));
  const std::size_t cout = p.out_channels();
  const std::size_t ho = h - 2, wo = w - 2;
  BasicTensor<T> out(Shape{ho, wo, cout});
  const T* k = p.kernel.data();
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      T* o = &out.at(i, j, 0);
      for (std::size_t oc = 0; oc < cout; ++oc) o[oc] = p.bias[oc];
      for (std::size_t di = 0; di < 3; ++di) {
        for (std::size_t dj = 0; dj < 3; ++dj) {
          const T* x = &in.at(i + di, j + dj, 0);
          const T* kt = k + (di * 3 + dj) * cin * cout;
          for (std::size_t c = 0; c < cin; ++c) {
            const T xv = x[c];
            const T* kc = kt + c * cout;
            for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += xv * kc[oc];
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates kernel/bias gradients into `grads`; returns the input gradient.
template <typename T>
BasicTensor<T> conv2d3x3_backward(const BasicTensor<T>& in,
                                  const Conv2dParams<T>& p,
                                  const BasicTensor<T>& grad_out,
                                  Conv2dParams<T>& grads) {
  const std::size_t cin = in.dim(2), cout = p.out_channels();
  const std::size_t ho = grad_out.dim(0), wo = grad_out.dim(1);
  BasicTensor<T> grad_in(in.shape());
  const T* k = p.kernel.data();
  T* gk = grads.kernel.data();
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      const T* g = &grad_out.at(i, j, 0);
      for (std::size_t oc = 0; oc < cout; ++oc) grads.bias[oc] += g[oc];
      for (std::size_t di = 0; di < 3; ++di) {
        for (std::size_t dj = 0; dj < 3; ++dj) {
          const T* x = &in.at(i + di, j + dj, 0);
          T* gx = &grad_in.at(i + di, j + dj, 0);
          const std::size_t tap = (di * 3 + dj) * cin * cout;
          for (std::size_t c = 0; c < cin; ++c) {
            const T* kc = k + tap + c * cout;
            T* gkc = gk + tap + c * cout;
            const T xv = x[c];
            T acc = T(0);
            for (std::size_t oc = 0; oc < cout; ++oc) {
              gkc[oc] += xv * g[oc];
              acc += kc[oc] * g[oc];
            }
            gx[c] += acc;
          }
        }
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Batch normalization over the last (channel) axis
// ---------------------------------------------------------------------------

/// Per-channel affine y = scale * x + shift equivalent to infer-mode BN.
template <typename T>
struct FoldedAffine {
  std::vector<T> scale;
  std::vector<T> shift;
};

template <typename T>
FoldedAffine<T> batchnorm_fold(const BatchNormParams<T>& p) {
  const std::size_t c = p.channels();
  FoldedAffine<T> f{std::vector<T>(c), std::vector<T>(c)};
  for (std::size_t k = 0; k < c; ++k) {
    f.scale[k] = p.gamma[k] / std::sqrt(p.running_var[k] + p.epsilon);
    f.shift[k] = p.beta[k] - f.scale[k] * p.running_mean[k];
  }
  return f;
}

/// Infer mode: running statistics, computed through the folded affine form.
template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& in,
                               const BatchNormParams<T>& p) {
  const std::size_t c = p.channels();
  if (c == 0) throw ShapeError("batchnorm with zero channels");
  if (in.size() % c != 0) throw ShapeError("batchnorm channel mismatch");
  const auto f = batchnorm_fold(p);
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t k = i % c;
    out[i] = f.scale[k] * in[i] + f.shift[k];
  }
  return out;
}

/// State kept by train-mode BN for its backward pass.
template <typename T>
struct BatchNormCache {
  std::vector<BasicTensor<T>> xhat;
  std::vector<T> inv_std;
  std::size_t count = 0;
};

/// Train mode: statistics over every element of every tensor in the batch
/// (batch and spatial dims). Running stats are updated by EMA when
/// `update_running` is set.
template <typename T>
std::vector<BasicTensor<T>> batchnorm_train(
    std::span<const BasicTensor<T>> batch, BatchNormParams<T>& p,
    BatchNormCache<T>& cache, bool update_running = true) {
  const std::size_t c = p.channels();
  if (c == 0) throw ShapeError("batchnorm with zero channels");
  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  std::size_t n = 0;
  for (const auto& x : batch) {
    if (x.size() % c != 0) throw ShapeError("batchnorm channel mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) sum[i % c] += x[i];
    n += x.size() / c;
  }
  if (n == 0) throw ShapeError("batchnorm on empty batch");
  std::vector<T> mean(c), var(c);
  for (std::size_t k = 0; k < c; ++k) mean[k] = T(sum[k] / double(n));
  for (const auto& x : batch)
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = double(x[i]) - double(mean[i % c]);
      sq[i % c] += d * d;
    }
  cache.inv_std.assign(c, T(0));
  for (std::size_t k = 0; k < c; ++k) {
    var[k] = T(sq[k] / double(n));
    cache.inv_std[k] = T(1) / std::sqrt(var[k] + p.epsilon);
  }
  cache.count = n;
  cache.xhat.clear();
  cache.xhat.reserve(batch.size());
  std::vector<BasicTensor<T>> out;
  out.reserve(batch.size());
  for (const auto& x : batch) {
    BasicTensor<T> xh(x.shape()), y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t k = i % c;
      xh[i] = (x[i] - mean[k]) * cache.inv_std[k];
      y[i] = p.gamma[k] * xh[i] + p.beta[k];
    }
    cache.xhat.push_back(std::move(xh));
    out.push_back(std::move(y));
  }
  if (update_running) {
    for (std::size_t k = 0; k < c; ++k) {
      p.running_mean[k] =
          p.momentum * p.running_mean[k] + (T(1) - p.momentum) * mean[k];
      p.running_var[k] =
          p.momentum * p.running_var[k] + (T(1) - p.momentum) * var[k];
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> batchnorm_train_backward(
    const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
    std::span<const BasicTensor<T>> grad_out, BatchNormParams<T>& grads) {
  const std::size_t c = p.channels();
  std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    const auto& g = grad_out[b];
    const auto& xh = cache.xhat[b];
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g[i % c] += g[i];
      sum_gx[i % c] += double(g[i]) * double(xh[i]);
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    grads.gamma[k] += T(sum_gx[k]);
    grads.beta[k] += T(sum_g[k]);
  }
  const double n = double(cache.count);
  std::vector<BasicTensor<T>> grad_in;
  grad_in.reserve(grad_out.size());
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    const auto& g = grad_out[b];
    const auto& xh = cache.xhat[b];
    BasicTensor<T> gi(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t k = i % c;
      const double dxhat = double(g[i]) * double(p.gamma[k]);
      const double mean_dxhat = sum_g[k] * double(p.gamma[k]) / n;
      const double mean_dxhat_xhat = sum_gx[k] * double(p.gamma[k]) / n;
      gi[i] = T(double(cache.inv_std[k]) *
                (dxhat - mean_dxhat - double(xh[i]) * mean_dxhat_xhat));
    }
    grad_in.push_back(std::move(gi));
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2
// ---------------------------------------------------------------------------

/// Output plus, for each output element, the flat input index it came from.
template <typename T>
struct PoolResult {
  BasicTensor<T> out;
  std::vector<std::uint32_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2x2(const BasicTensor<T>& in) {
  if (in.shape().rank() != 3) throw ShapeError("maxpool2x2 expects HxWxC");
  const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2x2 needs even spatial extents, got " +
                     in.shape().str());
  PoolResult<T> r{BasicTensor<T>(Shape{h / 2, w / 2, c}), {}};
  r.argmax.resize(r.out.size());
  for (std::size_t i = 0; i < h / 2; ++i)
    for (std::size_t j = 0; j < w / 2; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        std::size_t best = ((2 * i) * w + 2 * j) * c + k;
        // Scan order (0,0) (0,1) (1,0) (1,1); strict > keeps the first max.
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = ((2 * i + di) * w + 2 * j + dj) * c + k;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (i * (w / 2) + j) * c + k;
        r.out[o] = in[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const Shape& in_shape,
                                   std::span<const std::uint32_t> argmax,
                                   const BasicTensor<T>& grad_out) {
  BasicTensor<T> grad_in(in_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o)
    grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

enum class Activation { kNone, kRelu };

/// out = act(W^T x + b). Input of any shape is flattened.
template <typename T>
BasicTensor<T> fully_connected(const BasicTensor<T>& in,
                               const DenseParams<T>& p, Activation act) {
  const std::size_t n_in = p.in_features(), n_out = p.out_features();
  if (in.size() != n_in)
    throw ShapeError("fully_connected expects " + std::to_string(n_in) +
                     " inputs, got " + std::to_string(in.size()));
  BasicTensor<T> out(Shape{n_out});
  for (std::size_t o = 0; o < n_out; ++o) out[o] = p.bias[o];
  const T* w = p.weight.data();
  for (std::size_t i = 0; i < n_in; ++i) {
    const T x = in[i];
    const T* wr = w + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) out[o] += x * wr[o];
  }
  if (act == Activation::kRelu) relu_inplace(out);
  return out;
}

/// `grad_out` is the gradient w.r.t. the activated output; `out` is that
/// output (needed for the ReLU mask).
template <typename T>
BasicTensor<T> fully_connected_backward(const BasicTensor<T>& in,
                                        const DenseParams<T>& p,
                                        const BasicTensor<T>& out,
                                        BasicTensor<T> grad_out,
                                        Activation act, DenseParams<T>& grads) {
  if (act == Activation::kRelu) relu_backward_inplace(out, grad_out);
  const std::size_t n_in = p.in_features(), n_out = p.out_features();
  BasicTensor<T> grad_in(in.shape());
  const T* w = p.weight.data();
  T* gw = grads.weight.data();
  for (std::size_t o = 0; o < n_out; ++o) grads.bias[o] += grad_out[o];
  for (std::size_t i = 0; i < n_in; ++i) {
    const T x = in[i];
    const T* wr = w + i * n_out;
    T* gwr = gw + i * n_out;
    T acc = T(0);
    for (std::size_t o = 0; o < n_out; ++o) {
      gwr[o] += x * grad_out[o];
      acc += wr[o] * grad_out[o];
    }
    grad_in[i] = acc;
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

template <typename T>
struct LstmStepCache {
  BasicTensor<T> x, h_prev, c_prev;
  std::vector<T> i, f, g, o, tanh_c;
};

template <typename T>
struct LstmState {
  BasicTensor<T> h;
  BasicTensor<T> c;
};

/// One time step. Fills `cache` (if non-null) for backpropagation through time.
template <typename T>
LstmState<T> lstm_cell_step(const BasicTensor<T>& x, const BasicTensor<T>& h_prev,
                            const BasicTensor<T>& c_prev,
                            const LstmParams<T>& p,
                            LstmStepCache<T>* cache = nullptr) {
  const std::size_t hs = p.hidden(), n_in = p.input_size();
  if (h_prev.size() != hs || c_prev.size() != hs)
    throw ShapeError("lstm state size " + std::to_string(h_prev.size()) +
                     " does not match hidden size " + std::to_string(hs));
  if (x.size() != n_in)
    throw ShapeError("lstm input size " + std::to_string(x.size()) +
                     " does not match " + std::to_string(n_in));
  std::vector<T> z(4 * hs);
  for (std::size_t r = 0; r < 4 * hs; ++r) {
    T acc = p.bias[r];
    const T* wi = &p.w_input.at(r, 0);
    for (std::size_t k = 0; k < n_in; ++k) acc += wi[k] * x[k];
    const T* wh = &p.w_recurrent.at(r, 0);
    for (std::size_t k = 0; k < hs; ++k) acc += wh[k] * h_prev[k];
    z[r] = acc;
  }
  LstmState<T> s{BasicTensor<T>(Shape{hs}), BasicTensor<T>(Shape{hs})};
  std::vector<T> gi(hs), gf(hs), gg(hs), go(hs), tc(hs);
  for (std::size_t k = 0; k < hs; ++k) {
    gi[k] = sigmoid(z[k]);
    gf[k] = sigmoid(z[hs + k]);
    gg[k] = std::tanh(z[2 * hs + k]);
    go[k] = sigmoid(z[3 * hs + k]);
    s.c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
    tc[k] = std::tanh(s.c[k]);
    s.h[k] = go[k] * tc[k];
  }
  if (cache) {
    cache->x = x.reshaped(Shape{n_in});
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->g = std::move(gg);
    cache->o = std::move(go);
    cache->tanh_c = std::move(tc);
  }
  return s;
}

template <typename T>
struct LstmStepGrads {
  BasicTensor<T> dx, dh_prev, dc_prev;
};

/// dh/dc are the gradients flowing into this step's h and c outputs.
template <typename T>
LstmStepGrads<T> lstm_cell_step_backward(const LstmStepCache<T>& cache,
                                         const LstmParams<T>& p,
                                         const BasicTensor<T>& dh,
                                         const BasicTensor<T>& dc,
                                         LstmParams<T>& grads) {
  const std::size_t hs = p.hidden(), n_in = p.input_size();
  std::vector<T> dz(4 * hs);
  LstmStepGrads<T> r{BasicTensor<T>(Shape{n_in}), BasicTensor<T>(Shape{hs}),
                     BasicTensor<T>(Shape{hs})};
  for (std::size_t k = 0; k < hs; ++k) {
    const T i = cache.i[k], f = cache.f[k], g = cache.g[k], o = cache.o[k];
    const T tc = cache.tanh_c[k];
    const T dct = dc[k] + dh[k] * o * (T(1) - tc * tc);
    const T d_o = dh[k] * tc;
    const T d_i = dct * g;
    const T d_g = dct * i;
    const T d_f = dct * cache.c_prev[k];
    r.dc_prev[k] = dct * f;
    dz[k] = d_i * i * (T(1) - i);
    dz[hs + k] = d_f * f * (T(1) - f);
    dz[2 * hs + k] = d_g * (T(1) - g * g);
    dz[3 * hs + k] = d_o * o * (T(1) - o);
  }
  for (std::size_t row = 0; row < 4 * hs; ++row) {
    const T d = dz[row];
    grads.bias[row] += d;
    T* gwi = &grads.w_input.at(row, 0);
    const T* wi = &p.w_input.at(row, 0);
    for (std::size_t k = 0; k < n_in; ++k) {
      gwi[k] += d * cache.x[k];
      r.dx[k] += wi[k] * d;
    }
    T* gwh = &grads.w_recurrent.at(row, 0);
    const T* wh = &p.w_recurrent.at(row, 0);
    for (std::size_t k = 0; k < hs; ++k) {
      gwh[k] += d * cache.h_prev[k];
      r.dh_prev[k] += wh[k] * d;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Causal 1D convolution (kernel 3, dilation 1) + ReLU
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> causal_conv1d(const BasicTensor<T>& in,
                             const Conv1dParams<T>& p) {
  if (in.shape().rank() != 2) throw ShapeError("causal_conv1d expects TxC");
  const std::size_t t_len = in.dim(0), cin = in.dim(1);
  if (t_len < 1) throw ShapeError("causal_conv1d needs T >= 1");
  if (cin != p.in_channels())
    throw ShapeError("causal_conv1d channel mismatch");
  const std::size_t cout = p.out_channels();
  BasicTensor<T> out(Shape{t_len, cout});
  for (std::size_t t = 0; t < t_len; ++t) {
    T* o = &out.at(t, 0);
    for (std::size_t oc = 0; oc < cout; ++oc) o[oc] = p.bias[oc];
    for (std::size_t tap = 0; tap < 3; ++tap) {
      // tap 2 reads step t, tap 0 reads step t-2; left side is zero padded.
      if (t + tap < 2) continue;
      const std::size_t src = t + tap - 2;
      for (std::size_t c = 0; c < cin; ++c) {
        const T xv = in.at(src, c);
        const T* kc = &p.kernel.at(tap, c, 0);
        for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += xv * kc[oc];
      }
    }
  }
  relu_inplace(out);
  return out;
}

template <typename T>
BasicTensor<T> causal_conv1d_backward(const BasicTensor<T>& in,
                                      const Conv1dParams<T>& p,
                                      const BasicTensor<T>& out,
                                      BasicTensor<T> grad_out,
                                      Conv1dParams<T>& grads) {
  relu_backward_inplace(out, grad_out);
  const std::size_t t_len = in.dim(0), cin = in.dim(1);
  const std::size_t cout = p.out_channels();
  BasicTensor<T> grad_in(in.shape());
  for (std::size_t t = 0; t < t_len; ++t) {
    const T* g = &grad_out.at(t, 0);
    for (std::size_t oc = 0; oc < cout; ++oc) grads.bias[oc] += g[oc];
    for (std::size_t tap = 0; tap < 3; ++tap) {
      if (t + tap < 2) continue;
      const std::size_t src = t + tap - 2;
      for (std::size_t c = 0; c < cin; ++c) {
        const T xv = in.at(src, c);
        const T* kc = &p.kernel.at(tap, c, 0);
        T* gkc = &grads.kernel.at(tap, c, 0);
        T acc = T(0);
        for (std::size_t oc = 0; oc < cout; ++oc) {
          gkc[oc] += xv * g[oc];
          acc += kc[oc] * g[oc];
        }
        grad_in.at(src, c) += acc;
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Class-weighted softmax cross-entropy
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  BasicTensor<T> p(logits.shape());
  T mx = logits[0];
  for (std::size_t k = 1; k < logits.size(); ++k) mx = std::max(mx, logits[k]);
  T sum = T(0);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    sum += p[k];
  }
  for (auto& v : p.values()) v /= sum;
  return p;
}

template <typename T>
struct LossResult {
  T loss;
  BasicTensor<T> grad;
};

template <typename T>
LossResult<T> weighted_softmax_xent(const BasicTensor<T>& logits, int label,
                                    std::span<const T> class_weights) {
  const std::size_t k = logits.size();
  if (label < 0 || static_cast<std::size_t>(label) >= k)
    throw ShapeError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(k) + ")");
  if (class_weights.size() != k)
    throw ShapeError("class weight count does not match logits");
  T mx = logits[0];
  for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits[c]);
  T sum = T(0);
  for (std::size_t c = 0; c < k; ++c) sum += std::exp(logits[c] - mx);
  const T log_z = mx + std::log(sum);
  const T w = class_weights[static_cast<std::size_t>(label)];
  LossResult<T> r{w * (log_z - logits[static_cast<std::size_t>(label)]),
                  BasicTensor<T>(logits.shape())};
  for (std::size_t c = 0; c < k; ++c) {
    const T pc = std::exp(logits[c] - log_z);
    r.grad[c] = w * (pc - (c == static_cast<std::size_t>(label) ? T(1) : T(0)));
  }
  return r;
}

}  // namespace ircount::nn

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ircount/network.hpp"
#include "ircount/rng.hpp"
#include "random_models.hpp"

using namespace ircount;
using namespace ircount::nn;

TEST_CASE("conv2d3x3 fixtures") {
  Tensor ones(Shape{8, 8, 1}, 1.0f);
  Conv2dParams<float> p(1, 1);
  p.kernel.fill(1.0f);
  const Tensor out = conv2d3x3(ones, p);
  REQUIRE(out.shape() == Shape{6, 6, 1});
  for (float v : out.values()) CHECK(v == 9.0f);

  Conv2dParams<float> q(1, 3);
  q.bias[0] = 0.5f, q.bias[1] = -1.0f, q.bias[2] = 2.0f;
  q.kernel.fill(0.7f);
  const Tensor z = conv2d3x3(Tensor(Shape{8, 8, 1}), q);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t c = 0; c < 3; ++c) CHECK(z.at(i, j, c) == q.bias[c]);
  CHECK_THROWS_AS(conv2d3x3(Tensor(Shape{2, 8, 1}), q), ShapeError);
}

TEST_CASE("batchnorm fixtures") {
  // A batch that is already zero-mean, unit-variance per channel.
  std::vector<Tensor> batch{Tensor(Shape{1, 1, 1}, {1.0f}), Tensor(Shape{1, 1, 1}, {-1.0f})};
  BatchNormParams<float> p(1);
  BatchNormCache<float> cache;
  const auto out = batchnorm_train<float>(batch, p, cache);
  // var = 1, eps 1e-3 shrinks the output by 1/sqrt(1.001).
  CHECK(std::abs(out[0][0] - 1.0f / std::sqrt(1.001f)) < 1e-6);
  CHECK(std::abs(out[1][0] + 1.0f / std::sqrt(1.001f)) < 1e-6);
  // Running stats move by EMA with momentum 0.99.
  CHECK(std::abs(p.running_mean[0] - 0.0f) < 1e-7);
  CHECK(std::abs(p.running_var[0] - (0.99f * 1.0f + 0.01f * 1.0f)) < 1e-6);

  Rng rng(1);
  BatchNormParams<double> q(3);
  for (std::size_t c = 0; c < 3; ++c) {
    q.gamma[c] = rng.uniform(0.5, 2), q.beta[c] = rng.normal();
    q.running_mean[c] = rng.normal(), q.running_var[c] = rng.uniform(0.1, 3);
  }
  BasicTensor<double> x(Shape{2, 2, 3});
  for (auto& v : x.values()) v = rng.normal();
  const auto y = batchnorm_infer(x, q);
  const auto f = batchnorm_fold(q);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % 3;
    CHECK(y[i] == f.scale[c] * x[i] + f.shift[c]);
    const double a = q.gamma[c] / std::sqrt(q.running_var[c] + q.epsilon);
    CHECK(f.scale[c] == doctest::Approx(a).epsilon(1e-15));
    CHECK(f.shift[c] == doctest::Approx(q.beta[c] - a * q.running_mean[c]).epsilon(1e-12));
  }
}

TEST_CASE("maxpool fixtures") {
  Tensor x(Shape{6, 6, 1});
  x.at(0, 0, 0) = 5.0f;
  const auto r = maxpool2x2(x);
  REQUIRE(r.out.shape() == Shape{3, 3, 1});
  CHECK(r.out.at(0, 0, 0) == 5.0f);
  for (std::size_t i = 1; i < 9; ++i) CHECK(r.out[i] == 0.0f);
  const auto c = maxpool2x2(Tensor(Shape{4, 4, 2}, 2.5f));
  for (float v : c.out.values()) CHECK(v == 2.5f);
  // Ties go to the first element of the window in row-major order.
  CHECK(c.argmax[0] == 0);

  Rng rng(2);
  Tensor y(Shape{6, 6, 3});
  for (auto& v : y.values()) v = float(rng.normal());
  const auto p = maxpool2x2(y);
  Tensor g(p.out.shape());
  double sum_out = 0;
  for (auto& v : g.values()) sum_out += v = float(rng.normal());
  const Tensor gi = maxpool2x2_backward<float>(y.shape(), p.argmax, g);
  double sum_in = 0;
  for (float v : gi.values()) sum_in += v;
  CHECK(sum_in == doctest::Approx(sum_out).epsilon(1e-6));
}

TEST_CASE("fully connected fixtures") {
  DenseParams<float> p(3, 3);
  for (std::size_t i = 0; i < 3; ++i) p.weight.at(i, i) = 1.0f;
  const Tensor x(Shape{3}, {1.5f, -2.0f, 0.25f});
  CHECK(fully_connected(x, p, Activation::kNone) == x);
  DenseParams<float> z(3, 2);
  z.bias[0] = -1.0f, z.bias[1] = 2.0f;
  const Tensor y = fully_connected(x, z, Activation::kRelu);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 2.0f);
  CHECK_THROWS_AS(fully_connected(Tensor(Shape{4}), z, Activation::kNone), ShapeError);
}

TEST_CASE("lstm cell fixtures") {
  LstmParams<double> p(4, 3);
  const BasicTensor<double> x(Shape{4}, 1.0), h(Shape{3}), c(Shape{3});
  const auto s = lstm_cell_step(x, h, c, p);
  for (double v : s.h.values()) CHECK(v == 0.0);
  for (double v : s.c.values()) CHECK(v == 0.0);

  // Gate order i, f, g, o: the forget bias lives in rows [H, 2H).
  LstmParams<double> q(4, 3);
  for (std::size_t k = 3; k < 6; ++k) q.bias[k] = 10.0;
  const BasicTensor<double> c_prev(Shape{3}, {0.7, -1.2, 2.0});
  const auto t = lstm_cell_step(x, h, c_prev, q);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(t.c[k] - c_prev[k] / (1 + std::exp(-10.0))) < 1e-12);
    CHECK(std::abs(t.c[k] - c_prev[k]) < 1e-4 * 2.1);
  }
}

TEST_CASE("causal conv1d fixtures") {
  Conv1dParams<float> id(1, 1);
  id.kernel.at(2, 0, 0) = 1.0f;
  const Tensor seq(Shape{4, 1}, {0.5f, 2.0f, 0.0f, 3.0f});
  CHECK(causal_conv1d(seq, id) == seq);

  Conv1dParams<float> ones(1, 1);
  ones.kernel.fill(1.0f);
  const Tensor out = causal_conv1d(Tensor(Shape{3, 1}, 1.0f), ones);
  CHECK(out[0] == 1.0f);
  CHECK(out[1] == 2.0f);
  CHECK(out[2] == 3.0f);

  Rng rng(3);
  Conv1dParams<double> p(2, 3);
  for (auto& v : p.kernel.values()) v = rng.normal();
  BasicTensor<double> a(Shape{5, 2});
  for (auto& v : a.values()) v = rng.normal();
  const auto ya = causal_conv1d(a, p);
  for (std::size_t t = 0; t < 5; ++t) {
    auto b = a;
    for (std::size_t u = t + 1; u < 5; ++u)
      for (std::size_t c = 0; c < 2; ++c) b.at(u, c) = rng.normal();
    const auto yb = causal_conv1d(b, p);
    for (std::size_t k = 0; k <= t; ++k)
      for (std::size_t oc = 0; oc < 3; ++oc) CHECK(ya.at(k, oc) == yb.at(k, oc));
  }
}

TEST_CASE("weighted softmax cross-entropy fixtures") {
  const std::vector<double> unit{1, 1, 1, 1};
  const BasicTensor<double> z(Shape{4});
  CHECK(weighted_softmax_xent<double>(z, 2, unit).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  const BasicTensor<double> zz(Shape{4}, {0.3, -1.0, 2.0, 0.1});
  const std::vector<double> w1{1, 0.7, 1, 1}, w2{1, 1.4, 1, 1};
  const auto a = weighted_softmax_xent<double>(zz, 1, w1), b = weighted_softmax_xent<double>(zz, 1, w2);
  CHECK(b.loss == 2 * a.loss);
  for (std::size_t c = 0; c < 4; ++c) CHECK(b.grad[c] == 2 * a.grad[c]);
  CHECK_THROWS_AS(weighted_softmax_xent<double>(zz, 4, unit), ShapeError);
}

TEST_CASE("majority voting") {
  auto onehot = [](int c) {
    std::vector<double> p(4, 0.01);
    p[std::size_t(c)] = 0.97;
    return p;
  };
  CHECK(majority_vote({onehot(2), onehot(2), onehot(2)}) == 2);
  CHECK(majority_vote({onehot(1), onehot(1), onehot(2)}) == 1);
  // 2/2/1 tie between classes 0 and 3: larger summed probability wins.
  std::vector<std::vector<double>> tie{{0.6, 0.1, 0.1, 0.2}, {0.6, 0.1, 0.1, 0.2}, {0.2, 0.1, 0.1, 0.6},
                                       {0.1, 0.1, 0.1, 0.7}, {0.1, 0.8, 0.05, 0.05}};
  std::vector<int> votes;
  CHECK(majority_vote(tie, &votes) == 3);
  CHECK(votes == std::vector<int>{0, 0, 3, 3, 1});
  std::vector<std::vector<double>> exact{{0.5, 0.0, 0.0, 0.5 - 1e-9}, {0.0, 0.0, 0.0, 1.0},
                                         {1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.5 + 1e-9},
                                         {0.0, 0.0, 1.0, 0.0}};
  CHECK(majority_vote(exact) == 3);
  // Equal votes and equal mass fall back to the smaller count.
  std::vector<std::vector<double>> equal{{0.75, 0.25, 0, 0}, {0.25, 0.75, 0, 0}, {0, 0, 1, 0}};
  CHECK(majority_vote(equal) == 0);
}

TEST_CASE("model construction is deterministic and counts match the cost model") {
  Rng rng(4);
  for (int i = 0; i < 40; ++i) {
    const ModelSpec spec = testing::random_spec(rng, false);
    const auto a = build_model(spec, 77), b = build_model(spec, 77), c = build_model(spec, 78);
    bool same = true, differ = false;
    std::vector<const Tensor*> ta, tb, tc;
    a.params().for_each_trainable([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
    b.params().for_each_trainable([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
    c.params().for_each_trainable([&](const std::string&, const Tensor& t) { tc.push_back(&t); });
    for (std::size_t k = 0; k < ta.size(); ++k) {
      same = same && *ta[k] == *tb[k];
      differ = differ || !(*ta[k] == *tc[k]);
    }
    CHECK(same);
    CHECK(differ);
  }
  const auto lstm = build_model(parse_arch("lstm:w3:C8-P-C8-L16-FC"), 1);
  CHECK(lstm.params().trainable_count() == 2364);
  for (std::size_t k = 16; k < 32; ++k) CHECK(lstm.params().lstm->bias[k] == 1.0f);
  CHECK(build_model(parse_arch("sf:w1:C8-P-FC"), 1).params().trainable_count() == 388);
}

TEST_CASE("predictions are valid counts for every family") {
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const auto m = testing::random_model(rng, false);
    const auto w = testing::random_window(m.spec().window, rng);
    const Prediction p = m.predict(w);
    CHECK(p.count >= 0);
    CHECK(p.count < 4);
    double s = 0;
    for (double v : p.probabilities) s += v;
    CHECK(s == doctest::Approx(1.0));
    if (m.spec().family == Family::kMajorityVoting) CHECK(p.votes.size() == std::size_t(m.spec().window));
  }
}

/* Copyright 2026 The nmn-dialog Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <doctest.h>

#include <vector>

#include "nmnd/ops_conv.hpp"
#include "test_util.hpp"

using namespace nmnd;
using namespace nmnd::ops;
using testutil::graph_grad_check;

TEST_SUITE("conv") {

TEST_CASE("1x1 identity kernel with zero bias reproduces the input") {
  Graph<float> g;
  RngStream s(61, "conv-id");
  Value<float> x = g.leaf(tensor_uniform<float>(Shape{2, 4, 5}, -1.0f, 1.0f, s));
  TensorData<float> k(Shape{2, 2, 1, 1});
  k.v[0] = 1.0f;  // out0 <- in0
  k.v[3] = 1.0f;  // out1 <- in1
  Value<float> kernel = g.leaf(k);
  Value<float> bias = g.leaf(tensor_zeros<float>(Shape{2}));
  Value<float> y = conv2d(x, kernel, bias);
  REQUIRE(y.shape() == x.shape());
  for (int i = 0; i < x.size(); ++i) CHECK(y.item(i) == doctest::Approx(x.item(i)));
}

TEST_CASE("zero input yields the broadcast bias") {
  Graph<float> g;
  RngStream s(62, "conv-b");
  Value<float> x = g.leaf(tensor_zeros<float>(Shape{3, 4, 4}));
  Value<float> kernel = g.leaf(tensor_uniform<float>(Shape{2, 3, 3, 3}, -1.0f, 1.0f, s));
  Value<float> bias = g.leaf(tensor_of<float>(Shape{2}, {0.5f, -1.5f}));
  Value<float> y = conv2d(x, kernel, bias);
  for (int i = 0; i < 16; ++i) {
    CHECK(y.item(i) == 0.5f);
    CHECK(y.item(16 + i) == -1.5f);
  }
}

TEST_CASE("matches the direct-summation oracle") {
  RngStream s(63, "conv-rand");
  SUBCASE("1x3x3 input, single 3x3 kernel") {
    TensorData<double> x = tensor_uniform<double>(Shape{1, 3, 3}, -2.0, 2.0, s);
    TensorData<double> k = tensor_uniform<double>(Shape{1, 1, 3, 3}, -1.0, 1.0, s);
    TensorData<double> b = tensor_uniform<double>(Shape{1}, -1.0, 1.0, s);
    TensorData<double> want = oracle::conv2d_direct(x, k, b);
    Graph<double> g;
    Value<double> y = conv2d(g.leaf(x), g.leaf(k), g.leaf(b));
    for (int i = 0; i < want.size(); ++i)
      CHECK(y.item(i) == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
  SUBCASE("multi-channel rectangular field") {
    TensorData<double> x = tensor_uniform<double>(Shape{3, 5, 4}, -2.0, 2.0, s);
    TensorData<double> k = tensor_uniform<double>(Shape{2, 3, 3, 3}, -1.0, 1.0, s);
    TensorData<double> b = tensor_uniform<double>(Shape{2}, -1.0, 1.0, s);
    TensorData<double> want = oracle::conv2d_direct(x, k, b);
    Graph<double> g;
    Value<double> y = conv2d(g.leaf(x), g.leaf(k), g.leaf(b));
    REQUIRE(y.shape() == Shape{2, 5, 4});
    for (int i = 0; i < want.size(); ++i)
      CHECK(y.item(i) == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
  SUBCASE("5x5 kernel exercises wider padding") {
    TensorData<double> x = tensor_uniform<double>(Shape{2, 6, 6}, -1.0, 1.0, s);
    TensorData<double> k = tensor_uniform<double>(Shape{1, 2, 5, 5}, -1.0, 1.0, s);
    TensorData<double> b = tensor_uniform<double>(Shape{1}, -1.0, 1.0, s);
    TensorData<double> want = oracle::conv2d_direct(x, k, b);
    Graph<double> g;
    Value<double> y = conv2d(g.leaf(x), g.leaf(k), g.leaf(b));
    for (int i = 0; i < want.size(); ++i)
      CHECK(y.item(i) == doctest::Approx(want.v[i]).epsilon(1e-12));
  }
}

TEST_CASE("channel mismatch and even kernels are shape errors") {
  Graph<float> g;
  Value<float> x = g.leaf(tensor_zeros<float>(Shape{3, 4, 4}));
  Value<float> bias1 = g.leaf(tensor_zeros<float>(Shape{1}));
  CHECK_THROWS_AS(conv2d(x, g.leaf(tensor_zeros<float>(Shape{1, 2, 3, 3})), bias1), ShapeError);
  CHECK_THROWS_AS(conv2d(x, g.leaf(tensor_zeros<float>(Shape{1, 3, 2, 2})), bias1), ShapeError);
  CHECK_THROWS_AS(conv2d(x, g.leaf(tensor_zeros<float>(Shape{1, 3, 3, 3})),
                         g.leaf(tensor_zeros<float>(Shape{2}))),
                  ShapeError);
}

TEST_CASE("conv gradients match finite differences") {
  RngStream s(64, "conv-fd");
  std::vector<TensorData<double>> in = {
      testutil::random_tensor<double>(Shape{2, 3, 4}, -1.0, 1.0, s),
      testutil::random_tensor<double>(Shape{2, 2, 3, 3}, -1.0, 1.0, s),
      testutil::random_tensor<double>(Shape{2}, -1.0, 1.0, s)};
  auto r = graph_grad_check<double>(
      [](Graph<double>& g, const std::vector<Value<double>>& v) {
        Value<double> y = conv2d(v[0], v[1], v[2]);
        RngStream ps(640, "probe");
        Value<double> w = g.constant(tensor_uniform<double>(y.shape(), -1.0, 1.0, ps));
        return dot(y, w);
      },
      in, 1e-6);
  CHECK_MESSAGE(r.max_rel_err < 1e-6, r.worst);
}

TEST_CASE("maxpool halves dimensions with ceil semantics") {
  Graph<float> g;
  TensorData<float> x(Shape{1, 3, 5});
  for (int i = 0; i < 15; ++i) x.v[i] = static_cast<float>(i);
  Value<float> y = maxpool2(g.leaf(x));
  REQUIRE(y.shape() == Shape{1, 2, 3});
  // Rows {0..4},{5..9} pool to 6, 8, 9; last row {10..14} pools alone.
  CHECK(y.item(0) == 6.0f);
  CHECK(y.item(1) == 8.0f);
  CHECK(y.item(2) == 9.0f);
  CHECK(y.item(3) == 11.0f);
  CHECK(y.item(4) == 13.0f);
  CHECK(y.item(5) == 14.0f);
}

TEST_CASE("maxpool matches the direct oracle on random input") {
  RngStream s(65, "pool-rand");
  TensorData<double> x = tensor_uniform<double>(Shape{3, 7, 6}, -3.0, 3.0, s);
  TensorData<double> want = oracle::maxpool2_direct(x);
  Graph<double> g;
  Value<double> y = maxpool2(g.leaf(x));
  REQUIRE(y.shape() == Shape{3, 4, 3});
  for (int i = 0; i < want.size(); ++i) CHECK(y.item(i) == want.v[i]);
}

TEST_CASE("maxpool gradients match finite differences") {
  RngStream s(66, "pool-fd");
  std::vector<TensorData<double>> in = {
      testutil::random_tensor_distinct<double>(Shape{2, 3, 3}, 0.01, s)};
  auto r = graph_grad_check<double>(
      [](Graph<double>& g, const std::vector<Value<double>>& v) {
        Value<double> y = maxpool2(v[0]);
        RngStream ps(660, "probe");
        Value<double> w = g.constant(tensor_uniform<double>(y.shape(), -1.0, 1.0, ps));
        return dot(y, w);
      },
      in, 1e-6);
  CHECK_MESSAGE(r.max_rel_err < 1e-6, r.worst);
}

TEST_CASE("batchnorm training mode normalizes each channel") {
  RngStream s(67, "bn");
  Graph<double> g;
  TensorData<double> x = tensor_uniform<double>(Shape{2, 4, 4}, -3.0, 5.0, s);
  Value<double> gamma = g.leaf(tensor_full<double>(Shape{2}, 1.0));
  Value<double> beta = g.leaf(tensor_zeros<double>(Shape{2}));
  BatchStats<double> stats;
  Value<double> y = batchnorm_train(g.leaf(x), gamma, beta, &stats);
  for (int c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (int i = 0; i < 16; ++i) mean += y.item(c * 16 + i);
    mean /= 16;
    for (int i = 0; i < 16; ++i) {
      double d = y.item(c * 16 + i) - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks variance slightly

    // Reported statistics equal the plain per-channel moments.
    double want_mean = 0, want_var = 0;
    for (int i = 0; i < 16; ++i) want_mean += x.v[c * 16 + i];
    want_mean /= 16;
    for (int i = 0; i < 16; ++i) {
      double d = x.v[c * 16 + i] - want_mean;
      want_var += d * d;
    }
    want_var /= 16;
    CHECK(stats.mean[c] == doctest::Approx(want_mean).epsilon(1e-12));
    CHECK(stats.var[c] == doctest::Approx(want_var).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm gradients match finite differences") {
  RngStream s(68, "bn-fd");
  std::vector<TensorData<double>> in = {
      testutil::random_tensor<double>(Shape{2, 3, 3}, -2.0, 2.0, s),
      testutil::random_tensor<double>(Shape{2}, 0.5, 1.5, s),
      testutil::random_tensor<double>(Shape{2}, -0.5, 0.5, s)};
  auto r = graph_grad_check<double>(
      [](Graph<double>& g, const std::vector<Value<double>>& v) {
        Value<double> y = batchnorm_train(v[0], v[1], v[2]);
        RngStream ps(680, "probe");
        Value<double> w = g.constant(tensor_uniform<double>(y.shape(), -1.0, 1.0, ps));
        return dot(y, w);
      },
      in, 1e-6);
  CHECK_MESSAGE(r.max_rel_err < 1e-6, r.worst);
}

TEST_CASE("batchnorm inference mode uses the provided running statistics") {
  Graph<double> g;
  TensorData<double> x = tensor_of<double>(Shape{1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  ArrayX<double> rm(1), rv(1);
  rm << 2.0;
  rv << 4.0;
  Value<double> y = batchnorm_eval(g.leaf(x), g.leaf(tensor_of<double>(Shape{1}, {2.0})),
                                   g.leaf(tensor_of<double>(Shape{1}, {1.0})), rm, rv);
  // (x - 2) / sqrt(4 + 1e-5) * 2 + 1
  double inv = 1.0 / std::sqrt(4.0 + 1e-5);
  CHECK(y.item(0) == doctest::Approx(1.0 + 2.0 * (1.0 - 2.0) * inv).epsilon(1e-12));
  CHECK(y.item(3) == doctest::Approx(1.0 + 2.0 * (4.0 - 2.0) * inv).epsilon(1e-12));
}

TEST_CASE("batchnorm inference gradients match finite differences") {
  RngStream s(69, "bne-fd");
  ArrayX<double> rm(2), rv(2);
  rm << 0.3, -0.2;
  rv << 1.5, 0.8;
  std::vector<TensorData<double>> in = {
      testutil::random_tensor<double>(Shape{2, 2, 2}, -2.0, 2.0, s),
      testutil::random_tensor<double>(Shape{2}, 0.5, 1.5, s),
      testutil::random_tensor<double>(Shape{2}, -0.5, 0.5, s)};
  auto r = graph_grad_check<double>(
      [rm, rv](Graph<double>& g, const std::vector<Value<double>>& v) {
        Value<double> y = batchnorm_eval(v[0], v[1], v[2], rm, rv);
        RngStream ps(690, "probe");
        Value<double> w = g.constant(tensor_uniform<double>(y.shape(), -1.0, 1.0, ps));
        return dot(y, w);
      },
      in, 1e-6);
  CHECK_MESSAGE(r.max_rel_err < 1e-6, r.worst);
}

}  // TEST_SUITE

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

// Attention-module suite. Every module is replayed by an independent
// loop-level reference; the logical modules are checked against their
// algebraic laws (idempotence, commutativity, complement mass, the Exclude
// composition identity) and all parameterized modules against finite
// differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "nmnd/modules.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace {

using nmnd::ArrayX;
using nmnd::Graph;
using nmnd::Parameter;
using nmnd::ParameterStore;
using nmnd::Rng;
using nmnd::Shape;
using nmnd::TensorData;
using nmnd::Value;

constexpr int kH = 3, kW = 4, kCells = kH * kW;
constexpr int kDTxt = 32, kDMap = 64, kDCtx = 64;

ParameterStore<double> make_store(std::uint64_t seed) {
  ParameterStore<double> store;
  nmnd::register_modules(store, Rng(seed), kDTxt, kDMap, kDCtx, kCells);
  return store;
}

// ---------------------------------------------------------------------------
// Loop-level references (no graph, no Eigen products).
// ---------------------------------------------------------------------------

std::vector<double> mv(const Parameter<double>& W, const std::vector<double>& x) {
  const int m = W.shape[0], n = W.shape[1];
  REQUIRE(static_cast<int>(x.size()) == n);
  std::vector<double> y(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[i] += W.value[i * n + j] * x[j];
  return y;
}

std::vector<double> to_vec(const TensorData<double>& t) {
  return std::vector<double>(t.v.data(), t.v.data() + t.size());
}

std::vector<double> normalize_direct(const std::vector<double>& a) {
  std::vector<double> r(a.size());
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r[i] = std::max(a[i], 0.0);
    total += r[i];
  }
  if (total > 0)
    for (double& v : r) v /= total;
  else
    for (double& v : r) v = 1.0 / static_cast<double>(a.size());
  return r;
}

/// y[p] = conv2(relu(conv1(x_vis[:,p] * (W_txt x_txt)))), all 1x1.
/// Reports the smallest |pre-ReLU| value for kink-margin checks.
std::vector<double> find_direct(ParameterStore<double>& s, const TensorData<double>& x_vis,
                                const std::vector<double>& x_txt, double* relu_margin) {
  const std::vector<double> t = mv(s.at("mod.find.w_txt"), x_txt);
  const Parameter<double>& c1w = s.at("mod.find.conv1.w");
  const Parameter<double>& c1b = s.at("mod.find.conv1.b");
  const Parameter<double>& c2w = s.at("mod.find.conv2.w");
  const Parameter<double>& c2b = s.at("mod.find.conv2.b");
  std::vector<double> y(kCells, 0.0);
  if (relu_margin) *relu_margin = 1e30;
  for (int p = 0; p < kCells; ++p) {
    std::vector<double> h(kDMap, 0.0);
    for (int k = 0; k < kDMap; ++k) {
      double acc = c1b.value[k];
      for (int c = 0; c < nmnd::kVisChannels; ++c)
        acc += c1w.value[k * nmnd::kVisChannels + c] * x_vis.v[c * kCells + p] * t[c];
      if (relu_margin) *relu_margin = std::min(*relu_margin, std::abs(acc));
      h[k] = std::max(acc, 0.0);
    }
    double out = c2b.value[0];
    for (int k = 0; k < kDMap; ++k) out += c2w.value[k] * h[k];
    y[p] = out;
  }
  return y;
}

/// attended = sum_p a~[p] x_vis[:,p]; y = conv2(relu(conv1(x_vis) * W1
/// attended * W2 x_txt)).
std::vector<double> relocate_direct(ParameterStore<double>& s, const std::vector<double>& a,
                                    const TensorData<double>& x_vis,
                                    const std::vector<double>& x_txt, double* relu_margin,
                                    std::vector<double>* attended_out) {
  const std::vector<double> an = normalize_direct(a);
  std::vector<double> attended(nmnd::kVisChannels, 0.0);
  for (int c = 0; c < nmnd::kVisChannels; ++c)
    for (int p = 0; p < kCells; ++p) attended[c] += an[p] * x_vis.v[c * kCells + p];
  if (attended_out) *attended_out = attended;
  const std::vector<double> ytil = mv(s.at("mod.relocate.w1"), attended);
  const std::vector<double> t2 = mv(s.at("mod.relocate.w2"), x_txt);
  const Parameter<double>& c1w = s.at("mod.relocate.conv1.w");
  const Parameter<double>& c1b = s.at("mod.relocate.conv1.b");
  const Parameter<double>& c2w = s.at("mod.relocate.conv2.w");
  const Parameter<double>& c2b = s.at("mod.relocate.conv2.b");
  std::vector<double> y(kCells, 0.0);
  if (relu_margin) *relu_margin = 1e30;
  for (int p = 0; p < kCells; ++p) {
    double out = c2b.value[0];
    for (int k = 0; k < kDMap; ++k) {
      double acc = c1b.value[k];
      for (int c = 0; c < nmnd::kVisChannels; ++c)
        acc += c1w.value[k * nmnd::kVisChannels + c] * x_vis.v[c * kCells + p];
      const double prod = acc * ytil[k] * t2[k];
      if (relu_margin) *relu_margin = std::min(*relu_margin, std::abs(prod));
      out += c2w.value[k] * std::max(prod, 0.0);
    }
    y[p] = out;
  }
  return y;
}

std::vector<double> describe_direct(ParameterStore<double>& s, const std::vector<double>& a,
                                    const TensorData<double>& x_vis,
                                    const std::vector<double>& x_txt) {
  const std::vector<double> an = normalize_direct(a);
  std::vector<double> attended(nmnd::kVisChannels, 0.0);
  for (int c = 0; c < nmnd::kVisChannels; ++c)
    for (int p = 0; p < kCells; ++p) attended[c] += an[p] * x_vis.v[c * kCells + p];
  const std::vector<double> t1 = mv(s.at("mod.describe.w2"), attended);
  const std::vector<double> t2 = mv(s.at("mod.describe.w3"), x_txt);
  std::vector<double> prod(kDCtx);
  for (int i = 0; i < kDCtx; ++i) prod[i] = t1[i] * t2[i];
  return mv(s.at("mod.describe.w1"), prod);
}

std::vector<double> exist_direct(ParameterStore<double>& s, const std::vector<double>& a) {
  std::vector<double> y = mv(s.at("mod.exist.w"), a);
  for (int i = 0; i < kDCtx; ++i) y[i] += s.at("mod.exist.b").value[i];
  return y;
}

std::vector<double> count_direct(ParameterStore<double>& s, const std::vector<double>& a) {
  std::vector<double> ext = a;
  ext.push_back(*std::max_element(a.begin(), a.end()));
  ext.push_back(*std::min_element(a.begin(), a.end()));
  std::vector<double> y = mv(s.at("mod.count.w"), ext);
  for (int i = 0; i < kDCtx; ++i) y[i] += s.at("mod.count.b").value[i];
  return y;
}

TensorData<double> random_vis(std::uint64_t seed) {
  auto stream = Rng(seed).stream("vis");
  return testutil::random_tensor<double>(Shape{nmnd::kVisChannels, kH, kW}, -1.0, 1.0, stream);
}

TensorData<double> random_txt(std::uint64_t seed) {
  auto stream = Rng(seed).stream("txt");
  return testutil::random_tensor<double>(Shape{kDTxt}, -1.0, 1.0, stream);
}

using testutil::param_fd_worst;

// ---------------------------------------------------------------------------

TEST_CASE("module registration covers every weight with the right shape") {
  ParameterStore<double> store = make_store(1);
  CHECK(store.at("mod.find.w_txt").shape == Shape{66, 32});
  CHECK(store.at("mod.find.conv1.w").shape == Shape{64, 66, 1, 1});
  CHECK(store.at("mod.find.conv1.b").shape == Shape{64});
  CHECK(store.at("mod.find.conv2.w").shape == Shape{1, 64, 1, 1});
  CHECK(store.at("mod.find.conv2.b").shape == Shape{1});
  CHECK(store.at("mod.relocate.w1").shape == Shape{64, 66});
  CHECK(store.at("mod.relocate.w2").shape == Shape{64, 32});
  CHECK(store.at("mod.relocate.conv1.w").shape == Shape{64, 66, 1, 1});
  CHECK(store.at("mod.relocate.conv2.w").shape == Shape{1, 64, 1, 1});
  CHECK(store.at("mod.exist.w").shape == Shape{64, kCells});
  CHECK(store.at("mod.exist.b").shape == Shape{64});
  CHECK(store.at("mod.describe.w1").shape == Shape{64, 64});
  CHECK(store.at("mod.describe.w2").shape == Shape{64, 66});
  CHECK(store.at("mod.describe.w3").shape == Shape{64, 32});
  // Describe is deliberately bias-free so a one-hot attention reduces to the
  // closed form; the scalar readouts do carry biases.
  CHECK_FALSE(store.contains("mod.describe.b"));
  CHECK(store.at("mod.count.w").shape == Shape{64, kCells + 2});
  CHECK(store.at("mod.count.b").shape == Shape{64});
  // Exclude introduces no parameters of its own.
  for (const auto& entry : store) CHECK(entry.first.rfind("mod.exclude", 0) != 0);
}

TEST_CASE("find matches the loop-level reference") {
  ParameterStore<double> store = make_store(2);
  TensorData<double> x_vis = random_vis(10);
  TensorData<double> x_txt = random_txt(11);
  std::vector<double> want = find_direct(store, x_vis, to_vec(x_txt), nullptr);
  Graph<double> g;
  Value<double> got =
      nmnd::module_find(g, store, g.constant(x_vis), g.constant(x_txt));
  REQUIRE(got.shape() == Shape{kH, kW});
  for (int p = 0; p < kCells; ++p)
    CHECK(got.array()[p] == doctest::Approx(want[p]).epsilon(1e-10));
}

TEST_CASE("relocate matches the loop-level reference") {
  ParameterStore<double> store = make_store(3);
  TensorData<double> x_vis = random_vis(12);
  TensorData<double> x_txt = random_txt(13);
  auto astream = Rng(14).stream("a");
  TensorData<double> a = testutil::random_tensor<double>(Shape{kH, kW}, -0.5, 1.5, astream);
  std::vector<double> want = relocate_direct(store, to_vec(a), x_vis, to_vec(x_txt), nullptr,
                                             nullptr);
  Graph<double> g;
  Value<double> got = nmnd::module_relocate(g, store, g.constant(a), g.constant(x_vis),
                                            g.constant(x_txt));
  REQUIRE(got.shape() == Shape{kH, kW});
  for (int p = 0; p < kCells; ++p)
    CHECK(got.array()[p] == doctest::Approx(want[p]).epsilon(1e-10));
}

TEST_CASE("relocate on a one-hot attention reads exactly that cell") {
  ParameterStore<double> store = make_store(4);
  TensorData<double> x_vis = random_vis(15);
  TensorData<double> x_txt = random_txt(16);
  const int hot = 7;
  TensorData<double> a(Shape{kH, kW});
  a.v[hot] = 1.0;
  std::vector<double> attended;
  std::vector<double> want =
      relocate_direct(store, to_vec(a), x_vis, to_vec(x_txt), nullptr, &attended);
  // The simplex projection leaves a one-hot untouched, so the attended
  // feature is exactly the hot cell's column.
  for (int c = 0; c < nmnd::kVisChannels; ++c)
    CHECK(attended[c] == x_vis.v[c * kCells + hot]);
  Graph<double> g;
  Value<double> got = nmnd::module_relocate(g, store, g.constant(a), g.constant(x_vis),
                                            g.constant(x_txt));
  for (int p = 0; p < kCells; ++p)
    CHECK(got.array()[p] == doctest::Approx(want[p]).epsilon(1e-10));
}

TEST_CASE("and/or are the elementwise lattice operations") {
  auto stream = Rng(20).stream("ab");
  for (int trial = 0; trial < 50; ++trial) {
    TensorData<double> ta = testutil::random_tensor<double>(Shape{kH, kW}, -1.0, 2.0, stream);
    TensorData<double> tb = testutil::random_tensor<double>(Shape{kH, kW}, -1.0, 2.0, stream);
    Graph<double> g;
    Value<double> a = g.constant(ta), b = g.constant(tb);
    Value<double> lo = nmnd::module_and(a, b);
    Value<double> hi = nmnd::module_or(a, b);
    Value<double> lo_r = nmnd::module_and(b, a);
    Value<double> hi_r = nmnd::module_or(b, a);
    Value<double> idem = nmnd::module_and(a, a);
    Value<double> idem_o = nmnd::module_or(a, a);
    for (int p = 0; p < kCells; ++p) {
      CHECK(lo.array()[p] == std::min(ta.v[p], tb.v[p]));
      CHECK(hi.array()[p] == std::max(ta.v[p], tb.v[p]));
      CHECK(lo.array()[p] == lo_r.array()[p]);
      CHECK(hi.array()[p] == hi_r.array()[p]);
      CHECK(idem.array()[p] == ta.v[p]);
      CHECK(idem_o.array()[p] == ta.v[p]);
      CHECK(lo.array()[p] <= ta.v[p]);
      CHECK(hi.array()[p] >= tb.v[p]);
    }
  }
}

TEST_CASE("not yields the normalized complement") {
  Graph<double> g;
  SUBCASE("one-hot spreads over the other cells") {
    TensorData<double> a(Shape{2, 2});
    a.v[2] = 1.0;
    Value<double> y = nmnd::module_not(g.constant(a));
    CHECK(y.array()[2] == 0.0);
    for (int p : {0, 1, 3}) CHECK(y.array()[p] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  SUBCASE("all ones complements to zero mass and falls back to uniform") {
    Value<double> y = nmnd::module_not(g.constant(nmnd::tensor_full<double>(Shape{2, 2}, 1.0)));
    for (int p = 0; p < 4; ++p) CHECK(y.array()[p] == 0.25);
  }
  SUBCASE("uniform is a fixed point") {
    Value<double> y = nmnd::module_not(g.constant(nmnd::tensor_full<double>(Shape{3, 4}, 0.25)));
    for (int p = 0; p < kCells; ++p)
      CHECK(y.array()[p] == doctest::Approx(1.0 / kCells).epsilon(1e-12));
  }
  SUBCASE("inputs outside [0,1] are clamped first") {
    TensorData<double> a(Shape{1, 2});
    a.v[0] = 2.5;
    a.v[1] = 0.3;
    TensorData<double> b(Shape{1, 2});
    b.v[0] = 1.0;
    b.v[1] = 0.3;
    Value<double> ya = nmnd::module_not(g.constant(a));
    Value<double> yb = nmnd::module_not(g.constant(b));
    CHECK(ya.array()[0] == yb.array()[0]);
    CHECK(ya.array()[1] == yb.array()[1]);
    TensorData<double> c(Shape{1, 2});
    c.v[0] = -3.0;  // clamps to 0, complement 1
    c.v[1] = 1.0;   // complement 0
    Value<double> yc = nmnd::module_not(g.constant(c));
    CHECK(yc.array()[0] == 1.0);
    CHECK(yc.array()[1] == 0.0);
  }
  SUBCASE("output is a distribution for arbitrary inputs") {
    auto stream = Rng(21).stream("a");
    for (int trial = 0; trial < 100; ++trial) {
      TensorData<double> a = testutil::random_tensor<double>(Shape{kH, kW}, -0.5, 1.5, stream);
      Value<double> y = nmnd::module_not(g.constant(a));
      CHECK(y.array().minCoeff() >= 0.0);
      CHECK(y.array().sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("exclude is exactly the find/not/and composition") {
  ParameterStore<double> store = make_store(5);
  TensorData<double> x_vis = random_vis(22);
  TensorData<double> x_txt = random_txt(23);
  auto stream = Rng(24).stream("a");
  for (int trial = 0; trial < 20; ++trial) {
    TensorData<double> a = testutil::random_tensor<double>(Shape{kH, kW}, -0.5, 1.5, stream);
    Graph<double> g;
    Value<double> ex = nmnd::module_exclude(g, store, g.constant(a), g.constant(x_vis),
                                            g.constant(x_txt));
    Value<double> manual = nmnd::module_and(
        nmnd::module_find(g, store, g.constant(x_vis), g.constant(x_txt)),
        nmnd::module_not(g.constant(a)));
    double max_abs_diff = (ex.array() - manual.array()).abs().maxCoeff();
    CHECK(max_abs_diff == 0.0);
  }
}

TEST_CASE("exist is an affine readout of the flattened map") {
  ParameterStore<double> store = make_store(6);
  auto stream = Rng(25).stream("a");
  TensorData<double> a = testutil::random_tensor<double>(Shape{kH, kW}, -1.0, 1.0, stream);
  Graph<double> g;
  Value<double> y = nmnd::module_exist(g, store, g.constant(a));
  REQUIRE(y.shape() == Shape{kDCtx});
  std::vector<double> want = exist_direct(store, to_vec(a));
  for (int i = 0; i < kDCtx; ++i)
    CHECK(y.array()[i] == doctest::Approx(want[i]).epsilon(1e-10));
  // Zero map with zero bias reads out exactly zero.
  nmnd::init_constant(store.at("mod.exist.b"), 0.0);
  Value<double> z = nmnd::module_exist(g, store, g.constant(TensorData<double>(Shape{kH, kW})));
  CHECK(z.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("describe matches the reference and honors one-hot attention") {
  ParameterStore<double> store = make_store(7);
  TensorData<double> x_vis = random_vis(26);
  TensorData<double> x_txt = random_txt(27);
  auto stream = Rng(28).stream("a");
  TensorData<double> a = testutil::random_tensor<double>(Shape{kH, kW}, -0.5, 1.5, stream);
  Graph<double> g;
  Value<double> y = nmnd::module_describe(g, store, g.constant(a), g.constant(x_vis),
                                          g.constant(x_txt));
  REQUIRE(y.shape() == Shape{kDCtx});
  std::vector<double> want = describe_direct(store, to_vec(a), x_vis, to_vec(x_txt));
  for (int i = 0; i < kDCtx; ++i)
    CHECK(y.array()[i] == doctest::Approx(want[i]).epsilon(1e-10));

  // One-hot: output is W1((W2 x_vis[:,p]) * (W3 x_txt)) with no bias term.
  const int hot = 5;
  TensorData<double> onehot(Shape{kH, kW});
  onehot.v[hot] = 1.0;
  std::vector<double> col(nmnd::kVisChannels);
  for (int c = 0; c < nmnd::kVisChannels; ++c) col[c] = x_vis.v[c * kCells + hot];
  std::vector<double> t1 = mv(store.at("mod.describe.w2"), col);
  std::vector<double> t2 = mv(store.at("mod.describe.w3"), to_vec(x_txt));
  std::vector<double> prod(kDCtx);
  for (int i = 0; i < kDCtx; ++i) prod[i] = t1[i] * t2[i];
  std::vector<double> closed = mv(store.at("mod.describe.w1"), prod);
  Value<double> yh = nmnd::module_describe(g, store, g.constant(onehot), g.constant(x_vis),
                                           g.constant(x_txt));
  for (int i = 0; i < kDCtx; ++i)
    CHECK(yh.array()[i] == doctest::Approx(closed[i]).epsilon(1e-10));

  // The simplex projection makes Describe invariant to positive rescaling.
  TensorData<double> doubled = a;
  doubled.v *= 2.0;
  Value<double> y2 = nmnd::module_describe(g, store, g.constant(doubled), g.constant(x_vis),
                                           g.constant(x_txt));
  for (int i = 0; i < kDCtx; ++i)
    CHECK(y2.array()[i] == doctest::Approx(y.array()[i]).epsilon(1e-12));
}

TEST_CASE("count reads the flattened map with its extremes appended") {
  ParameterStore<double> store = make_store(8);
  auto stream = Rng(29).stream("a");
  TensorData<double> a = testutil::random_tensor_distinct<double>(Shape{kH, kW}, 0.01, stream);
  Graph<double> g;
  Value<double> y = nmnd::module_count(g, store, g.constant(a));
  REQUIRE(y.shape() == Shape{kDCtx});
  std::vector<double> want = count_direct(store, to_vec(a));
  for (int i = 0; i < kDCtx; ++i)
    CHECK(y.array()[i] == doctest::Approx(want[i]).epsilon(1e-10));

  // Constant map: every feature column sees the same value, so the readout
  // collapses to (sum of weights) * c + b.
  const double c = 0.7;
  Value<double> yc = nmnd::module_count(g, store, g.constant(nmnd::tensor_full<double>(
                                                      Shape{kH, kW}, c)));
  const Parameter<double>& W = store.at("mod.count.w");
  for (int i = 0; i < kDCtx; ++i) {
    double wsum = 0;
    for (int j = 0; j < kCells + 2; ++j) wsum += W.value[i * (kCells + 2) + j];
    CHECK(yc.array()[i] ==
          doctest::Approx(wsum * c + store.at("mod.count.b").value[i]).epsilon(1e-10));
  }
}

TEST_CASE("module algebra holds over many random maps") {
  auto stream = Rng(30).stream("maps");
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    TensorData<float> ta = testutil::random_tensor<float>(Shape{kH, kW}, -1.0f, 2.0f, stream);
    TensorData<float> tb = testutil::random_tensor<float>(Shape{kH, kW}, -1.0f, 2.0f, stream);
    Graph<float> g(false);
    Value<float> a = g.constant(ta), b = g.constant(tb);
    ArrayX<float> a_and = nmnd::module_and(a, b).array();
    ArrayX<float> a_or = nmnd::module_or(a, b).array();
    CHECK((nmnd::module_and(a, a).array() == ta.v).all());
    CHECK((nmnd::module_or(a, a).array() == ta.v).all());
    CHECK((nmnd::module_and(b, a).array() == a_and).all());
    CHECK((nmnd::module_or(b, a).array() == a_or).all());
    CHECK((a_and <= a_or).all());
    float not_sum = nmnd::module_not(a).array().sum();
    CHECK(std::abs(not_sum - 1.0f) <= 1e-6f);
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("module gradients match finite differences") {
  ParameterStore<double> store = make_store(9);
  TensorData<double> x_vis = random_vis(40);
  TensorData<double> x_txt = random_txt(41);
  auto astream = Rng(42).stream("a");
  // Attention with entries away from zero (simplex-projection kink) and a
  // guaranteed positive part.
  TensorData<double> a = testutil::random_tensor_nonzero<double>(Shape{kH, kW}, 0.05, 1.0,
                                                                 astream);
  a.v[0] = std::abs(a.v[0]);
  auto mixstream = Rng(43).stream("mix");
  TensorData<double> mix_map = testutil::random_tensor<double>(Shape{kH, kW}, -1.0, 1.0,
                                                               mixstream);
  TensorData<double> mix_ctx = testutil::random_tensor<double>(Shape{kDCtx}, -1.0, 1.0,
                                                               mixstream);

  // A 1e-7-scale parameter step moves any pre-ReLU value by well under
  // 1e-7, so margins above 1e-6 keep the finite difference on one linear
  // piece (the three-way relocate product concentrates near zero, hence the
  // small but still safe bound).
  double margin = 0;
  (void)find_direct(store, x_vis, to_vec(x_txt), &margin);
  REQUIRE(margin > 2e-5);
  (void)relocate_direct(store, to_vec(a), x_vis, to_vec(x_txt), &margin, nullptr);
  REQUIRE(margin > 1e-6);

  std::string where;
  SUBCASE("find") {
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(
          nmnd::module_find(g, store, g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_map));
    };
    double worst = param_fd_worst(store, build, "mod.find", &where);
    INFO("worst at ", where);
    CHECK(worst < 1e-6);
  }
  SUBCASE("relocate, including the attention input") {
    auto build_in = [&](Graph<double>& g, const std::vector<Value<double>>& in) {
      return nmnd::ops::dot(
          nmnd::module_relocate(g, store, in[0], g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_map));
    };
    auto rep = testutil::graph_grad_check<double>(build_in, {a}, 1e-6);
    INFO("input gradient worst: ", rep.worst);
    CHECK(rep.max_rel_err < 1e-5);
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(
          nmnd::module_relocate(g, store, g.constant(a), g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_map));
    };
    double worst = param_fd_worst(store, build, "mod.relocate", &where);
    INFO("worst at ", where);
    CHECK(worst < 1e-6);
  }
  SUBCASE("describe, including the attention input") {
    auto build_in = [&](Graph<double>& g, const std::vector<Value<double>>& in) {
      return nmnd::ops::dot(
          nmnd::module_describe(g, store, in[0], g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_ctx));
    };
    auto rep = testutil::graph_grad_check<double>(build_in, {a}, 1e-6);
    CHECK(rep.max_rel_err < 1e-5);
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(
          nmnd::module_describe(g, store, g.constant(a), g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_ctx));
    };
    double worst = param_fd_worst(store, build, "mod.describe", &where);
    INFO("worst at ", where);
    CHECK(worst < 1e-6);
  }
  SUBCASE("exist") {
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(nmnd::module_exist(g, store, g.constant(a)), g.constant(mix_ctx));
    };
    double worst = param_fd_worst(store, build, "mod.exist", &where);
    CHECK(worst < 1e-6);
  }
  SUBCASE("count") {
    auto dstream = Rng(44).stream("d");
    TensorData<double> ad = testutil::random_tensor_distinct<double>(Shape{kH, kW}, 0.01,
                                                                     dstream);
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(nmnd::module_count(g, store, g.constant(ad)), g.constant(mix_ctx));
    };
    double worst = param_fd_worst(store, build, "mod.count", &where);
    CHECK(worst < 1e-6);
    auto build_in = [&](Graph<double>& g, const std::vector<Value<double>>& in) {
      return nmnd::ops::dot(nmnd::module_count(g, store, in[0]), g.constant(mix_ctx));
    };
    auto rep = testutil::graph_grad_check<double>(build_in, {ad}, 1e-6);
    CHECK(rep.max_rel_err < 1e-5);
  }
  SUBCASE("not, away from the clamp kinks") {
    auto nstream = Rng(45).stream("n");
    TensorData<double> an(Shape{kH, kW});
    for (int p = 0; p < kCells; ++p) an.v[p] = nstream.uniform(0.05, 0.95);
    auto build_in = [&](Graph<double>& g, const std::vector<Value<double>>& in) {
      return nmnd::ops::dot(nmnd::module_not(in[0]), g.constant(mix_map));
    };
    auto rep = testutil::graph_grad_check<double>(build_in, {an}, 1e-6);
    CHECK(rep.max_rel_err < 1e-5);
  }
  SUBCASE("exclude reuses find's parameters") {
    // The And kink sits where the two branches tie; verify a gap.
    std::vector<double> fd = find_direct(store, x_vis, to_vec(x_txt), nullptr);
    std::vector<double> comp(kCells);
    for (int p = 0; p < kCells; ++p) comp[p] = 1.0 - std::clamp(a.v[p], 0.0, 1.0);
    std::vector<double> nd = normalize_direct(comp);
    double gap = 1e30;
    for (int p = 0; p < kCells; ++p) gap = std::min(gap, std::abs(fd[p] - nd[p]));
    REQUIRE(gap > 1e-3);
    auto build = [&](Graph<double>& g) {
      return nmnd::ops::dot(
          nmnd::module_exclude(g, store, g.constant(a), g.constant(x_vis), g.constant(x_txt)),
          g.constant(mix_map));
    };
    double worst = param_fd_worst(store, build, "mod.find", &where);
    INFO("worst at ", where);
    CHECK(worst < 1e-6);
  }
}

}  // namespace

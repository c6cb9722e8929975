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

// Text-encoder suite: embedding lookups and LSTM assemblies against the
// gate-level reference, the history-memory contract (symmetry, singletons,
// the disabled short-circuit), and gradient flow through every encoder.

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "nmnd/seq.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace {

using nmnd::ArrayX;
using nmnd::Graph;
using nmnd::ParameterStore;
using nmnd::Rng;
using nmnd::Shape;
using nmnd::TensorData;
using nmnd::Value;

constexpr int kVq = 30, kVa = 12;  // small vocabularies for the tests

ParameterStore<double> make_store(std::uint64_t seed) {
  ParameterStore<double> store;
  nmnd::register_seq(store, Rng(seed), kVq, kVa);
  return store;
}

std::vector<double> slice(const ArrayX<double>& a, int off, int len) {
  return std::vector<double>(a.data() + off, a.data() + off + len);
}

/// Gate-level run of one of the registered LSTMs over embedding rows pulled
/// straight from the store tables.
std::vector<double> lstm_over_rows(ParameterStore<double>& store, const std::string& base,
                                   const std::vector<std::vector<double>>& inputs) {
  const auto& wx = store.at(base + ".wx").value;
  const auto& wh = store.at(base + ".wh").value;
  const auto& b = store.at(base + ".b").value;
  std::vector<double> wxv(wx.data(), wx.data() + wx.size());
  std::vector<double> whv(wh.data(), wh.data() + wh.size());
  std::vector<double> bv(b.data(), b.data() + b.size());
  std::vector<double> h(nmnd::kLstmHidden, 0.0), c(nmnd::kLstmHidden, 0.0), h2, c2;
  for (const auto& x : inputs) {
    oracle::lstm_direct(x, h, c, wxv, whv, bv, h2, c2);
    h = h2;
    c = c2;
  }
  return h;
}

TEST_CASE("text-stack registration shapes") {
  ParameterStore<double> store = make_store(1);
  CHECK(store.at("embed.question").shape == Shape{kVq, 32});
  CHECK(store.at("embed.answer").shape == Shape{kVa + 1, 32});  // + stop row
  for (const char* base : {"enc.q", "enc.hist", "enc.ref", "enc.cand"}) {
    CHECK(store.at(std::string(base) + ".wx").shape == Shape{256, 32});
    CHECK(store.at(std::string(base) + ".wh").shape == Shape{256, 64});
    CHECK(store.at(std::string(base) + ".b").shape == Shape{256});
  }
  CHECK(store.at("enc.ref.proj.w").shape == Shape{32, 64});
  CHECK(store.at("enc.ref.proj.b").shape == Shape{32});
  CHECK(store.at("mem.fuse.w1").shape == Shape{64, 128});
  CHECK(store.at("mem.fuse.b1").shape == Shape{64});
  CHECK(store.at("mem.fuse.w2").shape == Shape{64, 64});
  CHECK(store.at("mem.fuse.b2").shape == Shape{64});
}

TEST_CASE("question encoding: lookups, last-state summary, determinism") {
  ParameterStore<double> store = make_store(2);
  std::vector<int> ids = {3, 0, 17, 5, 3};
  Graph<double> g;
  auto enc = nmnd::encode_question(g, store, ids);
  const int T = static_cast<int>(ids.size());
  REQUIRE(enc.raw.shape() == Shape{T, 32});
  REQUIRE(enc.word_states.shape() == Shape{T, 64});
  REQUIRE(enc.q.shape() == Shape{64});

  // Raw rows are exactly the table rows (repeated id -> identical rows).
  const auto& table = store.at("embed.question").value;
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < 32; ++j)
      CHECK(enc.raw.array()[t * 32 + j] == table[ids[t] * 32 + j]);

  // The summary equals the last word state bitwise.
  for (int j = 0; j < 64; ++j)
    CHECK(enc.q.array()[j] == enc.word_states.array()[(T - 1) * 64 + j]);

  // Gate-level reference for the final state.
  std::vector<std::vector<double>> inputs;
  for (int id : ids) inputs.push_back(slice(table, id * 32, 32));
  std::vector<double> want = lstm_over_rows(store, "enc.q", inputs);
  for (int j = 0; j < 64; ++j)
    CHECK(enc.q.array()[j] == doctest::Approx(want[j]).epsilon(1e-12));

  // Identical inputs on a fresh graph give identical encodings.
  Graph<double> g2;
  auto enc2 = nmnd::encode_question(g2, store, ids);
  CHECK((enc2.word_states.array() == enc.word_states.array()).all());

  CHECK_THROWS_AS(nmnd::encode_question(g, store, {}), nmnd::DomainError);
}

TEST_CASE("history rounds append the answer embedding when present") {
  ParameterStore<double> store = make_store(3);
  std::vector<int> qids = {4, 9, 2};
  const int ans = 7;
  Graph<double> g;
  Value<double> with = nmnd::encode_history_round(g, store, qids, ans);
  Value<double> without = nmnd::encode_history_round(g, store, qids, -1);
  REQUIRE(with.shape() == Shape{64});
  REQUIRE(without.shape() == Shape{64});

  const auto& qt = store.at("embed.question").value;
  const auto& at = store.at("embed.answer").value;
  std::vector<std::vector<double>> inputs;
  for (int id : qids) inputs.push_back(slice(qt, id * 32, 32));
  std::vector<double> want_no = lstm_over_rows(store, "enc.hist", inputs);
  inputs.push_back(slice(at, ans * 32, 32));
  std::vector<double> want_yes = lstm_over_rows(store, "enc.hist", inputs);
  for (int j = 0; j < 64; ++j) {
    CHECK(without.array()[j] == doctest::Approx(want_no[j]).epsilon(1e-12));
    CHECK(with.array()[j] == doctest::Approx(want_yes[j]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(nmnd::encode_history_round(g, store, {}, 3), nmnd::DomainError);
}

TEST_CASE("history memory: weights, fusion, and the disabled short-circuit") {
  ParameterStore<double> store = make_store(4);
  Graph<double> g;
  auto s = Rng(5).stream("h");
  Value<double> q = g.constant(testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s));

  SUBCASE("disabled or empty history hands back the same node") {
    Value<double> h0 = g.constant(testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s));
    auto off = nmnd::build_history_memory(g, store, q, {h0}, false);
    CHECK(off.q_hat.id() == q.id());
    CHECK_FALSE(off.beta.valid());
    auto empty = nmnd::build_history_memory(g, store, q, {}, true);
    CHECK(empty.q_hat.id() == q.id());
  }
  SUBCASE("single round takes all the weight") {
    Value<double> h0 = g.constant(testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s));
    auto mem = nmnd::build_history_memory(g, store, q, {h0}, true);
    REQUIRE(mem.beta.size() == 1);
    CHECK(mem.beta.array()[0] == 1.0);
    for (int j = 0; j < 64; ++j) CHECK(mem.fused.array()[j] == h0.array()[j]);
  }
  SUBCASE("identical rounds split the weight evenly") {
    TensorData<double> ht = testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s);
    Value<double> h0 = g.constant(ht), h1 = g.constant(ht);
    auto mem = nmnd::build_history_memory(g, store, q, {h0, h1}, true);
    REQUIRE(mem.beta.size() == 2);
    CHECK(mem.beta.array()[0] == 0.5);
    CHECK(mem.beta.array()[1] == 0.5);
  }
  SUBCASE("fusion matches the loop-level reference") {
    TensorData<double> h0t = testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s);
    TensorData<double> h1t = testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s);
    TensorData<double> qt = testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, s);
    Graph<double> g2;
    auto mem = nmnd::build_history_memory(g2, store, g2.constant(qt),
                                          {g2.constant(h0t), g2.constant(h1t)}, true);
    double s0 = 0, s1 = 0;
    for (int j = 0; j < 64; ++j) {
      s0 += qt.v[j] * h0t.v[j];
      s1 += qt.v[j] * h1t.v[j];
    }
    std::vector<double> beta = oracle::softmax_direct({s0, s1});
    CHECK(mem.beta.array()[0] == doctest::Approx(beta[0]).epsilon(1e-12));
    CHECK(mem.beta.array()[1] == doctest::Approx(beta[1]).epsilon(1e-12));
    // q_hat = W2 relu(W1 [q; fused] + b1) + b2, all loop-level.
    std::vector<double> in(128);
    for (int j = 0; j < 64; ++j) in[j] = qt.v[j];
    for (int j = 0; j < 64; ++j) in[64 + j] = beta[0] * h0t.v[j] + beta[1] * h1t.v[j];
    const auto& w1 = store.at("mem.fuse.w1").value;
    const auto& b1 = store.at("mem.fuse.b1").value;
    const auto& w2 = store.at("mem.fuse.w2").value;
    const auto& b2 = store.at("mem.fuse.b2").value;
    for (int i = 0; i < 64; ++i) {
      double want = b2[i];
      for (int h = 0; h < 64; ++h) {
        double acc = b1[h];
        for (int j = 0; j < 128; ++j) acc += w1[h * 128 + j] * in[j];
        want += w2[i * 64 + h] * std::max(acc, 0.0);
      }
      CHECK(mem.q_hat.array()[i] == doctest::Approx(want).epsilon(1e-10));
    }
    CHECK(mem.beta.array().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("answer-pair keys project to embedding width") {
  ParameterStore<double> store = make_store(6);
  Graph<double> g;
  std::vector<int> qids = {1, 8, 3, 3};
  Value<double> key = nmnd::encode_answer_pair(g, store, qids, 5);
  REQUIRE(key.shape() == Shape{32});

  const auto& qt = store.at("embed.question").value;
  const auto& at = store.at("embed.answer").value;
  std::vector<std::vector<double>> inputs;
  for (int id : qids) inputs.push_back(slice(qt, id * 32, 32));
  inputs.push_back(slice(at, 5 * 32, 32));
  std::vector<double> last = lstm_over_rows(store, "enc.ref", inputs);
  const auto& pw = store.at("enc.ref.proj.w").value;
  const auto& pb = store.at("enc.ref.proj.b").value;
  for (int i = 0; i < 32; ++i) {
    double want = pb[i];
    for (int j = 0; j < 64; ++j) want += pw[i * 64 + j] * last[j];
    CHECK(key.array()[i] == doctest::Approx(want).epsilon(1e-12));
  }

  // Different answers give different keys.
  Value<double> other = nmnd::encode_answer_pair(g, store, qids, 6);
  CHECK((key.array() - other.array()).abs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(nmnd::encode_answer_pair(g, store, qids, -1), nmnd::DomainError);
  CHECK_THROWS_AS(nmnd::encode_answer_pair(g, store, {}, 2), nmnd::DomainError);
}

TEST_CASE("candidate encoder runs the dedicated LSTM over answer tokens") {
  ParameterStore<double> store = make_store(7);
  Graph<double> g;
  Value<double> one = nmnd::encode_candidate(g, store, {4});
  REQUIRE(one.shape() == Shape{64});
  const auto& at = store.at("embed.answer").value;
  std::vector<double> want = lstm_over_rows(store, "enc.cand", {slice(at, 4 * 32, 32)});
  for (int j = 0; j < 64; ++j)
    CHECK(one.array()[j] == doctest::Approx(want[j]).epsilon(1e-12));
  Value<double> two = nmnd::encode_candidate(g, store, {4, kVa});  // with stop row
  CHECK((one.array() - two.array()).abs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(nmnd::encode_candidate(g, store, {}), nmnd::DomainError);
}

TEST_CASE("encoder gradients match finite differences") {
  ParameterStore<double> store = make_store(8);
  auto ms = Rng(9).stream("mix");
  TensorData<double> mix64 = testutil::random_tensor<double>(Shape{64}, -1.0, 1.0, ms);
  TensorData<double> mix32 = testutil::random_tensor<double>(Shape{32}, -1.0, 1.0, ms);
  std::vector<int> ids = {2, 11, 0, 7};
  std::vector<int> hist = {5, 1, 9};

  auto build = [&](Graph<double>& g) {
    auto enc = nmnd::encode_question(g, store, ids);
    Value<double> h0 = nmnd::encode_history_round(g, store, hist, 3);
    Value<double> h1 = nmnd::encode_history_round(g, store, hist, 8);
    auto mem = nmnd::build_history_memory(g, store, enc.q, {h0, h1}, true);
    Value<double> key = nmnd::encode_answer_pair(g, store, ids, 2);
    Value<double> cand = nmnd::encode_candidate(g, store, {6});
    using namespace nmnd::ops;
    return add(add(dot(mem.q_hat, g.constant(mix64)), dot(key, g.constant(mix32))),
               dot(cand, g.constant(mix64)));
  };
  std::string where;
  for (const char* prefix : {"embed.", "enc.", "mem."}) {
    double worst = testutil::param_fd_worst(store, build, prefix, &where);
    INFO("prefix ", prefix, " worst at ", where);
    CHECK(worst < 1e-6);
  }
}

}  // namespace

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
#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "nmnd/graph.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/params.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

/// Where a pool entry came from. Caption entries belong to round 0; answer
/// entries carry the round of the question/answer pair that produced them.
enum class PoolSource { QuestionFind, CaptionFind, Answer };

inline const char* pool_source_name(PoolSource s) {
  switch (s) {
    case PoolSource::QuestionFind: return "question-find";
    case PoolSource::CaptionFind: return "caption-find";
    case PoolSource::Answer: return "answer";
  }
  return "?";
}

/// One remembered entity: a text key, the attention it grounded to, and
/// when it entered the dialog.
template <typename S>
struct PoolEntry {
  Value<S> key;        // text embedding, length d_t
  Value<S> attention;  // [H', W'], matches the feature grid
  int round_introduced = 0;
  PoolSource source = PoolSource::QuestionFind;
};

/// The per-dialog reference pool. Entries are append-only in execution
/// order and never deduplicated; the Refer scorer arbitrates between
/// lookalikes. One pool per dialog: no state crosses dialogs.
template <typename S>
class ReferencePool {
 public:
  int current_round = 0;

  void insert_find(Value<S> key, Value<S> attention, int round, PoolSource source) {
    entries_.push_back(PoolEntry<S>{std::move(key), std::move(attention), round, source});
  }

  /// Appends the (Q, A) encoding of round `round` with the attention that
  /// fed that round's context module. Round 0 is the caption and has no
  /// answer, so it no-ops.
  void insert_answer(Value<S> h_ref, Value<S> last_attention, int round) {
    if (round <= 0) return;
    entries_.push_back(
        PoolEntry<S>{std::move(h_ref), std::move(last_attention), round, PoolSource::Answer});
  }

  const std::vector<PoolEntry<S>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  int count_source(PoolSource s) const {
    int n = 0;
    for (const auto& e : entries_)
      if (e.source == s) ++n;
    return n;
  }

 private:
  std::vector<PoolEntry<S>> entries_;
};

/// What Refer hands back: the blended attention, the per-entry weights
/// (surfaced for inspection; empty when the pool was empty), and whether
/// the uniform fallback fired.
template <typename S>
struct ReferOutcome {
  Value<S> attention;
  Value<S> scores;
  bool empty_pool = false;
};

/// Registers the Refer scorer: a two-layer MLP (hidden 128, ReLU, scalar
/// out) over [x_txt, x_p] plus, when the round-distance feature is on, the
/// scalar round gap. The input width bakes the flag into the stored shapes.
template <typename S>
void register_refer(ParameterStore<S>& store, const Rng& rng, int d_txt, int d_pool,
                    bool use_seq_delta, int hidden = 128) {
  const int in = d_txt + d_pool + (use_seq_delta ? 1 : 0);
  Parameter<S>& w1 = store.create("refer.mlp.w1", Shape{hidden, in});
  init_fan_in(w1, in, rng);
  store.create("refer.mlp.b1", Shape{hidden});
  Parameter<S>& w2 = store.create("refer.mlp.w2", Shape{1, hidden});
  init_fan_in(w2, hidden, rng);
  store.create("refer.mlp.b2", Shape{1});
}

/// Refer: scores every pool entry with the MLP, softmax-normalizes the
/// scores, and blends the stored attentions. An empty pool falls back to
/// uniform attention over the [fh, fw] grid and raises the outcome flag.
template <typename S>
ReferOutcome<S> refer(Graph<S>& g, ParameterStore<S>& store, const ReferencePool<S>& pool,
                      Value<S> x_txt, bool use_seq_delta, int fh, int fw) {
  using namespace ops;
  ReferOutcome<S> out;
  if (pool.empty()) {
    out.attention = g.constant(
        tensor_full<S>(Shape{fh, fw}, S(1) / static_cast<S>(fh * fw)));
    out.empty_pool = true;
    return out;
  }
  Value<S> w1 = g.param(store, "refer.mlp.w1");
  Value<S> b1 = g.param(store, "refer.mlp.b1");
  Value<S> w2 = g.param(store, "refer.mlp.w2");
  Value<S> b2 = g.param(store, "refer.mlp.b2");
  std::vector<Value<S>> scores;
  std::vector<Value<S>> maps;
  scores.reserve(pool.size());
  maps.reserve(pool.size());
  for (const PoolEntry<S>& e : pool.entries()) {
    std::vector<Value<S>> parts = {x_txt, e.key};
    if (use_seq_delta) {
      const int gap = std::abs(pool.current_round - e.round_introduced);
      parts.push_back(g.scalar_const(static_cast<S>(gap)));
    }
    scores.push_back(mlp2(concat(parts), w1, b1, w2, b2));
    maps.push_back(reshape(e.attention, Shape{fh * fw}));
  }
  out.scores = softmax(concat(scores));
  out.attention = reshape(weighted_rowsum(stack_rows(maps), out.scores), Shape{fh, fw});
  return out;
}

}  // namespace nmnd

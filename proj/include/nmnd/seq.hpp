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

#include <string>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/ops_rnn.hpp"
#include "nmnd/params.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

/// Question-side text dimensions: d_e token embeddings feeding d_h LSTMs.
inline constexpr int kEmbedDim = 32;
inline constexpr int kLstmHidden = 64;

/// Registers the text stack shared by program generation and answering:
/// the question/answer embedding tables and the four single-layer LSTMs
/// (question, history, answer-pair, candidate), plus the history-fusion
/// MLP and the answer-pair projection down to key width. The answer table
/// carries one extra row used as the language-model stop/start symbol.
template <typename S>
void register_seq(ParameterStore<S>& store, const Rng& rng, int question_vocab,
                  int answer_vocab, int d_e = kEmbedDim, int d_h = kLstmHidden) {
  auto table = [&](const std::string& name, int rows, int cols) {
    Parameter<S>& p = store.create(name, Shape{rows, cols});
    init_uniform(p, S(-0.1), S(0.1), rng);
  };
  auto lstm = [&](const std::string& base, int din) {
    Parameter<S>& wx = store.create(base + ".wx", Shape{4 * d_h, din});
    init_fan_in(wx, din, rng);
    Parameter<S>& wh = store.create(base + ".wh", Shape{4 * d_h, d_h});
    init_fan_in(wh, d_h, rng);
    store.create(base + ".b", Shape{4 * d_h});
  };
  table("embed.question", question_vocab, d_e);
  table("embed.answer", answer_vocab + 1, d_e);
  lstm("enc.q", d_e);
  lstm("enc.hist", d_e);
  lstm("enc.ref", d_e);
  lstm("enc.cand", d_e);
  Parameter<S>& pw = store.create("enc.ref.proj.w", Shape{d_e, d_h});
  init_fan_in(pw, d_h, rng);
  store.create("enc.ref.proj.b", Shape{d_e});
  Parameter<S>& f1 = store.create("mem.fuse.w1", Shape{d_h, 2 * d_h});
  init_fan_in(f1, 2 * d_h, rng);
  store.create("mem.fuse.b1", Shape{d_h});
  Parameter<S>& f2 = store.create("mem.fuse.w2", Shape{d_h, d_h});
  init_fan_in(f2, d_h, rng);
  store.create("mem.fuse.b2", Shape{d_h});
}

/// A question run through the encoder: raw embeddings (for the decoder's
/// text summaries), per-word LSTM states, and the final-state summary.
template <typename S>
struct QuestionEncoding {
  Value<S> raw;          // [T, d_e]
  Value<S> word_states;  // [T, d_h]
  Value<S> q;            // [d_h], equals the last word state
};

template <typename S>
QuestionEncoding<S> encode_question(Graph<S>& g, ParameterStore<S>& store,
                                    const std::vector<int>& token_ids) {
  using namespace ops;
  if (token_ids.empty()) throw DomainError("encode_question: empty question");
  QuestionEncoding<S> enc;
  enc.raw = embedding_rows(g.param(store, "embed.question"), token_ids);
  LstmTrace<S> trace = lstm_run(enc.raw, g.param(store, "enc.q.wx"),
                                g.param(store, "enc.q.wh"), g.param(store, "enc.q.b"),
                                kLstmHidden);
  enc.word_states = stack_rows(trace.h);
  enc.q = trace.last_h;
  return enc;
}

/// Encodes one dialog round for the history memory: the round's question
/// (or caption) tokens followed by its answer word when there is one
/// (answer_id < 0 for the caption round). Returns the final hidden state.
template <typename S>
Value<S> encode_history_round(Graph<S>& g, ParameterStore<S>& store,
                              const std::vector<int>& question_ids, int answer_id) {
  using namespace ops;
  if (question_ids.empty()) throw DomainError("encode_history_round: empty round");
  Value<S> rows = embedding_rows(g.param(store, "embed.question"), question_ids);
  int steps = static_cast<int>(question_ids.size());
  if (answer_id >= 0) {
    Value<S> ans = embedding_row(g.param(store, "embed.answer"), answer_id);
    rows = reshape(concat(rows, ans), Shape{steps + 1, kEmbedDim});
    ++steps;
  }
  LstmTrace<S> trace =
      lstm_run(rows, g.param(store, "enc.hist.wx"), g.param(store, "enc.hist.wh"),
               g.param(store, "enc.hist.b"), kLstmHidden);
  return trace.last_h;
}

/// The history-aware question summary. When the memory is disabled or there
/// is no history yet, q_hat is q itself (the same node); beta and fused are
/// left invalid in that case.
template <typename S>
struct HistoryMemory {
  Value<S> beta;   // [t] attention over history rounds
  Value<S> fused;  // [d_h]
  Value<S> q_hat;  // [d_h]
};

template <typename S>
HistoryMemory<S> build_history_memory(Graph<S>& g, ParameterStore<S>& store, Value<S> q,
                                      const std::vector<Value<S>>& round_encodings,
                                      bool use_memory) {
  using namespace ops;
  HistoryMemory<S> mem;
  if (!use_memory || round_encodings.empty()) {
    mem.q_hat = q;
    return mem;
  }
  std::vector<Value<S>> scores;
  scores.reserve(round_encodings.size());
  for (const Value<S>& h : round_encodings) scores.push_back(dot(q, h));
  mem.beta = softmax(concat(scores));
  mem.fused = weighted_rowsum(stack_rows(round_encodings), mem.beta);
  mem.q_hat = mlp2(concat(q, mem.fused), g.param(store, "mem.fuse.w1"),
                   g.param(store, "mem.fuse.b1"), g.param(store, "mem.fuse.w2"),
                   g.param(store, "mem.fuse.b2"));
  return mem;
}

/// Encodes the previous round's (question, answer) pair into a pool key:
/// the answer-pair LSTM's final state projected down to embedding width.
template <typename S>
Value<S> encode_answer_pair(Graph<S>& g, ParameterStore<S>& store,
                            const std::vector<int>& question_ids, int answer_id) {
  using namespace ops;
  if (question_ids.empty()) throw DomainError("encode_answer_pair: empty question");
  if (answer_id < 0) throw DomainError("encode_answer_pair: missing answer id");
  Value<S> rows = embedding_rows(g.param(store, "embed.question"), question_ids);
  Value<S> ans = embedding_row(g.param(store, "embed.answer"), answer_id);
  int steps = static_cast<int>(question_ids.size()) + 1;
  rows = reshape(concat(rows, ans), Shape{steps, kEmbedDim});
  LstmTrace<S> trace =
      lstm_run(rows, g.param(store, "enc.ref.wx"), g.param(store, "enc.ref.wh"),
               g.param(store, "enc.ref.b"), kLstmHidden);
  return affine(g.param(store, "enc.ref.proj.w"), trace.last_h,
                g.param(store, "enc.ref.proj.b"));
}

/// Encodes one answer candidate (answer-vocabulary token ids) with the
/// dedicated candidate LSTM; the score side of the discriminative decoder.
template <typename S>
Value<S> encode_candidate(Graph<S>& g, ParameterStore<S>& store,
                          const std::vector<int>& answer_ids) {
  using namespace ops;
  if (answer_ids.empty()) throw DomainError("encode_candidate: empty candidate");
  Value<S> rows = embedding_rows(g.param(store, "embed.answer"), answer_ids);
  LstmTrace<S> trace =
      lstm_run(rows, g.param(store, "enc.cand.wx"), g.param(store, "enc.cand.wh"),
               g.param(store, "enc.cand.b"), kLstmHidden);
  return trace.last_h;
}

}  // namespace nmnd

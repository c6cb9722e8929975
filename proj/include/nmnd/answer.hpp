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

// Answer decoders and the combined objective. Three interchangeable read-outs
// of the context vector: an N-way classifier over the answer vocabulary, a
// discriminative ranker (dot products against candidate encodings), and a
// generative language model scored by total log-likelihood. Ranking ties are
// always broken by candidate index so metrics are deterministic.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/ops_rnn.hpp"
#include "nmnd/params.hpp"
#include "nmnd/ranking.hpp"
#include "nmnd/rng.hpp"

namespace nmnd {

/// Candidate answers for one round: surface forms, their token ids, their
/// encodings from the candidate LSTM, and which one is correct.
template <typename S>
struct AnswerCandidateSet {
  std::vector<std::string> words;
  std::vector<std::vector<int>> token_ids;
  std::vector<Value<S>> encodings;  // K entries of [d_c]
  int gt_index = -1;
};

// ---- N-way classifier ----

template <typename S>
void register_answer_classifier(ParameterStore<S>& store, const Rng& rng, int d_ctx,
                                int n_classes) {
  Parameter<S>& w = store.create("ans.classify.w", Shape{n_classes, d_ctx});
  init_fan_in(w, d_ctx, rng);
  store.create("ans.classify.b", Shape{n_classes});
}

template <typename S>
struct ClassifierOutput {
  Value<S> logits;  // [N]
  Value<S> probs;   // [N], sums to 1
};

/// One dense layer over the context vector plus a softmax.
template <typename S>
ClassifierOutput<S> classify_answer(Graph<S>& g, ParameterStore<S>& store, Value<S> c_t) {
  using namespace ops;
  ClassifierOutput<S> out;
  out.logits = affine(g.param(store, "ans.classify.w"), c_t,
                      g.param(store, "ans.classify.b"));
  out.probs = softmax(out.logits);
  return out;
}

/// Cross-entropy of the classifier against the gt answer word.
template <typename S>
Value<S> classify_nll(Graph<S>& g, ParameterStore<S>& store, Value<S> c_t, int gt_id) {
  const int n = store.at("ans.classify.w").shape[0];
  if (gt_id < 0 || gt_id >= n)
    throw DomainError("classify_nll: answer id " + std::to_string(gt_id) +
                      " outside vocabulary of " + std::to_string(n));
  using namespace ops;
  return nll_logits(affine(g.param(store, "ans.classify.w"), c_t,
                           g.param(store, "ans.classify.b")),
                    gt_id);
}

// ---- Discriminative ranker ----

template <typename S>
struct DiscriminativeResult {
  Value<S> scores;         // [K], score_i = c_t . o_i
  Value<S> nll;            // softmax cross-entropy of the gt candidate
  std::vector<int> order;  // descending score, ties by candidate index
  int gt_rank = 0;         // 1-based
};

template <typename S>
DiscriminativeResult<S> rank_discriminative(Value<S> c_t,
                                            const std::vector<Value<S>>& encodings,
                                            int gt_index) {
  using namespace ops;
  if (encodings.size() < 2)
    throw DomainError("rank_discriminative: need at least two candidates, got " +
                      std::to_string(encodings.size()));
  if (gt_index < 0 || gt_index >= static_cast<int>(encodings.size()))
    throw DomainError("rank_discriminative: gt index " + std::to_string(gt_index) +
                      " out of range");
  DiscriminativeResult<S> out;
  std::vector<Value<S>> dots;
  dots.reserve(encodings.size());
  for (const Value<S>& o : encodings) dots.push_back(dot(c_t, o));
  out.scores = concat(dots);
  out.nll = nll_logits(out.scores, gt_index);
  std::vector<S> plain(out.scores.array().data(),
                       out.scores.array().data() + out.scores.size());
  out.order = descending_order(plain);
  out.gt_rank = rank_of(out.order, gt_index);
  return out;
}

// ---- Generative language model ----

/// Registers the answer language model: an LSTM over answer-word embeddings
/// whose hidden state starts at the context vector, with a projection onto
/// the answer vocabulary plus the stop symbol.
template <typename S>
void register_answer_lm(ParameterStore<S>& store, const Rng& rng, int answer_vocab,
                        int d_e, int d_h) {
  Parameter<S>& wx = store.create("ans.lm.wx", Shape{4 * d_h, d_e});
  init_fan_in(wx, d_e, rng);
  Parameter<S>& wh = store.create("ans.lm.wh", Shape{4 * d_h, d_h});
  init_fan_in(wh, d_h, rng);
  store.create("ans.lm.b", Shape{4 * d_h});
  Parameter<S>& ow = store.create("ans.lm.out.w", Shape{answer_vocab + 1, d_h});
  init_fan_in(ow, d_h, rng);
  store.create("ans.lm.out.b", Shape{answer_vocab + 1});
}

template <typename S>
struct LmScore {
  Value<S> loglik;             // total log-likelihood, summed over tokens
  std::vector<S> step_loglik;  // one entry per token incl. the stop symbol
};

/// Log-likelihood of one candidate under the LM: the hidden state starts at
/// c_t, the first input is the start symbol (the table's extra row), and the
/// sequence must end by predicting stop. An empty candidate scores the stop
/// symbol alone.
template <typename S>
LmScore<S> lm_score_candidate(Graph<S>& g, ParameterStore<S>& store, Value<S> c_t,
                              const std::vector<int>& tokens) {
  using namespace ops;
  Value<S> emb = g.param(store, "embed.answer");
  const int stop = emb.shape()[0] - 1;
  for (int id : tokens)
    if (id < 0 || id >= stop)
      throw DomainError("lm_score_candidate: token id " + std::to_string(id) +
                        " outside the answer vocabulary");
  Value<S> wx = g.param(store, "ans.lm.wx");
  Value<S> wh = g.param(store, "ans.lm.wh");
  Value<S> b = g.param(store, "ans.lm.b");
  Value<S> ow = g.param(store, "ans.lm.out.w");
  Value<S> ob = g.param(store, "ans.lm.out.b");
  const int d_h = wh.shape()[1];

  LmScore<S> out;
  Value<S> h = c_t;
  Value<S> c = g.constant(tensor_zeros<S>(Shape{d_h}));
  Value<S> total;
  int prev = stop;  // doubles as the start symbol
  std::vector<int> targets = tokens;
  targets.push_back(stop);
  for (int target : targets) {
    HC<S> hc = lstm_step(embedding_row(emb, prev), h, c, wx, wh, b);
    h = hc.h;
    c = hc.c;
    Value<S> ll = neg(nll_logits(affine(ow, h, ob), target));
    out.step_loglik.push_back(ll.scalar());
    total = total.valid() ? add(total, ll) : ll;
    prev = target;
  }
  out.loglik = total;
  return out;
}

template <typename S>
struct GenerativeResult {
  std::vector<S> scores;                    // ranking scores per candidate
  std::vector<std::vector<S>> step_loglik;  // per candidate, per token
  Value<S> gt_nll;                          // raw-sum NLL of the gt candidate
  std::vector<int> order;                   // descending score, ties by index
  int gt_rank = 0;                          // 1-based
};

/// Scores every candidate by LM log-likelihood. Ranking scores are the raw
/// sums unless `length_normalize` divides by the token count (incl. stop);
/// the training loss is always the raw-sum NLL of the gt candidate.
template <typename S>
GenerativeResult<S> score_generative(Graph<S>& g, ParameterStore<S>& store, Value<S> c_t,
                                     const std::vector<std::vector<int>>& candidates,
                                     int gt_index, bool length_normalize = false) {
  using namespace ops;
  if (candidates.empty()) throw DomainError("score_generative: no candidates");
  if (gt_index < 0 || gt_index >= static_cast<int>(candidates.size()))
    throw DomainError("score_generative: gt index " + std::to_string(gt_index) +
                      " out of range");
  GenerativeResult<S> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    LmScore<S> sc = lm_score_candidate(g, store, c_t, candidates[i]);
    S score = sc.loglik.scalar();
    if (length_normalize) score /= static_cast<S>(sc.step_loglik.size());
    out.scores.push_back(score);
    out.step_loglik.push_back(sc.step_loglik);
    if (static_cast<int>(i) == gt_index) out.gt_nll = neg(sc.loglik);
  }
  out.order = descending_order(out.scores);
  out.gt_rank = rank_of(out.order, gt_index);
  return out;
}

// ---- Combined objective ----

/// Weights on the four loss components; all default to 1.
template <typename S>
struct LossWeights {
  S q_prog = S(1);  // question program cross-entropy
  S c_prog = S(1);  // caption program cross-entropy
  S c_aux = S(1);   // caption alignment
  S a_dec = S(1);   // answer decoding
};

/// The four component losses of one training unit. Components left invalid
/// (their feature disabled) contribute nothing.
template <typename S>
struct LossBundle {
  Value<S> q_prog, c_prog, c_aux, a_dec;
  Value<S> total;
};

/// total = sum of w_k * L_k over the present components. Zero-weight terms
/// are dropped from the graph entirely.
template <typename S>
Value<S> total_loss(Graph<S>& g, LossBundle<S>& bundle, const LossWeights<S>& w) {
  using namespace ops;
  for (S weight : {w.q_prog, w.c_prog, w.c_aux, w.a_dec})
    if (weight < S(0)) throw ConfigError("loss weights must be non-negative");
  Value<S> total;
  auto add_term = [&](Value<S> term, S weight) {
    if (!term.valid() || weight == S(0)) return;
    Value<S> scaled = scale(term, weight);
    total = total.valid() ? add(total, scaled) : scaled;
  };
  add_term(bundle.q_prog, w.q_prog);
  add_term(bundle.c_prog, w.c_prog);
  add_term(bundle.c_aux, w.c_aux);
  add_term(bundle.a_dec, w.a_dec);
  if (!total.valid()) total = g.scalar_const(S(0));
  bundle.total = total;
  return total;
}

}  // namespace nmnd

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

#include <memory>
#include <string>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/ir.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/ops_rnn.hpp"
#include "nmnd/params.hpp"
#include "nmnd/rng.hpp"
#include "nmnd/seq.hpp"

namespace nmnd {

/// Module-embedding table rows: the ten module tokens plus two start
/// symbols. Question and caption programs share the decoder and differ only
/// in which start symbol primes it.
inline constexpr int kQuestionStartId = kModuleCount;      // 10
inline constexpr int kCaptionStartId = kModuleCount + 1;   // 11
inline constexpr int kModuleEmbedRows = kModuleCount + 2;  // 12

template <typename S>
void register_progdec(ParameterStore<S>& store, const Rng& rng, int d_e = kEmbedDim,
                      int d_h = kLstmHidden) {
  Parameter<S>& emb = store.create("embed.module", Shape{kModuleEmbedRows, d_e});
  init_uniform(emb, S(-0.1), S(0.1), rng);
  Parameter<S>& wx = store.create("dec.lstm.wx", Shape{4 * d_h, d_e});
  init_fan_in(wx, d_e, rng);
  Parameter<S>& wh = store.create("dec.lstm.wh", Shape{4 * d_h, d_h});
  init_fan_in(wh, d_h, rng);
  store.create("dec.lstm.b", Shape{4 * d_h});
  auto dense = [&](const std::string& name, int rows, int cols) {
    Parameter<S>& p = store.create(name, Shape{rows, cols});
    init_fan_in(p, cols, rng);
  };
  dense("dec.att.wd", d_h, d_h);
  dense("dec.att.ww", d_h, d_h);
  Parameter<S>& v = store.create("dec.att.v", Shape{d_h});
  init_fan_in(v, d_h, rng);
  store.create("dec.att.b", Shape{d_h});
  dense("dec.mlp.w1", d_h, 2 * d_h);
  store.create("dec.mlp.b1", Shape{d_h});
  dense("dec.out.w", kModuleCount, d_h);
  store.create("dec.out.b", Shape{kModuleCount});
}

/// One decoder step: the word attention (scores and weights), the raw- and
/// state-side text summaries, the masked token distribution, and the token
/// taken (greedy or forced).
template <typename S>
struct DecodeStep {
  Value<S> attn_scores;   // [T], pre-softmax
  Value<S> alpha;         // [T]
  Value<S> x_txt;         // [d_e], attention over raw embeddings
  Value<S> token_logits;  // [kModuleCount], pre-mask
  Value<S> dist;          // [kModuleCount], masked softmax
  std::shared_ptr<const std::vector<char>> mask;
  int token = -1;
};

template <typename S>
struct DecodeResult {
  std::vector<Module> tokens;
  std::vector<DecodeStep<S>> steps;
};

/// Teacher forcing: the per-step losses summed over the program, plus the
/// same step records decoding would produce (with gt tokens taken).
template <typename S>
struct TeacherForcing {
  Value<S> loss;
  std::vector<DecodeStep<S>> steps;
};

namespace detail {

/// Shared per-step computation given the decoder hidden state.
template <typename S>
DecodeStep<S> decode_step(Graph<S>& g, ParameterStore<S>& store, const QuestionEncoding<S>& enc,
                          Value<S> d, int stack, int budget, bool exclude_refer) {
  using namespace ops;
  DecodeStep<S> step;
  Value<S> proj = rows_affine(enc.word_states, g.param(store, "dec.att.ww"),
                              g.param(store, "dec.att.b"));
  Value<S> keyed =
      tanh_(add_row_broadcast(proj, matvec(g.param(store, "dec.att.wd"), d)));
  step.attn_scores = matvec(keyed, g.param(store, "dec.att.v"));
  step.alpha = softmax(step.attn_scores);
  Value<S> e = weighted_rowsum(enc.word_states, step.alpha);
  step.x_txt = weighted_rowsum(enc.raw, step.alpha);
  Value<S> etil = relu(affine(g.param(store, "dec.mlp.w1"), concat(e, d),
                              g.param(store, "dec.mlp.b1")));
  step.token_logits =
      affine(g.param(store, "dec.out.w"), etil, g.param(store, "dec.out.b"));
  std::vector<char> mask = feasible_mask(stack, budget);
  if (exclude_refer) mask[static_cast<int>(Module::Refer)] = 0;
  step.mask = std::make_shared<const std::vector<char>>(std::move(mask));
  step.dist = masked_softmax(step.token_logits, step.mask);
  return step;
}

inline int stack_after(int stack, Module m) {
  const ModuleInfo& info = module_info(m);
  return stack - info.attention_arity + (info.context_output ? 0 : 1);
}

}  // namespace detail

/// Greedy masked decoding, at most max_len tokens, ending on the context
/// token the mask guarantees. The caption head is selected by start_id.
template <typename S>
DecodeResult<S> decode_program(Graph<S>& g, ParameterStore<S>& store,
                               const QuestionEncoding<S>& enc, Value<S> q_hat, int max_len,
                               int start_id, bool exclude_refer = false) {
  using namespace ops;
  DecodeResult<S> out;
  Value<S> emb = g.param(store, "embed.module");
  Value<S> wx = g.param(store, "dec.lstm.wx");
  Value<S> wh = g.param(store, "dec.lstm.wh");
  Value<S> b = g.param(store, "dec.lstm.b");
  Value<S> h = q_hat;
  Value<S> c = g.constant(tensor_zeros<S>(Shape{kLstmHidden}));
  int prev = start_id;
  int stack = 0;
  for (int i = 0; i < max_len; ++i) {
    HC<S> hc = lstm_step(embedding_row(emb, prev), h, c, wx, wh, b);
    h = hc.h;
    c = hc.c;
    DecodeStep<S> step =
        detail::decode_step(g, store, enc, h, stack, max_len - i, exclude_refer);
    int token = static_cast<int>(argmax(step.dist.array()));
    step.token = token;
    Module m = static_cast<Module>(token);
    out.tokens.push_back(m);
    out.steps.push_back(std::move(step));
    if (module_info(m).context_output) break;
    stack = detail::stack_after(stack, m);
    prev = token;
  }
  return out;
}

/// Teacher-forced program loss: masked cross-entropy of each gt token plus
/// `span_weight` times the word-attention cross-entropy against a uniform
/// target over each token's supervision span (skipped when the span is
/// empty). Losses are summed over the program's steps.
template <typename S>
TeacherForcing<S> teacher_forced_program(Graph<S>& g, ParameterStore<S>& store,
                                         const QuestionEncoding<S>& enc, Value<S> q_hat,
                                         const Program& gt, int start_id, int max_len,
                                         S span_weight, bool exclude_refer = false) {
  using namespace ops;
  if (gt.tokens.empty()) throw DomainError("teacher_forced_program: empty program");
  if (gt.spans.size() != gt.tokens.size())
    throw DomainError("teacher_forced_program: span list length mismatch");
  if (static_cast<int>(gt.tokens.size()) > max_len)
    throw DomainError("teacher_forced_program: program longer than max_len");
  const int T = enc.word_states.shape()[0];
  TeacherForcing<S> out;
  Value<S> emb = g.param(store, "embed.module");
  Value<S> wx = g.param(store, "dec.lstm.wx");
  Value<S> wh = g.param(store, "dec.lstm.wh");
  Value<S> b = g.param(store, "dec.lstm.b");
  Value<S> h = q_hat;
  Value<S> c = g.constant(tensor_zeros<S>(Shape{kLstmHidden}));
  Value<S> loss;
  int prev = start_id;
  int stack = 0;
  for (std::size_t i = 0; i < gt.tokens.size(); ++i) {
    HC<S> hc = lstm_step(embedding_row(emb, prev), h, c, wx, wh, b);
    h = hc.h;
    c = hc.c;
    // Same budget rule as decoding, so train-time and decode-time masks
    // renormalize over identical feasible sets.
    DecodeStep<S> step = detail::decode_step(g, store, enc, h, stack,
                                             max_len - static_cast<int>(i), exclude_refer);
    const int target = static_cast<int>(gt.tokens[i]);
    step.token = target;
    Value<S> term = masked_nll_logits(step.token_logits, step.mask, target);
    if (!gt.spans[i].empty()) {
      auto span_target = std::make_shared<ArrayX<S>>(ArrayX<S>::Zero(T));
      for (int w : gt.spans[i]) {
        if (w < 0 || w >= T)
          throw DomainError("teacher_forced_program: span index out of range");
        (*span_target)[w] = S(1) / static_cast<S>(gt.spans[i].size());
      }
      term = add(term, scale(ce_fixed_target<S>(step.attn_scores, span_target), span_weight));
    }
    loss = loss.valid() ? add(loss, term) : term;
    out.steps.push_back(std::move(step));
    stack = detail::stack_after(stack, gt.tokens[i]);
    prev = target;
  }
  out.loss = loss;
  return out;
}

}  // namespace nmnd

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

// Program execution. A valid program in reverse Polish order is evaluated
// bottom-up against the image feature map: attention producers push onto a
// stack, the final context module consumes the root attention into the
// answer-side context vector. Every Find output is queued for the reference
// pool; Refer reads the pool exactly as it stood before the round started,
// so entities mentioned by the current question never resolve to themselves.

#include <string>
#include <utility>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/ir.hpp"
#include "nmnd/modules.hpp"
#include "nmnd/ops.hpp"
#include "nmnd/pool.hpp"

namespace nmnd {

/// Everything one module did during an execution, copied out of the graph so
/// the record outlives it. `inputs` are the popped attention operands in
/// program order; `output` is the attention map (or the context vector for
/// the final token), flattened.
template <typename S>
struct ModuleTrace {
  Module token = Module::Find;
  std::vector<ArrayX<S>> inputs;
  ArrayX<S> output;
  ArrayX<S> x_txt;   // empty unless the module consumes text
  ArrayX<S> scores;  // Refer only: the pool weights (empty on fallback)
  bool empty_pool = false;
  bool clamped = false;  // a Not/Exclude input strayed outside [0, 1]
};

/// Replayable account of one program execution plus pool bookkeeping.
template <typename S>
struct ExecutionRecord {
  std::vector<Module> program;
  std::vector<ModuleTrace<S>> trace;
  ArrayX<S> context;  // the root context vector
  int fh = 0, fw = 0;
  int round = 0;
  int pool_size_before = 0;
  int pool_size_after = 0;
  bool empty_pool_refer = false;
  bool clamp_event = false;
};

/// Live handles from an execution: the context vector, the attention that
/// fed the final module, and the Find outputs queued for the pool (key =
/// the Find's attended text, in program order).
template <typename S>
struct Execution {
  Value<S> context;
  Value<S> root_attention;
  std::vector<std::pair<Value<S>, Value<S>>> finds;  // (key, attention)
  ExecutionRecord<S> record;
};

namespace detail {

template <typename S>
bool outside_unit(const Value<S>& a) {
  return a.array().minCoeff() < S(0) || a.array().maxCoeff() > S(1);
}

}  // namespace detail

/// Evaluates `program` with per-token attended text `x_txts` against the
/// feature map `x_vis` ([C, H', W']). Sets pool.current_round = round; when
/// `insert_finds` is set, appends every Find output to the pool (after the
/// whole tree has evaluated, keeping the pre-round view for Refer) with the
/// given source. Throws DomainError for invalid programs and wraps module
/// failures with the offending position.
template <typename S>
Execution<S> execute(Graph<S>& g, ParameterStore<S>& store,
                     const std::vector<Module>& program,
                     const std::vector<Value<S>>& x_txts, Value<S> x_vis,
                     ReferencePool<S>& pool, int round, PoolSource find_source,
                     bool insert_finds, bool use_seq_delta) {
  ValidationResult check = validate(program);
  if (!check.ok)
    throw DomainError("execute: invalid program at position " +
                      std::to_string(check.position) + ": " + check.error);
  if (x_txts.size() != program.size())
    throw UsageError("execute: " + std::to_string(program.size()) + " tokens but " +
                     std::to_string(x_txts.size()) + " text vectors");
  if (x_vis.shape().size() != 3)
    throw ShapeError("execute: x_vis must be [C, H', W'], got " + shape_str(x_vis.shape()));

  Execution<S> out;
  out.record.program = program;
  out.record.round = round;
  out.record.fh = x_vis.shape()[1];
  out.record.fw = x_vis.shape()[2];
  out.record.pool_size_before = static_cast<int>(pool.size());
  pool.current_round = round;

  const int fh = out.record.fh, fw = out.record.fw;
  std::vector<Value<S>> stack;
  for (std::size_t i = 0; i < program.size(); ++i) {
    const Module m = program[i];
    const ModuleInfo& info = module_info(m);
    ModuleTrace<S> tr;
    tr.token = m;
    if (info.needs_text && !x_txts[i].valid())
      throw UsageError("execute: '" + std::string(info.name) + "' at position " +
                       std::to_string(i) + " needs a text vector");

    std::vector<Value<S>> args(info.attention_arity);
    for (int k = info.attention_arity - 1; k >= 0; --k) {
      args[k] = stack.back();
      stack.pop_back();
    }
    for (const Value<S>& a : args) tr.inputs.push_back(a.array());

    Value<S> result;
    try {
      switch (m) {
        case Module::Find:
          result = module_find(g, store, x_vis, x_txts[i]);
          out.finds.emplace_back(x_txts[i], result);
          break;
        case Module::Relocate:
          result = module_relocate(g, store, args[0], x_vis, x_txts[i]);
          break;
        case Module::And:
          result = module_and(args[0], args[1]);
          break;
        case Module::Or:
          result = module_or(args[0], args[1]);
          break;
        case Module::Not:
          tr.clamped = detail::outside_unit(args[0]);
          result = module_not(args[0]);
          break;
        case Module::Exclude:
          tr.clamped = detail::outside_unit(args[0]);
          result = module_exclude(g, store, args[0], x_vis, x_txts[i]);
          break;
        case Module::Refer: {
          ReferOutcome<S> ref = refer(g, store, pool, x_txts[i], use_seq_delta, fh, fw);
          tr.empty_pool = ref.empty_pool;
          if (ref.scores.valid()) tr.scores = ref.scores.array();
          result = ref.attention;
          break;
        }
        case Module::Exist:
          result = module_exist(g, store, args[0]);
          break;
        case Module::Describe:
          result = module_describe(g, store, args[0], x_vis, x_txts[i]);
          break;
        case Module::Count:
          result = module_count(g, store, args[0]);
          break;
      }
    } catch (const Error& e) {
      throw Error("execute: '" + std::string(info.name) + "' at position " +
                  std::to_string(i) + ": " + e.what());
    }

    tr.output = result.array();
    if (info.needs_text) tr.x_txt = x_txts[i].array();
    out.record.empty_pool_refer = out.record.empty_pool_refer || tr.empty_pool;
    out.record.clamp_event = out.record.clamp_event || tr.clamped;
    out.record.trace.push_back(std::move(tr));

    if (info.context_output) {
      out.context = result;
      out.root_attention = args[0];
    } else {
      stack.push_back(result);
    }
  }

  if (insert_finds)
    for (auto& [key, attention] : out.finds)
      pool.insert_find(key, attention, round, find_source);
  out.record.context = out.context.array();
  out.record.pool_size_after = static_cast<int>(pool.size());
  return out;
}

/// Registers the caption-alignment read-out: one linear score over the
/// context vector.
template <typename S>
void register_align(ParameterStore<S>& store, const Rng& rng, int d_ctx) {
  Parameter<S>& w = store.create("align.w", Shape{1, d_ctx});
  init_fan_in(w, d_ctx, rng);
  store.create("align.b", Shape{1});
}

/// The caption auxiliary task: one program, two images, and a binary
/// "does this caption describe this image" judgement on each context vector.
template <typename S>
struct CaptionAlignment {
  Value<S> loss;       // mean of the two cross-entropy terms
  Value<S> logit_pos;  // [1]
  Value<S> logit_neg;  // [1]
  Execution<S> positive;
  Execution<S> negative;
};

/// Executes the caption program on the true image and on a foil, scores both
/// context vectors with the linear alignment head, and averages the binary
/// cross-entropy of (positive -> aligned, foil -> not aligned). Only the
/// positive image's Find outputs enter the pool, as caption entries of
/// round 0, and only after both executions have run against the pre-caption
/// pool view.
template <typename S>
CaptionAlignment<S> caption_alignment(Graph<S>& g, ParameterStore<S>& store,
                                      const std::vector<Module>& program,
                                      const std::vector<Value<S>>& x_txts,
                                      Value<S> x_vis_pos, Value<S> x_vis_neg,
                                      ReferencePool<S>& pool, bool use_seq_delta) {
  using namespace ops;
  CaptionAlignment<S> out;
  out.positive = execute(g, store, program, x_txts, x_vis_pos, pool, /*round=*/0,
                         PoolSource::CaptionFind, /*insert_finds=*/false, use_seq_delta);
  out.negative = execute(g, store, program, x_txts, x_vis_neg, pool, /*round=*/0,
                         PoolSource::CaptionFind, /*insert_finds=*/false, use_seq_delta);
  for (auto& [key, attention] : out.positive.finds)
    pool.insert_find(key, attention, /*round=*/0, PoolSource::CaptionFind);
  out.positive.record.pool_size_after = static_cast<int>(pool.size());

  Value<S> w = g.param(store, "align.w");
  Value<S> b = g.param(store, "align.b");
  out.logit_pos = affine(w, out.positive.context, b);
  out.logit_neg = affine(w, out.negative.context, b);
  Value<S> zero = g.scalar_const(S(0));
  Value<S> term_pos = nll_logits(concat(out.logit_pos, zero), 0);
  Value<S> term_neg = nll_logits(concat(out.logit_neg, zero), 1);
  out.loss = scale(add(term_pos, term_neg), S(0.5));
  return out;
}

}  // namespace nmnd

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

// The assembled model: registration of every component against one parameter
// store, vocabulary mapping, and the per-dialog forward pass that strings
// together encoding, program decoding, module execution, the reference pool,
// and the answer decoder. One Graph covers one image pair; dialog state
// (pool, history) never crosses dialogs.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nmnd/answer.hpp"
#include "nmnd/checkpoint.hpp"
#include "nmnd/config.hpp"
#include "nmnd/executor.hpp"
#include "nmnd/features.hpp"
#include "nmnd/graph.hpp"
#include "nmnd/griddata.hpp"
#include "nmnd/modules.hpp"
#include "nmnd/pool.hpp"
#include "nmnd/progdec.hpp"
#include "nmnd/seq.hpp"

namespace nmnd {

/// Weight of the word-attention span supervision inside the program loss.
inline constexpr double kSpanWeight = 1.0;

template <typename S>
struct Model {
  RunConfig cfg;
  int question_vocab = 0;
  int answer_vocab = 0;
  int grid_size = 0;
  int image_px = 0;  // square image side in pixels
  int fh = 0, fw = 0, cells = 0;
  std::map<std::string, int> qindex;
  std::map<std::string, int> aindex;
  ParameterStore<S> store;

  std::vector<int> question_ids(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& w : tokens) {
      auto it = qindex.find(w);
      if (it == qindex.end())
        throw CompatError("word '" + w + "' is not in the question vocabulary");
      ids.push_back(it->second);
    }
    return ids;
  }

  int answer_id(const std::string& word) const {
    auto it = aindex.find(word);
    if (it == aindex.end())
      throw CompatError("answer '" + word + "' is not in the answer vocabulary");
    return it->second;
  }
};

/// Registers all components. The architectural widths are compile-time
/// constants of this engine; the config must request exactly those, so a
/// checkpoint's echoed config always describes the stored tensors.
template <typename S>
Model<S> make_model(const RunConfig& cfg, const Manifest& manifest) {
  validate_config(cfg);
  if (cfg.embed_dim != kEmbedDim)
    throw ConfigError("embed_dim=" + std::to_string(cfg.embed_dim) +
                      " unsupported; this build uses " + std::to_string(kEmbedDim));
  if (cfg.lstm_hidden != kLstmHidden)
    throw ConfigError("lstm_hidden=" + std::to_string(cfg.lstm_hidden) +
                      " unsupported; this build uses " + std::to_string(kLstmHidden));
  if (cfg.lstm_layers != 1)
    throw ConfigError("lstm_layers=" + std::to_string(cfg.lstm_layers) +
                      " unsupported; this build uses 1");
  if (cfg.d_map != 64)
    throw ConfigError("d_map=" + std::to_string(cfg.d_map) +
                      " unsupported; this build uses 64");

  Model<S> m;
  m.cfg = cfg;
  m.question_vocab = static_cast<int>(manifest.question_vocab.size());
  m.answer_vocab = static_cast<int>(manifest.answer_vocab.size());
  m.grid_size = manifest.grid_size;
  m.image_px = manifest.height;
  m.fh = feature_extent(manifest.height);
  m.fw = feature_extent(manifest.width);
  m.cells = m.fh * m.fw;
  for (int i = 0; i < m.question_vocab; ++i) m.qindex[manifest.question_vocab[i]] = i;
  for (int i = 0; i < m.answer_vocab; ++i) m.aindex[manifest.answer_vocab[i]] = i;

  Rng rng(cfg.seed);
  register_cnn(m.store, rng);
  register_modules(m.store, rng, /*d_txt=*/kEmbedDim, cfg.d_map,
                   /*d_ctx=*/kLstmHidden, m.cells);
  register_refer(m.store, rng, /*d_txt=*/kEmbedDim, /*d_pool=*/kEmbedDim,
                 cfg.use_seq_delta);
  register_seq(m.store, rng, m.question_vocab, m.answer_vocab);
  register_progdec(m.store, rng);
  register_align(m.store, rng, /*d_ctx=*/kLstmHidden);
  switch (cfg.decoder) {
    case DecoderKind::Classifier:
      register_answer_classifier(m.store, rng, kLstmHidden, m.answer_vocab);
      break;
    case DecoderKind::Discriminative:
      break;  // scores reuse the candidate encoder registered with seq
    case DecoderKind::Generative:
      register_answer_lm(m.store, rng, m.answer_vocab, kEmbedDim, kLstmHidden);
      break;
  }
  return m;
}

/// Image pixels as a graph constant [3, H, W] in [0, 1].
template <typename S>
Value<S> image_value(Graph<S>& g, const GridImage& img) {
  TensorData<float> t = img.pixels_float();
  TensorData<S> out;
  out.shape = t.shape;
  out.v = t.v.template cast<S>();
  return g.constant(std::move(out));
}

enum class RunMode { Train, Eval };

template <typename S>
struct RoundResult {
  std::vector<Module> program;        // executed (ground truth when forced)
  std::vector<DecodeStep<S>> steps;   // per-token decoder records
  Execution<S> exec;
  Value<S> program_loss;  // teacher-forced only
  Value<S> answer_loss;
  std::vector<S> cand_scores;  // one score per candidate
  std::vector<int> order;      // candidate indices, best first
  int gt_rank = 0;             // 1-based
  int predicted = -1;          // candidate index
  std::string predicted_word;
  bool correct = false;
};

template <typename S>
struct DialogResult {
  std::vector<Module> caption_program;
  std::vector<DecodeStep<S>> caption_steps;
  Value<S> caption_prog_loss;   // teacher-forced only
  Value<S> caption_align_loss;  // only when a partner image was given
  bool alignment_skipped = false;
  std::vector<RoundResult<S>> rounds;
  ReferencePool<S> pool;  // final pool, surfaced for inspection
};

namespace detail {

template <typename S>
std::vector<Value<S>> step_texts(const std::vector<DecodeStep<S>>& steps) {
  std::vector<Value<S>> xs;
  xs.reserve(steps.size());
  for (const auto& s : steps) xs.push_back(s.x_txt);
  return xs;
}

inline std::vector<Module> without_refer(std::vector<Module> tokens) {
  for (Module& t : tokens)
    if (t == Module::Refer) t = Module::Find;
  return tokens;
}

/// Scores the candidate list under the configured decoder and fills the
/// ranking fields of `r`.
template <typename S>
void decode_answer(Graph<S>& g, Model<S>& m, const RoundRecord& round, Value<S> c_t,
                   RoundResult<S>& r) {
  const int K = static_cast<int>(round.candidates.size());
  if (K < 2 || round.gt_index < 0 || round.gt_index >= K)
    throw DomainError("decode_answer: bad candidate list (K=" + std::to_string(K) +
                      ", gt=" + std::to_string(round.gt_index) + ")");
  std::vector<std::vector<int>> cand_ids(K);
  for (int i = 0; i < K; ++i) cand_ids[i] = {m.answer_id(round.candidates[i])};
  switch (m.cfg.decoder) {
    case DecoderKind::Classifier: {
      auto out = classify_answer(g, m.store, c_t);
      r.answer_loss = ops::nll_logits(out.logits, m.answer_id(round.answer));
      r.cand_scores.resize(K);
      for (int i = 0; i < K; ++i)
        r.cand_scores[i] = out.logits.array()[cand_ids[i][0]];
      r.order = descending_order(r.cand_scores);
      r.gt_rank = rank_of(r.order, round.gt_index);
      break;
    }
    case DecoderKind::Discriminative: {
      std::vector<Value<S>> enc(K);
      for (int i = 0; i < K; ++i) enc[i] = encode_candidate(g, m.store, cand_ids[i]);
      auto res = rank_discriminative(c_t, enc, round.gt_index);
      r.answer_loss = res.nll;
      r.cand_scores.resize(K);
      for (int i = 0; i < K; ++i) r.cand_scores[i] = res.scores.array()[i];
      r.order = res.order;
      r.gt_rank = res.gt_rank;
      break;
    }
    case DecoderKind::Generative: {
      auto res = score_generative(g, m.store, c_t, cand_ids, round.gt_index,
                                  /*length_normalize=*/false);
      r.answer_loss = res.gt_nll;
      r.cand_scores = res.scores;
      r.order = res.order;
      r.gt_rank = res.gt_rank;
      break;
    }
  }
  r.predicted = r.order[0];
  r.predicted_word = round.candidates[r.predicted];
  r.correct = r.predicted_word == round.answer;
}

}  // namespace detail

/// Runs one dialog end to end. `x_vis_partner`, when valid, is the foil
/// image for the caption alignment task; when invalid the caption program
/// executes directly and the alignment loss is skipped (flagged). In Train
/// mode programs are teacher-forced and ground-truth answers feed the pool
/// and history; in Eval mode programs are decoded greedily and the model's
/// own predictions feed forward. `ablate_refer` swaps Refer for a fresh Find
/// in forced programs and masks Refer out of decoding.
template <typename S>
DialogResult<S> run_dialog(Graph<S>& g, Model<S>& m, Value<S> x_vis,
                           Value<S> x_vis_partner, const DialogRecord& dialog,
                           RunMode mode, bool ablate_refer = false) {
  const bool train = mode == RunMode::Train;
  const int max_len = m.cfg.max_program_len;
  const S span_w = static_cast<S>(kSpanWeight);
  DialogResult<S> out;
  ReferencePool<S>& pool = out.pool;
  std::vector<Value<S>> history;

  // Caption: captions never corefer backwards, so Refer is always excluded.
  std::vector<int> cap_ids = m.question_ids(dialog.caption.tokens);
  QuestionEncoding<S> enc_c = encode_question(g, m.store, cap_ids);
  HistoryMemory<S> mem_c = build_history_memory(g, m.store, enc_c.q, history,
                                                m.cfg.use_memory);
  if (train) {
    Program gt{dialog.caption.program, dialog.caption.spans};
    TeacherForcing<S> tf =
        teacher_forced_program(g, m.store, enc_c, mem_c.q_hat, gt, kCaptionStartId,
                               max_len, span_w, /*exclude_refer=*/true);
    out.caption_program = gt.tokens;
    out.caption_steps = std::move(tf.steps);
    out.caption_prog_loss = tf.loss;
  } else {
    DecodeResult<S> dec = decode_program(g, m.store, enc_c, mem_c.q_hat, max_len,
                                         kCaptionStartId, /*exclude_refer=*/true);
    out.caption_program = std::move(dec.tokens);
    out.caption_steps = std::move(dec.steps);
  }
  std::vector<Value<S>> cap_txts = detail::step_texts(out.caption_steps);
  if (x_vis_partner.valid()) {
    CaptionAlignment<S> ca =
        caption_alignment(g, m.store, out.caption_program, cap_txts, x_vis,
                          x_vis_partner, pool, m.cfg.use_seq_delta);
    out.caption_align_loss = ca.loss;
  } else {
    out.alignment_skipped = true;
    execute(g, m.store, out.caption_program, cap_txts, x_vis, pool, /*round=*/0,
            PoolSource::CaptionFind, /*insert_finds=*/true, m.cfg.use_seq_delta);
  }
  history.push_back(encode_history_round(g, m.store, cap_ids, /*answer_id=*/-1));

  const int total = static_cast<int>(dialog.rounds.size());
  for (int r = 1; r <= total; ++r) {
    const RoundRecord& round = dialog.rounds[r - 1];
    RoundResult<S> rr;
    std::vector<int> q_ids = m.question_ids(round.question);
    QuestionEncoding<S> enc = encode_question(g, m.store, q_ids);
    HistoryMemory<S> mem = build_history_memory(g, m.store, enc.q, history,
                                                m.cfg.use_memory);
    if (train) {
      Program gt{ablate_refer ? detail::without_refer(round.program) : round.program,
                 round.spans};
      TeacherForcing<S> tf =
          teacher_forced_program(g, m.store, enc, mem.q_hat, gt, kQuestionStartId,
                                 max_len, span_w, ablate_refer);
      rr.program = gt.tokens;
      rr.steps = std::move(tf.steps);
      rr.program_loss = tf.loss;
    } else {
      DecodeResult<S> dec = decode_program(g, m.store, enc, mem.q_hat, max_len,
                                           kQuestionStartId, ablate_refer);
      rr.program = std::move(dec.tokens);
      rr.steps = std::move(dec.steps);
    }
    rr.exec = execute(g, m.store, rr.program, detail::step_texts(rr.steps), x_vis,
                      pool, r, PoolSource::QuestionFind, /*insert_finds=*/true,
                      m.cfg.use_seq_delta);
    detail::decode_answer(g, m, round, rr.exec.context, rr);

    // The answer the dialog "heard": ground truth while forcing, the model's
    // own prediction otherwise. It feeds the pool and the history encoding
    // that later rounds attend over, and both only exist for rounds that
    // have a successor.
    if (r < total) {
      int heard = m.answer_id(train ? round.answer : rr.predicted_word);
      pool.insert_answer(encode_answer_pair(g, m.store, q_ids, heard),
                         rr.exec.root_attention, r);
      history.push_back(encode_history_round(g, m.store, q_ids, heard));
    }
    out.rounds.push_back(std::move(rr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss assembly
// ---------------------------------------------------------------------------

template <typename S>
Value<S> mean_of(Graph<S>& g, const std::vector<Value<S>>& terms) {
  Value<S> sum;
  int n = 0;
  for (const Value<S>& t : terms) {
    if (!t.valid()) continue;
    sum = sum.valid() ? ops::add(sum, t) : t;
    ++n;
  }
  if (n == 0) return Value<S>{};
  (void)g;
  return ops::scale(sum, S(1) / static_cast<S>(n));
}

/// Pair-level objective: question program and answer losses averaged over
/// all dialog rounds, caption program and alignment losses averaged over
/// dialogs. Terms without any contribution stay invalid and are skipped by
/// total_loss.
template <typename S>
LossBundle<S> assemble_losses(Graph<S>& g, const std::vector<DialogResult<S>>& dialogs,
                              const LossWeights<S>& weights) {
  std::vector<Value<S>> q_prog, c_prog, c_aux, a_dec;
  for (const DialogResult<S>& d : dialogs) {
    c_prog.push_back(d.caption_prog_loss);
    c_aux.push_back(d.caption_align_loss);
    for (const RoundResult<S>& r : d.rounds) {
      q_prog.push_back(r.program_loss);
      a_dec.push_back(r.answer_loss);
    }
  }
  LossBundle<S> bundle;
  bundle.q_prog = mean_of(g, q_prog);
  bundle.c_prog = mean_of(g, c_prog);
  bundle.c_aux = mean_of(g, c_aux);
  bundle.a_dec = mean_of(g, a_dec);
  total_loss(g, bundle, weights);
  return bundle;
}

template <typename S>
LossWeights<S> loss_weights(const RunConfig& cfg) {
  LossWeights<S> w;
  w.q_prog = static_cast<S>(cfg.w_q_prog);
  w.c_prog = static_cast<S>(cfg.w_c_prog);
  w.c_aux = static_cast<S>(cfg.w_c_aux);
  w.a_dec = static_cast<S>(cfg.w_a_dec);
  return w;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Saves parameters, optimizer state, and the config echo plus dataset
/// compatibility facts. `extra` (e.g. epoch, val metrics) is merged in.
template <typename S>
void save_model(const std::string& path, const Model<S>& m,
                const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json meta = extra;
  meta["config"] = config_to_json(m.cfg);
  meta["question_vocab"] = m.question_vocab;
  meta["answer_vocab"] = m.answer_vocab;
  meta["grid_size"] = m.grid_size;
  meta["optimizer_step"] = m.store.step();
  save_checkpoint(path, meta, m.store);
}

/// Rebuilds the model a checkpoint describes and restores its tensors.
/// The dataset's vocabulary and geometry must match what the checkpoint
/// was trained against.
template <typename S>
Model<S> load_model(const std::string& path, const Manifest& manifest,
                    nlohmann::json* metadata_out = nullptr) {
  CheckpointData ckpt = load_checkpoint(path);
  if (!ckpt.metadata.contains("config"))
    throw CompatError(path + ": checkpoint has no config echo");
  RunConfig cfg = config_from_json(ckpt.metadata["config"]);
  auto check = [&](const char* what, long long have, long long want) {
    if (have != want)
      throw CompatError(path + ": checkpoint " + what + " is " +
                        std::to_string(have) + " but the dataset has " +
                        std::to_string(want));
  };
  check("question vocabulary", ckpt.metadata.value("question_vocab", -1),
        static_cast<long long>(manifest.question_vocab.size()));
  check("answer vocabulary", ckpt.metadata.value("answer_vocab", -1),
        static_cast<long long>(manifest.answer_vocab.size()));
  check("grid size", ckpt.metadata.value("grid_size", -1), manifest.grid_size);
  Model<S> m = make_model<S>(cfg, manifest);
  restore_store(ckpt, m.store);
  if (metadata_out) *metadata_out = std::move(ckpt.metadata);
  return m;
}

}  // namespace nmnd

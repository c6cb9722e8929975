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

// Evaluation metrics over plain numbers: answer accuracy, retrieval metrics
// computed from ground-truth ranks, NDCG over graded relevances, and an
// accumulator that aggregates per-round outcomes into a report. All ranks are
// 1-based; all candidate orderings follow descending_order (index tie-break).

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "nmnd/common.hpp"
#include "nmnd/ranking.hpp"

namespace nmnd {

/// Fraction of positions where predicted and reference strings match exactly.
inline double accuracy(const std::vector<std::string>& predicted,
                       const std::vector<std::string>& reference) {
  if (predicted.size() != reference.size())
    throw DomainError("accuracy: " + std::to_string(predicted.size()) +
                      " predictions vs " + std::to_string(reference.size()) +
                      " references");
  if (predicted.empty()) throw DomainError("accuracy: empty input");
  int hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == reference[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

/// Retrieval metrics from 1-based ground-truth ranks. recall@k counts ranks
/// <= k, so a rank of exactly k is inside the cut.
struct Retrieval {
  double mrr = 0.0;
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double mean_rank = 0.0;
};

inline Retrieval retrieval(const std::vector<int>& gt_ranks) {
  if (gt_ranks.empty()) throw DomainError("retrieval: empty rank list");
  Retrieval r;
  for (int rank : gt_ranks) {
    if (rank < 1)
      throw DomainError("retrieval: rank " + std::to_string(rank) +
                        " but ranks are 1-based");
    r.mrr += 1.0 / rank;
    r.recall1 += rank <= 1 ? 1.0 : 0.0;
    r.recall5 += rank <= 5 ? 1.0 : 0.0;
    r.recall10 += rank <= 10 ? 1.0 : 0.0;
    r.mean_rank += rank;
  }
  const double n = static_cast<double>(gt_ranks.size());
  r.mrr /= n;
  r.recall1 /= n;
  r.recall5 /= n;
  r.recall10 /= n;
  r.mean_rank /= n;
  return r;
}

/// NDCG of one ranking. Candidates are ordered by descending score (ties by
/// index); the item at 1-based position p contributes rel / log2(1 + p).
/// Normalization is by the same sum under the best possible ordering, which
/// only the positive-relevance candidates contribute to. Relevances must lie
/// in [0, 1]; if all are zero the value is defined as 0 and flagged.
struct Ndcg {
  double value = 0.0;
  bool all_zero = false;
};

inline double dcg_at_positions(const std::vector<double>& relevances,
                               const std::vector<int>& order) {
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    dcg += relevances[order[pos]] / std::log2(2.0 + static_cast<double>(pos));
  return dcg;
}

inline Ndcg ndcg(const std::vector<double>& scores,
                 const std::vector<double>& relevances) {
  if (scores.size() != relevances.size())
    throw DomainError("ndcg: " + std::to_string(scores.size()) + " scores vs " +
                      std::to_string(relevances.size()) + " relevances");
  if (scores.empty()) throw DomainError("ndcg: empty candidate list");
  bool any_positive = false;
  for (double rel : relevances) {
    if (!(rel >= 0.0 && rel <= 1.0))
      throw DomainError("ndcg: relevance " + std::to_string(rel) +
                        " outside [0, 1]");
    any_positive = any_positive || rel > 0.0;
  }
  Ndcg out;
  if (!any_positive) {
    out.all_zero = true;
    return out;
  }
  const double dcg = dcg_at_positions(relevances, descending_order(scores));
  const double ideal = dcg_at_positions(relevances, descending_order(relevances));
  out.value = dcg / ideal;
  return out;
}

/// Aggregated evaluation results. Per-type rows carry the question count and
/// the metrics restricted to that type.
struct TypeBreakdown {
  int count = 0;
  double accuracy = 0.0;
  double mrr = 0.0;
  double mean_rank = 0.0;
};

struct EvalReport {
  int count = 0;
  double accuracy = 0.0;
  double mrr = 0.0;
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double mean_rank = 0.0;
  double ndcg = 0.0;
  int ndcg_all_zero = 0;  // rounds whose relevance vector was all zero
  std::map<int, TypeBreakdown> by_type;
};

/// Accumulates one outcome per evaluated round and reduces to an EvalReport.
/// Merging two accumulators gives the same sums as adding their rounds in
/// sequence, so a partitioned evaluation reduces deterministically as long as
/// partitions are merged in a fixed order.
class EvalAccumulator {
 public:
  void add(int question_type, bool correct, int gt_rank, const Ndcg& nd) {
    if (gt_rank < 1)
      throw DomainError("EvalAccumulator: rank " + std::to_string(gt_rank) +
                        " but ranks are 1-based");
    ++count_;
    correct_ += correct ? 1 : 0;
    inv_rank_ += 1.0 / gt_rank;
    hit1_ += gt_rank <= 1 ? 1 : 0;
    hit5_ += gt_rank <= 5 ? 1 : 0;
    hit10_ += gt_rank <= 10 ? 1 : 0;
    rank_ += gt_rank;
    ndcg_ += nd.value;
    ndcg_all_zero_ += nd.all_zero ? 1 : 0;
    Cell& cell = types_[question_type];
    ++cell.count;
    cell.correct += correct ? 1 : 0;
    cell.inv_rank += 1.0 / gt_rank;
    cell.rank += gt_rank;
  }

  void merge(const EvalAccumulator& other) {
    count_ += other.count_;
    correct_ += other.correct_;
    inv_rank_ += other.inv_rank_;
    hit1_ += other.hit1_;
    hit5_ += other.hit5_;
    hit10_ += other.hit10_;
    rank_ += other.rank_;
    ndcg_ += other.ndcg_;
    ndcg_all_zero_ += other.ndcg_all_zero_;
    for (const auto& [type, cell] : other.types_) {
      Cell& mine = types_[type];
      mine.count += cell.count;
      mine.correct += cell.correct;
      mine.inv_rank += cell.inv_rank;
      mine.rank += cell.rank;
    }
  }

  int count() const { return count_; }

  EvalReport report() const {
    if (count_ == 0) throw DomainError("EvalAccumulator: no rounds added");
    const double n = static_cast<double>(count_);
    EvalReport r;
    r.count = count_;
    r.accuracy = correct_ / n;
    r.mrr = inv_rank_ / n;
    r.recall1 = hit1_ / n;
    r.recall5 = hit5_ / n;
    r.recall10 = hit10_ / n;
    r.mean_rank = rank_ / n;
    r.ndcg = ndcg_ / n;
    r.ndcg_all_zero = ndcg_all_zero_;
    for (const auto& [type, cell] : types_) {
      TypeBreakdown row;
      row.count = cell.count;
      row.accuracy = static_cast<double>(cell.correct) / cell.count;
      row.mrr = cell.inv_rank / cell.count;
      row.mean_rank = cell.rank / static_cast<double>(cell.count);
      r.by_type[type] = row;
    }
    return r;
  }

 private:
  struct Cell {
    int count = 0;
    int correct = 0;
    double inv_rank = 0.0;
    double rank = 0.0;
  };
  int count_ = 0;
  int correct_ = 0;
  double inv_rank_ = 0.0;
  int hit1_ = 0;
  int hit5_ = 0;
  int hit10_ = 0;
  double rank_ = 0.0;
  double ndcg_ = 0.0;
  int ndcg_all_zero_ = 0;
  std::map<int, Cell> types_;
};

/// Fixed-width text rendering of a report, one metric per line plus a
/// per-type table.
inline std::string format_report(const EvalReport& r) {
  char line[128];
  std::string out;
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof(line), "%-12s %10.4f\n", name, v);
    out += line;
  };
  std::snprintf(line, sizeof(line), "%-12s %10d\n", "count", r.count);
  out += line;
  row("accuracy", r.accuracy);
  row("mrr", r.mrr);
  row("recall@1", r.recall1);
  row("recall@5", r.recall5);
  row("recall@10", r.recall10);
  row("mean_rank", r.mean_rank);
  row("ndcg", r.ndcg);
  if (r.ndcg_all_zero > 0) {
    std::snprintf(line, sizeof(line), "%-12s %10d\n", "ndcg_zero", r.ndcg_all_zero);
    out += line;
  }
  if (!r.by_type.empty()) {
    std::snprintf(line, sizeof(line), "%-6s %8s %10s %10s %10s\n", "type",
                  "count", "accuracy", "mrr", "mean_rank");
    out += line;
    for (const auto& [type, cell] : r.by_type) {
      std::snprintf(line, sizeof(line), "%-6d %8d %10.4f %10.4f %10.4f\n", type,
                    cell.count, cell.accuracy, cell.mrr, cell.mean_rank);
      out += line;
    }
  }
  return out;
}

}  // namespace nmnd

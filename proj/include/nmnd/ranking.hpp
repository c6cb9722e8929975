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

// The one ordering rule shared by every ranking consumer: descending score,
// ties broken by ascending candidate index, so all metrics are deterministic.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "nmnd/common.hpp"

namespace nmnd {

/// Candidate indices sorted by descending score; stable, so equal scores
/// keep ascending index order.
template <typename S>
std::vector<int> descending_order(const std::vector<S>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

/// 1-based position of `index` within an ordering.
inline int rank_of(const std::vector<int>& order, int index) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == index) return static_cast<int>(i) + 1;
  throw LookupError("rank_of: index " + std::to_string(index) + " not in order");
}

}  // namespace nmnd

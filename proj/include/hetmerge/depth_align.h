// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segmenting a deep model so that its segment count equals the layer count of
// a shallow model. Both dynamic programs fill an n x m table T (n shallow
// layers, m deep layers) and backtrack from (n-1, m-1); the layer-wise variant
// also credits deep layers skipped along a row.
//
// Indices in SegmentPlan::g are 1-based layer numbers: segment i covers deep
// layers g[i-1]+1 .. g[i], with g[0] taken as 0.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "hetmerge/tensor.h"

namespace hetmerge {

enum class AlignMethod { kSma, kLma, kOracle };
// The objective an alignment maximizes (the oracle supports both).
enum class AlignObjective { kSegmentWise, kLayerWise };

std::string to_string(AlignMethod m);
AlignMethod parse_align_method(const std::string& s);

struct SegmentPlan {
  std::vector<std::size_t> g;
  double score = 0.0;
  AlignMethod method = AlignMethod::kSma;

  std::size_t segments() const { return g.size(); }
  // Number of deep layers in segment i (0-based i).
  std::size_t segment_length(std::size_t i) const { return g[i] - (i == 0 ? 0 : g[i - 1]); }

  // deep_depth is m, the deep model's layer count.
  void validate(std::size_t deep_depth) const;
  static SegmentPlan identity(std::size_t depth);

  nlohmann::json to_json() const;
  static SegmentPlan from_json(const nlohmann::json& j);
};

// c is m x n: rows are deep-model layers, columns shallow-model layers.
SegmentPlan sma_align(const Matrix& c);
SegmentPlan lma_align(const Matrix& c);

inline constexpr std::size_t kBruteForceMaxDepth = 14;

// Enumerates every strictly increasing path p_1 < ... < p_n <= m through the
// DP table and scores it with the same accumulation the recurrence performs.
// Returns the best path (lexicographically smallest among ties) with its last
// entry extended to m so the final segment absorbs any trailing layers.
SegmentPlan brute_force_align(const Matrix& c, AlignObjective objective);

// Score of one path under the recurrence's semantics.
double path_score(const Matrix& c, const std::vector<std::size_t>& path,
                  AlignObjective objective);

// The filled DP table (n x m, 0-based storage of 1-based T).
Matrix fill_dp_table(const Matrix& c, AlignObjective objective);

}  // namespace hetmerge

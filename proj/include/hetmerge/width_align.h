// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Projecting the neurons of two layers into one shared space. A MergeMap works
// on the concatenated neuron index set: A's neurons are 0..n_a-1 and B's are
// n_a..n_a+n_b-1.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hetmerge/depth_align.h"
#include "hetmerge/features.h"
#include "hetmerge/tensor.h"

namespace hetmerge {

enum class WidthStrategy { kPermute, kZip };
std::string to_string(WidthStrategy s);
WidthStrategy parse_width_strategy(const std::string& s);

struct WidthOptions {
  double scale_a = 0.5;
  double scale_b = 0.5;
  // Recompute group features after every zip step; otherwise correlations
  // are fixed upfront and merged by average linkage.
  bool recompute_zip = true;
  // Use pseudo_inverse(merge) instead of the membership matrix as unmerge.
  bool pinv_unmerge = false;
};

struct MergeMap {
  Matrix merge;    // r x (n_a + n_b)
  Matrix unmerge;  // (n_a + n_b) x r
  double scale_a = 0.5;
  double scale_b = 0.5;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::vector<std::vector<std::size_t>> groups;

  std::size_t r() const { return groups.size(); }
  Matrix unmerge_a() const { return slice_rows(unmerge, 0, n_a); }
  Matrix unmerge_b() const { return slice_rows(unmerge, n_a, n_a + n_b); }

  // Row g averages the members of group g, weighting A members by scale_a and
  // B members by scale_b (normalized per row); unmerge is the 0/1 membership.
  static MergeMap from_groups(std::vector<std::vector<std::size_t>> groups, std::size_t n_a,
                              std::size_t n_b, const WidthOptions& options = {});

  nlohmann::json to_json() const;
  static MergeMap from_json(const nlohmann::json& j, const WidthOptions& options = {});
};

// One-to-one matching of equal-width layers maximizing the summed correlation
// of matched neurons.
MergeMap permutation_match(const Matrix& feat_a, const Matrix& feat_b,
                           const WidthOptions& options = {});

// Sum of correlations of the pairs (A_i, B_pi(i)).
double matching_objective(const Matrix& feat_a, const Matrix& feat_b,
                          const std::vector<std::size_t>& pairing);

// Merge steps in order, as pairs of group positions at the time of the merge.
using ZipTrace = std::vector<std::pair<std::size_t, std::size_t>>;

// Greedily merges the most correlated pair of groups (within or across
// models) until r groups remain. Ties go to the smallest (position, position)
// pair, where groups are ordered by their smallest member.
MergeMap elastic_zip(const Matrix& feat_a, const Matrix& feat_b, std::size_t r,
                     const WidthOptions& options = {}, ZipTrace* trace = nullptr);

struct BoundaryAlignment {
  std::size_t deep_layer = 0;     // 0-based layer of the deep model
  std::size_t shallow_layer = 0;  // 0-based layer of the original shallow model
  std::uint64_t shallow_feature_fingerprint = 0;
  MergeMap map;
};

struct AlignmentPlan {
  WidthStrategy strategy = WidthStrategy::kZip;
  std::vector<BoundaryAlignment> boundaries;  // one per deep layer output
  std::uint64_t model_a = 0;
  std::uint64_t model_b = 0;
  std::uint64_t batch = 0;

  std::size_t depth() const { return boundaries.size(); }
  nlohmann::json to_json() const;
  static AlignmentPlan from_json(const nlohmann::json& j);
};

// r_per_boundary: empty selects the default (max width for zip), one value is
// broadcast, otherwise one value per boundary.
AlignmentPlan build_alignment_plan(const SegmentPlan& plan, const FeatureCache& cache_a,
                                   const FeatureCache& cache_b_ext, WidthStrategy strategy,
                                   const std::vector<std::size_t>& r_per_boundary = {},
                                   const WidthOptions& options = {});

}  // namespace hetmerge

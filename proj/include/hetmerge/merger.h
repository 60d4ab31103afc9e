// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Assembling merged weights. For layer k with boundary maps (M_k, U_k):
//
//   W*_k = M_k * blockdiag(W_k^A, W_k^B) * U_{k-1},   b*_k = M_k * [b^A; b^B]
//
// where U_0 stacks two identities so both models read the raw input once.
// Residual layers y = act(x + Wx + b) merge their (W + I) maps, so the stored
// weight gains M_k * U_{k-1} - I, which vanishes when the two boundaries share
// one map.

#pragma once

#include <string>

#include "json.hpp"

#include "hetmerge/depth_align.h"
#include "hetmerge/features.h"
#include "hetmerge/model.h"
#include "hetmerge/width_align.h"

namespace hetmerge {

enum class MergeStrategy { kVanillaAvg, kAlignedAvg, kZip };
std::string to_string(MergeStrategy s);
MergeStrategy parse_merge_strategy(const std::string& s);

struct MergeRecipe {
  SegmentPlan depth_plan;
  AlignmentPlan alignment;
  ExtensionMode extension = ExtensionMode::kIdentityDense;
  double scale_a = 0.5;
  double scale_b = 0.5;
  MergeStrategy strategy = MergeStrategy::kZip;
  std::string depth_tag = "homo";  // sma | lma | oracle | homo
  bool swapped = false;            // inputs were reordered so A is the deeper model

  nlohmann::json to_json() const;
};

// Entrywise mean of every weight and bias. Heads of distinct tasks are kept
// as they are; heads for the same task are averaged.
ModelBundle average_weights(const ModelBundle& a, const ModelBundle& b);

ModelBundle aligned_average(const ModelBundle& a, const ModelBundle& b, const AlignmentPlan& plan);

// b is the shallower model; its segments are padded with identity layers.
ModelBundle merge_depth_hetero(const ModelBundle& a, const ModelBundle& b,
                               const MergeRecipe& recipe);
// Residual variant: padding blocks are zero-weight residual layers.
ModelBundle merge_depth_hetero_residual(const ModelBundle& a, const ModelBundle& b,
                                        const MergeRecipe& recipe);

// Re-expresses b in a's neuron basis using a permutation alignment. The
// result computes the same function as b.
ModelBundle permute_to_reference(const ModelBundle& b, const AlignmentPlan& plan);

struct PipelineOptions {
  MergeStrategy strategy = MergeStrategy::kZip;
  AlignMethod depth_method = AlignMethod::kLma;
  AlignObjective oracle_objective = AlignObjective::kLayerWise;
  std::vector<std::size_t> r;  // see build_alignment_plan
  WidthOptions width;
  bool residual = false;
};

struct MergeResult {
  ModelBundle model;
  MergeRecipe recipe;
};

// Depth alignment, extension, width alignment and weight assembly in one go.
MergeResult merge_models(const ModelBundle& a, const ModelBundle& b,
                         const CalibrationBatch& calib, const PipelineOptions& options);

}  // namespace hetmerge

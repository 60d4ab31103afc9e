// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/merger.h"

#include <utility>

#include "hetmerge/error.h"
#include "hetmerge/similarity.h"

namespace hetmerge {

namespace {

Matrix stacked_identity(std::size_t d) {
  return vstack(Matrix::identity(d), Matrix::identity(d));
}

std::vector<double> merge_bias(const Matrix& merge, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> stacked = a;
  stacked.insert(stacked.end(), b.begin(), b.end());
  const Matrix out = matmul(merge, Matrix::column(stacked));
  return {out.data().begin(), out.data().end()};
}

Head transform_head(const Head& h, const Matrix& unmerge_slice) {
  Head out = h;
  out.weight = matmul(h.weight, unmerge_slice);
  return out;
}

Head blend_heads(const Head& a, const Head& b, double wa, double wb) {
  if (a.label_begin != b.label_begin || a.labels() != b.labels()) {
    throw ValidationError("heads for task " + std::to_string(a.task) +
                          " cover different label ranges");
  }
  Head out = a;
  out.weight = add(scale(a.weight, wa), scale(b.weight, wb));
  for (std::size_t i = 0; i < out.bias.size(); ++i) out.bias[i] = wa * a.bias[i] + wb * b.bias[i];
  return out;
}

// Heads of the merged model: A's and B's heads read the merged hidden state
// through their model's slice of the last unmerge.
std::vector<Head> combine_heads(const ModelBundle& a, const ModelBundle& b,
                                const Matrix& unmerge_a, const Matrix& unmerge_b, double wa,
                                double wb) {
  std::vector<Head> heads;
  for (const auto& h : a.heads) {
    Head ha = transform_head(h, unmerge_a);
    if (const Head* hb = b.find_head(h.task)) {
      heads.push_back(blend_heads(ha, transform_head(*hb, unmerge_b), wa, wb));
    } else {
      heads.push_back(std::move(ha));
    }
  }
  for (const auto& h : b.heads) {
    if (!a.find_head(h.task)) heads.push_back(transform_head(h, unmerge_b));
  }
  return heads;
}

void check_fingerprint(std::uint64_t expected, const ModelBundle& m, const char* which) {
  if (expected != 0 && expected != fingerprint(m)) {
    throw ValidationError(std::string("alignment plan was computed for a different model ") +
                          which);
  }
}

void require_residual_segments(const ModelBundle& model, const SegmentPlan* plan,
                               const char* which) {
  for (std::size_t k = 0; k < model.depth(); ++k) {
    bool affected = true;
    if (plan) {
      // Only layers inside multi-layer segments need a residual form.
      affected = false;
      std::size_t begin = 0;
      for (std::size_t i = 0; i < plan->segments(); ++i) {
        if (k >= begin && k < plan->g[i] && plan->segment_length(i) > 1) affected = true;
        begin = plan->g[i];
      }
    }
    if (affected && model.layers[k].spec.kind != LayerKind::kResidualDense) {
      throw ValidationError(std::string("residual merge: layer ") + std::to_string(k) +
                            " of model " + which + " is not a residual layer");
    }
  }
}

}  // namespace

std::string to_string(MergeStrategy s) {
  switch (s) {
    case MergeStrategy::kVanillaAvg: return "avg";
    case MergeStrategy::kAlignedAvg: return "permute";
    case MergeStrategy::kZip: return "zip";
  }
  return "?";
}

MergeStrategy parse_merge_strategy(const std::string& s) {
  if (s == "avg") return MergeStrategy::kVanillaAvg;
  if (s == "permute") return MergeStrategy::kAlignedAvg;
  if (s == "zip") return MergeStrategy::kZip;
  throw ValidationError("unknown merge strategy '" + s + "' (expected avg|permute|zip)");
}

nlohmann::json MergeRecipe::to_json() const {
  return {{"depth_plan", depth_plan.to_json()},
          {"alignment", alignment.to_json()},
          {"extension", to_string(extension)},
          {"scales", {scale_a, scale_b}},
          {"strategy", to_string(strategy)},
          {"depth", depth_tag},
          {"swapped", swapped}};
}

ModelBundle average_weights(const ModelBundle& a, const ModelBundle& b) {
  if (a.specs() != b.specs()) {
    throw ValidationError("average_weights: architectures differ");
  }
  ModelBundle out;
  out.metadata = {{"merge", "average_weights"}};
  for (std::size_t k = 0; k < a.depth(); ++k) {
    Layer l = a.layers[k];
    l.weight = add(scale(a.layers[k].weight, 0.5), scale(b.layers[k].weight, 0.5));
    for (std::size_t i = 0; i < l.bias.size(); ++i) {
      l.bias[i] = 0.5 * a.layers[k].bias[i] + 0.5 * b.layers[k].bias[i];
    }
    out.layers.push_back(std::move(l));
  }
  const std::size_t hidden = a.hidden_dim();
  out.heads = combine_heads(a, b, Matrix::identity(hidden), Matrix::identity(hidden), 0.5, 0.5);
  out.validate();
  return out;
}

ModelBundle aligned_average(const ModelBundle& a, const ModelBundle& b, const AlignmentPlan& plan) {
  if (a.depth() != b.depth() || plan.depth() != a.depth()) {
    throw ValidationError("aligned_average: depths differ (A " + std::to_string(a.depth()) +
                          ", B " + std::to_string(b.depth()) + ", plan " +
                          std::to_string(plan.depth()) + ")");
  }
  if (a.input_dim() != b.input_dim()) {
    throw ValidationError("aligned_average: models read inputs of different size");
  }
  check_fingerprint(plan.model_a, a, "A");
  check_fingerprint(plan.model_b, b, "B");

  ModelBundle out;
  Matrix unmerge_prev = stacked_identity(a.input_dim());
  for (std::size_t k = 0; k < a.depth(); ++k) {
    const Layer& la = a.layers[k];
    const Layer& lb = b.layers[k];
    const MergeMap& map = plan.boundaries[k].map;
    if (map.n_a != la.spec.out_dim || map.n_b != lb.spec.out_dim) {
      throw ShapeError("aligned_average: boundary " + std::to_string(k) + " map covers " +
                       std::to_string(map.n_a) + "+" + std::to_string(map.n_b) +
                       " neurons, layers have " + std::to_string(la.spec.out_dim) + "+" +
                       std::to_string(lb.spec.out_dim));
    }
    if (la.spec.kind != lb.spec.kind) {
      throw ValidationError("aligned_average: layer " + std::to_string(k) +
                            " mixes dense and residual kinds");
    }
    Matrix w = matmul(matmul(map.merge, block_diag(la.weight, lb.weight)), unmerge_prev);
    if (la.spec.kind == LayerKind::kResidualDense) {
      const Matrix shortcut = matmul(map.merge, unmerge_prev);
      if (shortcut.rows() != shortcut.cols()) {
        throw ShapeError("aligned_average: residual layer " + std::to_string(k) +
                         " changes width from " + std::to_string(shortcut.cols()) + " to " +
                         std::to_string(shortcut.rows()));
      }
      w = add(w, subtract(shortcut, Matrix::identity(shortcut.rows())));
    }
    LayerSpec spec{la.spec.kind, w.cols(), w.rows(), la.spec.activation};
    out.layers.push_back(Layer{spec, std::move(w), merge_bias(map.merge, la.bias, lb.bias)});
    unmerge_prev = map.unmerge;
  }
  const MergeMap& last = plan.boundaries.back().map;
  out.heads = combine_heads(a, b, last.unmerge_a(), last.unmerge_b(), last.scale_a, last.scale_b);
  out.metadata = {{"merge", "aligned_average"}};
  out.validate();
  return out;
}

ModelBundle merge_depth_hetero(const ModelBundle& a, const ModelBundle& b,
                               const MergeRecipe& recipe) {
  if (recipe.extension != ExtensionMode::kIdentityDense) {
    throw ValidationError("merge_depth_hetero: recipe must use identity extension");
  }
  recipe.depth_plan.validate(a.depth());
  if (recipe.depth_plan.segments() != b.depth()) {
    throw ValidationError("merge_depth_hetero: plan has " +
                          std::to_string(recipe.depth_plan.segments()) +
                          " segments but model B has " + std::to_string(b.depth()) + " layers");
  }
  const ModelBundle b_ext =
      extend_model(b, ExtensionPlan::from_segments(recipe.depth_plan, recipe.extension));
  return aligned_average(a, b_ext, recipe.alignment);
}

ModelBundle merge_depth_hetero_residual(const ModelBundle& a, const ModelBundle& b,
                                        const MergeRecipe& recipe) {
  if (recipe.extension != ExtensionMode::kZeroResidual) {
    throw ValidationError("merge_depth_hetero_residual: recipe must use zero-residual extension");
  }
  recipe.depth_plan.validate(a.depth());
  if (recipe.depth_plan.segments() != b.depth()) {
    throw ValidationError("merge_depth_hetero_residual: plan segment count does not match B");
  }
  require_residual_segments(a, &recipe.depth_plan, "A");
  // B's layer i leads segment i; it must be residual wherever padding follows it.
  for (std::size_t i = 0; i < b.depth(); ++i) {
    if (recipe.depth_plan.segment_length(i) > 1 &&
        b.layers[i].spec.kind != LayerKind::kResidualDense) {
      throw ValidationError("residual merge: layer " + std::to_string(i) +
                            " of model B is not a residual layer");
    }
  }
  const ModelBundle b_ext =
      extend_model(b, ExtensionPlan::from_segments(recipe.depth_plan, recipe.extension));
  return aligned_average(a, b_ext, recipe.alignment);
}

ModelBundle permute_to_reference(const ModelBundle& b, const AlignmentPlan& plan) {
  if (plan.depth() != b.depth()) throw ValidationError("permute_to_reference: depth mismatch");
  std::vector<IndexPermutation> perms;
  for (const auto& boundary : plan.boundaries) {
    const MergeMap& m = boundary.map;
    if (m.n_a != m.n_b || m.r() != m.n_a) {
      throw ValidationError("permute_to_reference: boundary is not a permutation");
    }
    std::vector<std::size_t> mapping(m.n_a, m.n_a);
    for (const auto& g : m.groups) {
      if (g.size() != 2 || g[0] >= m.n_a || g[1] < m.n_a) {
        throw ValidationError("permute_to_reference: boundary is not a permutation");
      }
      mapping[g[0]] = g[1] - m.n_a;
    }
    perms.emplace_back(std::move(mapping));
  }

  ModelBundle out = b;
  for (std::size_t k = 0; k < b.depth(); ++k) {
    Layer& l = out.layers[k];
    l.weight = perms[k].apply_rows(b.layers[k].weight);
    if (k > 0) l.weight = perms[k - 1].apply_rows(l.weight.transposed()).transposed();
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = b.layers[k].bias[perms[k][i]];
    if (l.spec.kind == LayerKind::kResidualDense && k > 0 && !(perms[k] == perms[k - 1])) {
      throw ValidationError("permute_to_reference: residual layer " + std::to_string(k) +
                            " needs the same permutation on its input and output");
    }
  }
  for (auto& h : out.heads) {
    h.weight = perms.back().apply_rows(h.weight.transposed()).transposed();
  }
  return out;
}

MergeResult merge_models(const ModelBundle& a_in, const ModelBundle& b_in,
                         const CalibrationBatch& calib, const PipelineOptions& options) {
  const bool swapped = b_in.depth() > a_in.depth();
  const ModelBundle& a = swapped ? b_in : a_in;
  const ModelBundle& b = swapped ? a_in : b_in;
  WidthOptions width = options.width;
  if (swapped) std::swap(width.scale_a, width.scale_b);

  MergeResult result;
  MergeRecipe& recipe = result.recipe;
  recipe.strategy = options.strategy;
  recipe.scale_a = width.scale_a;
  recipe.scale_b = width.scale_b;
  recipe.swapped = swapped;
  recipe.extension = options.residual ? ExtensionMode::kZeroResidual : ExtensionMode::kIdentityDense;

  if (options.strategy == MergeStrategy::kVanillaAvg) {
    if (a.depth() != b.depth()) {
      throw ValidationError("vanilla averaging needs models of equal depth");
    }
    recipe.depth_plan = SegmentPlan::identity(a.depth());
    result.model = average_weights(a, b);
    result.model.metadata["recipe"] = recipe.to_json();
    return result;
  }

  const FeatureCache cache_a = capture_features(a, calib);
  if (a.depth() == b.depth()) {
    recipe.depth_plan = SegmentPlan::identity(a.depth());
    recipe.depth_tag = "homo";
  } else {
    const FeatureCache cache_b = capture_features(b, calib);
    const Matrix c = layer_similarity_matrix(cache_a, cache_b).values;
    switch (options.depth_method) {
      case AlignMethod::kSma: recipe.depth_plan = sma_align(c); break;
      case AlignMethod::kLma: recipe.depth_plan = lma_align(c); break;
      case AlignMethod::kOracle:
        recipe.depth_plan = brute_force_align(c, options.oracle_objective);
        break;
    }
    recipe.depth_tag = to_string(options.depth_method);
  }

  const ModelBundle b_ext =
      extend_model(b, ExtensionPlan::from_segments(recipe.depth_plan, recipe.extension));
  const FeatureCache cache_b_ext = capture_features(b_ext, calib);
  const WidthStrategy ws =
      options.strategy == MergeStrategy::kAlignedAvg ? WidthStrategy::kPermute : WidthStrategy::kZip;
  recipe.alignment =
      build_alignment_plan(recipe.depth_plan, cache_a, cache_b_ext, ws, options.r, width);

  result.model = options.residual ? merge_depth_hetero_residual(a, b, recipe)
                                  : merge_depth_hetero(a, b, recipe);
  result.model.metadata["recipe"] = recipe.to_json();
  return result;
}

}  // namespace hetmerge

// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include "doctest.h"
#include "fixtures.h"
#include "hetmerge/error.h"
#include "hetmerge/merger.h"
#include "oracles.h"

using namespace hetmerge;
using oracle::triple_loop;

namespace {

Matrix inputs(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return oracle::random_normal(n, d, rng);
}

CalibrationBatch calib(std::size_t d, std::uint64_t seed) {
  CalibrationBatch b;
  b.inputs = inputs(512, d, seed);
  b.seed = seed;
  return b;
}

// Groups pairing A neuron i with B neuron perm[i].
MergeMap pairing_map(const std::vector<std::size_t>& perm, const WidthOptions& w = {}) {
  const std::size_t n = perm.size();
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups.push_back({i, n + perm[i]});
  return MergeMap::from_groups(groups, n, n, w);
}

AlignmentPlan manual_plan(const std::vector<std::vector<std::size_t>>& perms,
                          const WidthOptions& w = {}) {
  AlignmentPlan p;
  p.strategy = WidthStrategy::kPermute;
  for (std::size_t k = 0; k < perms.size(); ++k) {
    p.boundaries.push_back({k, k, 0, pairing_map(perms[k], w)});
  }
  return p;
}

Matrix pmat(const std::vector<std::size_t>& perm) { return IndexPermutation(perm).to_matrix(); }

Matrix half(const Matrix& a) { return scale(a, 0.5); }

Matrix col(const std::vector<double>& v) { return Matrix::column(v); }

std::vector<double> as_vec(const Matrix& c) { return {c.data().begin(), c.data().end()}; }

Layer dense(Matrix w, std::vector<double> b, Activation act = Activation::kRelu,
            LayerKind kind = LayerKind::kDense) {
  Layer l = make_layer({kind, w.cols(), w.rows(), act});
  l.weight = std::move(w);
  l.bias = std::move(b);
  return l;
}

Head head(int task, std::size_t begin, Matrix w) {
  Head h;
  h.task = task;
  h.label_begin = begin;
  h.bias.assign(w.rows(), 0.0);
  h.weight = std::move(w);
  return h;
}

}  // namespace

TEST_CASE("vanilla averaging") {
  const ModelBundle a = fixture::random_mlp(3, {4, 4}, 1);
  const ModelBundle avg = average_weights(a, a);
  for (std::size_t k = 0; k < a.depth(); ++k) {
    CHECK(max_abs_diff(avg.layers[k].weight, a.layers[k].weight) <= 1e-12);
  }
  CHECK(max_abs_diff(avg.heads[0].weight, a.heads[0].weight) <= 1e-12);

  ModelBundle zero = fixture::random_mlp(3, {4, 4}, 2);
  const ModelBundle b = fixture::random_mlp(3, {4, 4}, 3);
  for (auto& l : zero.layers) l.weight = Matrix(l.weight.rows(), l.weight.cols());
  const ModelBundle zb = average_weights(zero, b);
  for (std::size_t k = 0; k < 2; ++k) CHECK(zb.layers[k].weight == half(b.layers[k].weight));

  ModelBundle p, q;
  p.layers = {dense(Matrix::from_rows({{1, 2}, {3, 4}}), {1, 0})};
  q.layers = {dense(Matrix::from_rows({{5, 6}, {7, 8}}), {0, 3})};
  p.heads = {head(0, 0, Matrix::identity(2))};
  q.heads = {head(1, 2, Matrix::identity(2))};
  const ModelBundle pq = average_weights(p, q);
  CHECK(pq.layers[0].weight == Matrix::from_rows({{3, 4}, {5, 6}}));
  CHECK(pq.layers[0].bias == std::vector<double>{0.5, 1.5});
  CHECK(pq.heads.size() == 2);

  CHECK_THROWS_AS(average_weights(a, fixture::random_mlp(3, {4, 5}, 1)), ValidationError);
}

TEST_CASE("aligned average of a single linear layer equals hand arithmetic") {
  const Matrix wa = Matrix::from_rows({{1, -2, 0.5}, {0, 3, 1}, {2, 2, -1}});
  const Matrix wb = Matrix::from_rows({{-1, 0, 4}, {0.25, 1, 1}, {3, -3, 2}});
  const std::vector<double> ba = {0.1, 0.2, 0.3}, bb = {1, 2, 3};
  ModelBundle a, b;
  a.layers = {dense(wa, ba, Activation::kLinear)};
  b.layers = {dense(wb, bb, Activation::kLinear)};
  a.heads = {head(0, 0, Matrix::identity(3))};
  b.heads = {head(1, 3, Matrix::identity(3))};

  const std::vector<std::size_t> perm = {2, 0, 1};
  const ModelBundle m = aligned_average(a, b, manual_plan({perm}));
  const Matrix p = pmat(perm);
  const Matrix want = half(add(wa, triple_loop(p, wb)));
  CHECK(max_abs_diff(m.layers[0].weight, want) <= 1e-12);
  CHECK(max_abs_diff(col(m.layers[0].bias), half(add(col(ba), triple_loop(p, col(bb))))) <= 1e-12);
  // B's head reads the merged state through P^T.
  CHECK(max_abs_diff(m.head(1).weight, p.transposed()) <= 1e-12);
  CHECK(m.head(0).weight == Matrix::identity(3));
}

TEST_CASE("identity alignment reduces to vanilla averaging") {
  const ModelBundle a = fixture::random_mlp(4, {5, 5, 5}, 4);
  const ModelBundle b = fixture::random_mlp(4, {5, 5, 5}, 5);
  const std::vector<std::size_t> id = {0, 1, 2, 3, 4};
  const ModelBundle al = aligned_average(a, b, manual_plan({id, id, id}));
  const ModelBundle av = average_weights(a, b);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(max_abs_diff(al.layers[k].weight, av.layers[k].weight) <= 1e-12);
    CHECK(max_abs_diff(col(al.layers[k].bias), col(av.layers[k].bias)) <= 1e-12);
  }
  CHECK(max_abs_diff(al.heads[0].weight, av.heads[0].weight) <= 1e-12);

  WidthOptions only_a;
  only_a.scale_a = 1.0;
  only_a.scale_b = 0.0;
  const ModelBundle ra = aligned_average(a, b, manual_plan({id, id, id}, only_a));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(ra.layers[k].weight == a.layers[k].weight);
    CHECK(ra.layers[k].bias == a.layers[k].bias);
  }
  CHECK(ra.heads[0].weight == a.heads[0].weight);
}

TEST_CASE("self-merge with a permuted clone recovers the model") {
  std::mt19937_64 rng(6);
  for (bool residual : {false, true}) {
    const ModelBundle a = fixture::random_mlp(6, {10, 10, 10, 10}, 7, residual, {{0, 0, 4}});
    std::vector<IndexPermutation> perms;
    perms.push_back(fixture::random_permutation(10, rng));
    for (int k = 1; k < 4; ++k) {
      perms.push_back(residual ? perms.back() : fixture::random_permutation(10, rng));
    }
    const ModelBundle b = fixture::permute_model(a, perms);
    const CalibrationBatch cb = calib(6, 8);
    const AlignmentPlan plan =
        build_alignment_plan(SegmentPlan::identity(4), capture_features(a, cb),
                             capture_features(b, cb), WidthStrategy::kPermute);
    const ModelBundle m = aligned_average(a, b, plan);
    const Matrix x = inputs(256, 6, 9);
    CHECK(max_abs_diff(forward(m, x), forward(a, x)) < 1e-4);
    for (const auto& bd : plan.boundaries) {
      CHECK(max_abs_diff(matmul(bd.map.merge, bd.map.unmerge), Matrix::identity(bd.map.r())) <= 1e-12);
    }

    const ModelBundle back = permute_to_reference(b, plan);
    for (std::size_t k = 0; k < 4; ++k) CHECK(back.layers[k].weight == a.layers[k].weight);
  }
}

TEST_CASE("self-merge through zip with an exact clone") {
  const ModelBundle a = fixture::random_mlp(6, {12, 9, 12}, 10, false, {{0, 0, 3}});
  PipelineOptions opt;
  opt.strategy = MergeStrategy::kZip;
  const MergeResult r = merge_models(a, a, calib(6, 11), opt);
  const Matrix x = inputs(256, 6, 12);
  CHECK(max_abs_diff(forward(r.model, x), forward(a, x)) < 1e-4);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.model.layers[k].spec.out_dim == a.layers[k].spec.out_dim);
  CHECK(r.recipe.depth_tag == "homo");
}

TEST_CASE("two-layer segment equals hand arithmetic") {
  const Matrix wa1 = Matrix::from_rows({{1, 2}, {-1, 0.5}});
  const Matrix wa2 = Matrix::from_rows({{0.5, -1}, {2, 1}});
  const Matrix wb1 = Matrix::from_rows({{3, -2}, {0.25, 4}});
  const std::vector<double> ba1 = {0.1, -0.2}, ba2 = {0.3, 0.4}, bb1 = {-1, 2};
  ModelBundle a, b;
  a.layers = {dense(wa1, ba1), dense(wa2, ba2)};
  b.layers = {dense(wb1, bb1)};
  a.heads = {head(0, 0, Matrix::identity(2))};
  b.heads = {head(1, 2, Matrix::from_rows({{1, 2}, {3, 4}}))};

  const std::vector<std::size_t> p0 = {1, 0}, p1 = {0, 1};
  for (const auto& perms : {std::vector<std::vector<std::size_t>>{p0, p1},
                            std::vector<std::vector<std::size_t>>{p0, p0},
                            std::vector<std::vector<std::size_t>>{p1, p0}}) {
    MergeRecipe recipe;
    recipe.depth_plan.g = {2};
    recipe.alignment = manual_plan(perms);
    const ModelBundle m = merge_depth_hetero(a, b, recipe);
    const Matrix P0 = pmat(perms[0]), P1 = pmat(perms[1]);
    const Matrix w1 = half(add(wa1, triple_loop(P0, wb1)));
    const Matrix w2 = half(add(wa2, triple_loop(P1, P0.transposed())));
    CHECK(max_abs_diff(m.layers[0].weight, w1) <= 1e-12);
    CHECK(max_abs_diff(m.layers[1].weight, w2) <= 1e-12);
    CHECK(max_abs_diff(col(m.layers[0].bias), half(add(col(ba1), triple_loop(P0, col(bb1))))) <= 1e-12);
    CHECK(max_abs_diff(col(m.layers[1].bias), half(col(ba2))) <= 1e-12);
    CHECK(m.layers[1].spec.activation == Activation::kRelu);
    CHECK(max_abs_diff(m.head(1).weight, triple_loop(b.head(1).weight, P1.transposed())) <= 1e-12);

    const ModelBundle ext = extend_model(b, ExtensionPlan::from_segments(recipe.depth_plan, ExtensionMode::kIdentityDense));
    const ModelBundle direct = aligned_average(a, ext, recipe.alignment);
    for (std::size_t k = 0; k < 2; ++k) CHECK(max_abs_diff(direct.layers[k].weight, m.layers[k].weight) <= 1e-10);
  }
}

TEST_CASE("residual segments equal hand arithmetic") {
  const Matrix win_a = Matrix::from_rows({{1, 0}, {0.5, -1}});
  const Matrix win_b = Matrix::from_rows({{2, 1}, {-1, 1}});
  const Matrix wa1 = Matrix::from_rows({{0.1, 0.2}, {-0.3, 0.4}});
  const Matrix wa2 = Matrix::from_rows({{0.5, -0.6}, {0.7, 0.8}});
  const Matrix wb1 = Matrix::from_rows({{-0.2, 0.9}, {0.3, 0.1}});
  ModelBundle a, b;
  a.layers = {dense(win_a, {0, 0}),
              dense(wa1, {0.1, 0.1}, Activation::kRelu, LayerKind::kResidualDense),
              dense(wa2, {0.2, 0.2}, Activation::kRelu, LayerKind::kResidualDense)};
  b.layers = {dense(win_b, {0, 0}),
              dense(wb1, {0.3, -0.3}, Activation::kRelu, LayerKind::kResidualDense)};
  a.heads = {head(0, 0, Matrix::identity(2))};
  b.heads = {head(1, 2, Matrix::identity(2))};

  MergeRecipe recipe;
  recipe.extension = ExtensionMode::kZeroResidual;
  recipe.depth_plan.g = {1, 3};
  const std::vector<std::size_t> p = {1, 0}, q = {0, 1};

  SUBCASE("shared permutation along the residual stream") {
    recipe.alignment = manual_plan({q, p, p});
    const ModelBundle m = merge_depth_hetero_residual(a, b, recipe);
    const Matrix P = pmat(p), Q = pmat(q);
    CHECK(max_abs_diff(m.layers[0].weight, half(add(win_a, triple_loop(Q, win_b)))) <= 1e-12);
    // Q != P, so the shortcut picks up (M U - I) on the first residual block.
    const Matrix mu = half(add(Matrix::identity(2), triple_loop(P, Q.transposed())));
    const Matrix w1 = add(half(add(wa1, triple_loop(triple_loop(P, wb1), Q.transposed()))),
                          subtract(mu, Matrix::identity(2)));
    CHECK(max_abs_diff(m.layers[1].weight, w1) <= 1e-12);
    // Internal block: the zero-residual B side contributes nothing.
    CHECK(max_abs_diff(m.layers[2].weight, half(wa2)) <= 1e-12);
    CHECK(m.layers[2].spec.kind == LayerKind::kResidualDense);
  }

  SUBCASE("one permutation everywhere") {
    recipe.alignment = manual_plan({p, p, p});
    const ModelBundle m = merge_depth_hetero_residual(a, b, recipe);
    const Matrix P = pmat(p);
    const Matrix w1 = half(add(wa1, triple_loop(triple_loop(P, wb1), P.transposed())));
    CHECK(max_abs_diff(m.layers[1].weight, w1) <= 1e-12);
    const MergeMap& m2 = recipe.alignment.boundaries[2].map;
    const Matrix internal = triple_loop(triple_loop(m2.merge, block_diag(wa2, Matrix(2, 2))),
                                        recipe.alignment.boundaries[1].map.unmerge);
    CHECK(max_abs_diff(m.layers[2].weight, internal) <= 1e-12);
  }

  SUBCASE("single-layer segments reduce to the residual aligned average") {
    ModelBundle b3 = a;
    b3.layers[1].weight = wb1;
    b3.heads = b.heads;
    MergeRecipe r3 = recipe;
    r3.depth_plan = SegmentPlan::identity(3);
    r3.alignment = manual_plan({p, p, p});
    const ModelBundle m = merge_depth_hetero_residual(a, b3, r3);
    const ModelBundle direct = aligned_average(a, b3, r3.alignment);
    for (std::size_t k = 0; k < 3; ++k) CHECK(m.layers[k].weight == direct.layers[k].weight);
  }

  SUBCASE("non-residual layer inside a residual recipe") {
    ModelBundle plain = a;
    plain.layers[2].spec.kind = LayerKind::kDense;
    recipe.alignment = manual_plan({p, p, p});
    CHECK_THROWS_AS(merge_depth_hetero_residual(plain, b, recipe), ValidationError);
    MergeRecipe wrong = recipe;
    wrong.extension = ExtensionMode::kIdentityDense;
    CHECK_THROWS_AS(merge_depth_hetero_residual(a, b, wrong), ValidationError);
  }
}

TEST_CASE("merging through an identity extension recovers the shallow model") {
  const CalibrationBatch cb = calib(5, 14);
  std::uint64_t seed = 13;
  while (fixture::has_dead_units(fixture::random_mlp(5, {8, 8, 8}, seed, false, {{1, 3, 3}}), cb)) ++seed;
  const ModelBundle b = fixture::random_mlp(5, {8, 8, 8}, seed, false, {{1, 3, 3}});
  SegmentPlan seg;
  seg.g = {2, 3, 5};
  const ModelBundle a = extend_model(b, ExtensionPlan::from_segments(seg, ExtensionMode::kIdentityDense));
  MergeRecipe recipe;
  recipe.depth_plan = seg;
  const ModelBundle b_ext = extend_model(b, ExtensionPlan::from_segments(seg, ExtensionMode::kIdentityDense));
  recipe.alignment = build_alignment_plan(seg, capture_features(a, cb), capture_features(b_ext, cb),
                                          WidthStrategy::kZip, {8});
  const ModelBundle m = merge_depth_hetero(a, b, recipe);
  const Matrix x = inputs(256, 5, 15);
  CHECK(m.depth() == 5);
  CHECK(max_abs_diff(forward(m, x), forward(b, x)) < 1e-4);

  MergeRecipe same;
  same.depth_plan = SegmentPlan::identity(3);
  const ModelBundle c = fixture::random_mlp(5, {8, 8, 8}, 16);
  same.alignment = build_alignment_plan(same.depth_plan, capture_features(c, cb),
                                        capture_features(b, cb), WidthStrategy::kPermute);
  const ModelBundle m2 = merge_depth_hetero(c, b, same);
  const ModelBundle m3 = aligned_average(c, b, same.alignment);
  for (std::size_t k = 0; k < 3; ++k) CHECK(m2.layers[k].weight == m3.layers[k].weight);
}

TEST_CASE("end-to-end pipeline shapes and errors") {
  const ModelBundle deep = fixture::random_mlp(5, {8, 8, 8, 8, 8, 8}, 17, false, {{0, 0, 3}});
  const ModelBundle shallow = fixture::random_mlp(5, {4, 4, 4}, 18, false, {{1, 3, 3}});
  const CalibrationBatch cb = calib(5, 19);
  PipelineOptions opt;
  opt.depth_method = AlignMethod::kLma;
  const MergeResult r = merge_models(deep, shallow, cb, opt);
  CHECK(r.model.depth() == 6);
  for (const auto& l : r.model.layers) CHECK(l.spec.out_dim == 8);
  CHECK(r.model.heads.size() == 2);
  CHECK(r.recipe.depth_tag == "lma");
  CHECK(r.model.metadata.contains("recipe"));
  CHECK_NOTHROW(r.recipe.depth_plan.validate(6));

  const MergeResult s = merge_models(shallow, deep, cb, opt);
  CHECK(s.recipe.swapped);
  CHECK(s.model.depth() == 6);

  opt.r = {9, 8, 7, 8, 8, 10};
  const MergeResult w = merge_models(deep, shallow, cb, opt);
  for (std::size_t k = 0; k < 6; ++k) CHECK(w.model.layers[k].spec.out_dim == opt.r[k]);

  for (AlignMethod method : {AlignMethod::kSma, AlignMethod::kOracle}) {
    PipelineOptions o;
    o.depth_method = method;
    CHECK(merge_models(deep, shallow, cb, o).model.depth() == 6);
  }

  PipelineOptions vanilla;
  vanilla.strategy = MergeStrategy::kVanillaAvg;
  CHECK_THROWS_AS(merge_models(deep, shallow, cb, vanilla), ValidationError);
  PipelineOptions perm;
  perm.strategy = MergeStrategy::kAlignedAvg;
  CHECK_THROWS_AS(merge_models(deep, shallow, cb, perm), ValidationError);

  const AlignmentPlan plan = build_alignment_plan(SegmentPlan::identity(6), capture_features(deep, cb),
                                                  capture_features(deep, cb), WidthStrategy::kZip);
  const ModelBundle other = fixture::random_mlp(5, {8, 8, 8, 8, 8, 8}, 20);
  CHECK_THROWS_AS(aligned_average(other, deep, plan), ValidationError);
}

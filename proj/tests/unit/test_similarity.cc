// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "fixtures.h"
#include "hetmerge/error.h"
#include "hetmerge/similarity.h"
#include "oracles.h"

using namespace hetmerge;

TEST_CASE("linear CKA identities") {
  std::mt19937_64 rng(1);
  const Matrix x = oracle::random_normal(6, 40, rng);
  CHECK(std::abs(linear_cka(x, x) - 1.0) < 1e-12);
  const IndexPermutation p = fixture::random_permutation(6, rng);
  CHECK(std::abs(linear_cka(p.apply_rows(x), x) - 1.0) < 1e-12);
  for (double c : {-3.0, 0.01, 7.5}) CHECK(std::abs(linear_cka(scale(x, c), x) - 1.0) < 1e-12);
}

TEST_CASE("linear CKA matches the Gram-matrix oracle") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const std::size_t m = 2 + rng() % 30;
    const Matrix x = oracle::random_normal(1 + rng() % 8, m, rng);
    const Matrix y = oracle::random_normal(1 + rng() % 8, m, rng);
    const double v = linear_cka(x, y);
    CHECK(std::abs(v - oracle::cka_gram(x, y)) < 1e-10);
    CHECK(std::abs(v - linear_cka(y, x)) < 1e-12);
    CHECK(v >= -1e-9);
    CHECK(v <= 1 + 1e-9);
  }
}

TEST_CASE("linear CKA degenerate inputs") {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_normal(3, 10, rng);
  CHECK(linear_cka(Matrix(4, 10), x) == 0.0);
  CHECK(linear_cka(Matrix(4, 10, 2.5), x) == 0.0);
  CHECK_THROWS_AS(linear_cka(x, oracle::random_normal(3, 11, rng)), ValidationError);
  CHECK_THROWS_AS(linear_cka(Matrix(3, 1), Matrix(3, 1)), ValidationError);
}

TEST_CASE("layer similarity matrix") {
  std::mt19937_64 rng(4);
  CalibrationBatch b;
  b.inputs = oracle::random_normal(64, 5, rng);
  const ModelBundle a = fixture::random_mlp(5, {8, 8, 8, 8, 8, 8}, 1);
  const ModelBundle s = fixture::random_mlp(5, {4, 4, 4}, 2);
  const FeatureCache ca = capture_features(a, b);
  const FeatureCache cs = capture_features(s, b);

  const LayerSimMatrix self = layer_similarity_matrix(ca, ca);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(self.values(i, i) - 1.0) < 1e-12);

  const LayerSimMatrix c = layer_similarity_matrix(ca, cs);
  REQUIRE(c.values.rows() == 6);
  REQUIRE(c.values.cols() == 3);
  CHECK(c.row_model == fingerprint(a));
  CHECK(c.col_model == fingerprint(s));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(c.values(i, j) == linear_cka(ca.layers[i], cs.layers[j]));
      CHECK(std::abs(c.values(i, j) - oracle::cka_gram(ca.layers[i], cs.layers[j])) < 1e-10);
    }

  CalibrationBatch other = b;
  other.inputs(0, 0) += 1.0;
  CHECK_THROWS_AS(layer_similarity_matrix(ca, capture_features(s, other)), ValidationError);
}

TEST_CASE("neuron correlation") {
  std::mt19937_64 rng(5);
  const Matrix f = oracle::random_normal(4, 25, rng);

  const NeuronCorrMatrix dup = neuron_correlation(f, f);
  REQUIRE(dup.values.rows() == 8);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(dup.values(i, i + 4) == 1.0);
    CHECK(dup.values(i + 4, i) == 1.0);
  }

  const NeuronCorrMatrix neg = neuron_correlation(f, scale(f, -1.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(neg.values(i, i + 4) == -1.0);

  const Matrix g = oracle::random_normal(3, 25, rng);
  const NeuronCorrMatrix c = neuron_correlation(f, g);
  const Matrix stacked = vstack(f, g);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(c.values(i, i) == kMaskedCorrelation);
    for (std::size_t j = 0; j < 7; ++j) {
      if (i == j) continue;
      const double want = oracle::pearson(oracle::row_of(stacked, i), oracle::row_of(stacked, j));
      CHECK(std::abs(c.values(i, j) - want) < 1e-12);
      CHECK(std::abs(c.values(i, j) - c.values(j, i)) < 1e-12);
      CHECK(c.values(i, j) >= -1.0);
      CHECK(c.values(i, j) <= 1.0);
    }
  }

  Matrix flat = g;
  for (std::size_t s = 0; s < flat.cols(); ++s) flat(1, s) = 3.0;
  const NeuronCorrMatrix z = neuron_correlation(f, flat);
  for (std::size_t j = 0; j < 7; ++j)
    if (j != 5) CHECK(z.values(5, j) == 0.0);

  CHECK_THROWS_AS(neuron_correlation(f, oracle::random_normal(3, 24, rng)), ValidationError);
}

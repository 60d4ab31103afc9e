// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature matrices here are neurons x samples, as stored in FeatureCache.

#pragma once

#include <cstdint>
#include <limits>

#include "hetmerge/features.h"
#include "hetmerge/tensor.h"

namespace hetmerge {

// Linear centered kernel alignment between two representations of the same
// samples. Invariant to neuron permutation and isotropic scaling; 0 when
// either representation is constant across samples.
double linear_cka(const Matrix& x, const Matrix& y);

struct LayerSimMatrix {
  Matrix values;  // |A| x |B|
  std::uint64_t row_model = 0;
  std::uint64_t col_model = 0;
};

LayerSimMatrix layer_similarity_matrix(const FeatureCache& a, const FeatureCache& b);

inline constexpr double kMaskedCorrelation = -std::numeric_limits<double>::infinity();

// Pearson correlation between every pair of rows of [a; b]. Rows whose
// variance vanishes correlate 0 with everything; the diagonal holds
// kMaskedCorrelation.
struct NeuronCorrMatrix {
  Matrix values;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

NeuronCorrMatrix neuron_correlation(const Matrix& feat_a, const Matrix& feat_b);

// Rows with their mean removed; rows whose spread is at rounding level are
// zeroed so that they read as constant.
Matrix center_rows(const Matrix& x);

// Pearson correlation of two already-centered rows; 0 if either is zero.
double centered_correlation(std::span<const double> a, std::span<const double> b);

// n_a x n_b block of correlations between rows of a and rows of b.
Matrix cross_correlation(const Matrix& feat_a, const Matrix& feat_b);

}  // namespace hetmerge

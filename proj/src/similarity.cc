// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/similarity.h"

#include <algorithm>
#include <cmath>

#include "hetmerge/error.h"
#include "hetmerge/parallel.h"

namespace hetmerge {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Squared Frobenius norm of a * b^T for row-major a (p x m) and b (q x m).
double cross_gram_sq(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double v = dot(a.row(i), b.row(j));
      s += v * v;
    }
  }
  return s;
}

void require_same_samples(const Matrix& x, const Matrix& y, const char* op) {
  if (x.cols() != y.cols()) {
    throw ShapeError(std::string(op) + ": sample counts differ (" + std::to_string(x.cols()) +
                     " vs " + std::to_string(y.cols()) + ")");
  }
}

}  // namespace

Matrix center_rows(const Matrix& x) {
  Matrix out = x;
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    double peak = 0.0;
    for (double v : row) {
      mean += v;
      peak = std::max(peak, std::abs(v));
    }
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (double& v : row) {
      v -= mean;
      ss += v * v;
    }
    if (std::sqrt(ss) <= 1e-12 * std::sqrt(static_cast<double>(m)) * std::max(1.0, peak)) {
      std::fill(row.begin(), row.end(), 0.0);
    }
  }
  return out;
}

double centered_correlation(std::span<const double> a, std::span<const double> b) {
  const double saa = dot(a, a);
  const double sbb = dot(b, b);
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / std::sqrt(saa * sbb), -1.0, 1.0);
}

double linear_cka(const Matrix& x, const Matrix& y) {
  require_same_samples(x, y, "linear_cka");
  if (x.cols() < 2) throw ValidationError("linear_cka: need at least 2 samples");
  const Matrix xc = center_rows(x);
  const Matrix yc = center_rows(y);
  const double xx = std::sqrt(cross_gram_sq(xc, xc));
  const double yy = std::sqrt(cross_gram_sq(yc, yc));
  if (xx == 0.0 || yy == 0.0) return 0.0;
  return std::clamp(cross_gram_sq(xc, yc) / (xx * yy), 0.0, 1.0);
}

LayerSimMatrix layer_similarity_matrix(const FeatureCache& a, const FeatureCache& b) {
  if (a.batch_fingerprint != b.batch_fingerprint) {
    throw ValidationError("layer_similarity_matrix: caches were captured on different batches");
  }
  LayerSimMatrix out;
  out.values = Matrix(a.depth(), b.depth());
  out.row_model = a.model_fingerprint;
  out.col_model = b.model_fingerprint;
  const std::size_t nb = b.depth();
  parallel_for(a.depth() * nb, [&](std::size_t k) {
    out.values(k / nb, k % nb) = linear_cka(a.layers[k / nb], b.layers[k % nb]);
  });
  return out;
}

NeuronCorrMatrix neuron_correlation(const Matrix& feat_a, const Matrix& feat_b) {
  require_same_samples(feat_a, feat_b, "neuron_correlation");
  const Matrix centered = center_rows(vstack(feat_a, feat_b));
  const std::size_t n = centered.rows();
  NeuronCorrMatrix out;
  out.n_a = feat_a.rows();
  out.n_b = feat_b.rows();
  out.values = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out.values(i, i) = kMaskedCorrelation;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = centered_correlation(centered.row(i), centered.row(j));
      out.values(i, j) = c;
      out.values(j, i) = c;
    }
  }
  return out;
}

Matrix cross_correlation(const Matrix& feat_a, const Matrix& feat_b) {
  require_same_samples(feat_a, feat_b, "cross_correlation");
  const Matrix ca = center_rows(feat_a);
  const Matrix cb = center_rows(feat_b);
  Matrix out(ca.rows(), cb.rows());
  for (std::size_t i = 0; i < ca.rows(); ++i)
    for (std::size_t j = 0; j < cb.rows(); ++j)
      out(i, j) = centered_correlation(ca.row(i), cb.row(j));
  return out;
}

}  // namespace hetmerge

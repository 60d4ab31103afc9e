// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "hetmerge/features.h"
#include "hetmerge/model.h"
#include "hetmerge/tensor.h"

namespace fixture {

using namespace hetmerge;

struct HeadSpec {
  int task;
  std::size_t label_begin;
  std::size_t labels;
};

// Random MLP with f32-representable weights. Biases are shifted positive so
// ReLU units rarely die on standard-normal inputs.
inline ModelBundle random_mlp(std::size_t input_dim, const std::vector<std::size_t>& widths,
                              std::uint64_t seed, bool residual = false,
                              std::vector<HeadSpec> heads = {{0, 0, 3}},
                              Activation act = Activation::kRelu) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ModelBundle m;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool res = residual && i > 0 && widths[i] == in;
    Layer l = make_layer({res ? LayerKind::kResidualDense : LayerKind::kDense, in, widths[i], act});
    const double s = (res ? 0.3 : 1.0) / std::sqrt(static_cast<double>(in));
    for (double& v : l.weight.data()) v = static_cast<float>(s * u(rng));
    for (double& v : l.bias) v = static_cast<float>(0.3 + 0.2 * u(rng));
    m.layers.push_back(std::move(l));
    in = widths[i];
  }
  for (const auto& hs : heads) {
    Head h;
    h.task = hs.task;
    h.label_begin = hs.label_begin;
    h.weight = Matrix(hs.labels, in);
    for (double& v : h.weight.data()) v = static_cast<float>(u(rng));
    h.bias.assign(hs.labels, 0.0);
    for (double& v : h.bias) v = static_cast<float>(0.1 * u(rng));
    m.heads.push_back(std::move(h));
  }
  m.validate();
  return m;
}

// Re-express every hidden layer of m in a permuted neuron order. perms[k]
// maps new row i to old row perms[k][i]; residual layers need the same
// permutation as their input.
inline ModelBundle permute_model(const ModelBundle& m, const std::vector<IndexPermutation>& perms) {
  ModelBundle out = m;
  for (std::size_t k = 0; k < m.depth(); ++k) {
    Layer& l = out.layers[k];
    Matrix w = perms[k].apply_rows(m.layers[k].weight);
    if (k > 0) w = perms[k - 1].apply_rows(w.transposed()).transposed();
    l.weight = w;
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = m.layers[k].bias[perms[k][i]];
  }
  for (auto& h : out.heads) h.weight = perms.back().apply_rows(h.weight.transposed()).transposed();
  return out;
}

inline IndexPermutation random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return IndexPermutation(p);
}

// True when some unit is constant across the batch. Such units correlate 0
// with everything, so twin matching cannot recover them.
inline bool has_dead_units(const ModelBundle& m, const CalibrationBatch& cb) {
  for (const Matrix& f : capture_features(m, cb).layers) {
    for (std::size_t i = 0; i < f.rows(); ++i) {
      const auto row = f.row(i);
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      if (*hi - *lo < 1e-6) return true;
    }
  }
  return false;
}

}  // namespace fixture

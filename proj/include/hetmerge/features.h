// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hetmerge/model.h"
#include "hetmerge/tensor.h"

namespace hetmerge {

struct CalibrationBatch {
  Matrix inputs;            // samples x input dim
  std::vector<int> labels;  // optional, empty when unknown
  std::uint64_t seed = 0;

  std::size_t samples() const { return inputs.rows(); }
  std::uint64_t fingerprint() const;
  void validate() const;
};

// Draws `count` distinct rows of `pool` (or all of them if the pool is
// smaller) in a seed-determined order.
CalibrationBatch sample_calibration_batch(const Matrix& pool, const std::vector<int>& labels,
                                          std::size_t count, std::uint64_t seed);

inline constexpr std::size_t kDefaultCalibrationSamples = 512;

// layers[i] holds the post-activation output of layer i as neurons x samples.
struct FeatureCache {
  std::vector<Matrix> layers;
  std::uint64_t model_fingerprint = 0;
  std::uint64_t batch_fingerprint = 0;

  std::size_t depth() const { return layers.size(); }
  std::size_t samples() const { return layers.empty() ? 0 : layers.front().cols(); }
};

FeatureCache capture_features(const ModelBundle& model, const CalibrationBatch& batch);

// `extra` is merged into the container metadata.
void save_features(const FeatureCache& cache, const std::filesystem::path& path,
                   const nlohmann::json& extra = nlohmann::json::object());
FeatureCache load_features(const std::filesystem::path& path);

}  // namespace hetmerge

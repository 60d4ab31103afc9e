// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/features.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "hetmerge/error.h"
#include "hetmerge/fingerprint.h"
#include "hetmerge/parallel.h"

namespace hetmerge {

namespace {

constexpr std::size_t kCaptureChunk = 128;

std::uint64_t parse_fingerprint(const nlohmann::json& j, const char* key) {
  return std::stoull(j.at(key).get<std::string>(), nullptr, 16);
}

}  // namespace

std::uint64_t CalibrationBatch::fingerprint() const {
  Fingerprint fp;
  fp.mix(static_cast<std::uint64_t>(inputs.rows()));
  fp.mix(static_cast<std::uint64_t>(inputs.cols()));
  fp.mix(inputs.data());
  return fp.value();
}

void CalibrationBatch::validate() const {
  if (inputs.rows() < 2) {
    throw ValidationError("calibration batch needs at least 2 samples, got " +
                          std::to_string(inputs.rows()));
  }
  if (!labels.empty() && labels.size() != inputs.rows()) {
    throw ValidationError("calibration batch label count does not match sample count");
  }
  require_finite(inputs, "calibration batch");
}

CalibrationBatch sample_calibration_batch(const Matrix& pool, const std::vector<int>& labels,
                                          std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(pool.rows());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(count, order.size()));

  CalibrationBatch batch;
  batch.seed = seed;
  batch.inputs = Matrix(order.size(), pool.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::copy(pool.row(order[r]).begin(), pool.row(order[r]).end(), batch.inputs.row(r).begin());
    if (!labels.empty()) batch.labels.push_back(labels[order[r]]);
  }
  return batch;
}

FeatureCache capture_features(const ModelBundle& model, const CalibrationBatch& batch) {
  batch.validate();
  if (batch.inputs.cols() != model.input_dim()) {
    throw ShapeError("capture_features: batch has " + std::to_string(batch.inputs.cols()) +
                     " features, model expects " + std::to_string(model.input_dim()));
  }
  const std::size_t m = batch.samples();
  const std::size_t chunks = (m + kCaptureChunk - 1) / kCaptureChunk;
  std::vector<std::vector<Matrix>> traces(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kCaptureChunk;
    const std::size_t end = std::min(m, begin + kCaptureChunk);
    traces[c] = forward_trace(model, slice_rows(batch.inputs, begin, end));
  });

  FeatureCache cache;
  cache.model_fingerprint = fingerprint(model);
  cache.batch_fingerprint = batch.fingerprint();
  for (std::size_t l = 0; l < model.depth(); ++l) {
    Matrix f(model.layers[l].spec.out_dim, m);
    for (std::size_t c = 0; c < chunks; ++c) {
      const Matrix& part = traces[c][l];
      const std::size_t offset = c * kCaptureChunk;
      for (std::size_t s = 0; s < part.rows(); ++s)
        for (std::size_t n = 0; n < part.cols(); ++n) f(n, offset + s) = part(s, n);
    }
    cache.layers.push_back(std::move(f));
  }
  return cache;
}

void save_features(const FeatureCache& cache, const std::filesystem::path& path,
                   const nlohmann::json& extra) {
  Container c;
  for (std::size_t i = 0; i < cache.depth(); ++i) {
    c.tensors.push_back(NamedTensor::from_matrix("feat.layer" + std::to_string(i), cache.layers[i]));
  }
  c.header["metadata"] = {{"kind", "feature_cache"},
                          {"model_fingerprint", fingerprint_hex(cache.model_fingerprint)},
                          {"batch_fingerprint", fingerprint_hex(cache.batch_fingerprint)}};
  for (const auto& [key, value] : extra.items()) c.header["metadata"][key] = value;
  write_container(path, c);
}

FeatureCache load_features(const std::filesystem::path& path) {
  const Container c = read_container(path);
  FeatureCache cache;
  try {
    const auto& meta = c.header.at("metadata");
    cache.model_fingerprint = parse_fingerprint(meta, "model_fingerprint");
    cache.batch_fingerprint = parse_fingerprint(meta, "batch_fingerprint");
  } catch (const std::exception& e) {
    throw FormatError(std::string("feature cache metadata malformed: ") + e.what());
  }
  for (std::size_t i = 0;; ++i) {
    const NamedTensor* t = c.find("feat.layer" + std::to_string(i));
    if (!t) break;
    cache.layers.push_back(t->to_matrix());
  }
  if (cache.layers.empty()) throw FormatError("feature cache holds no feat.layer tensors");
  return cache;
}

}  // namespace hetmerge

// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "hetmerge/model.h"
#include "hetmerge/tensor.h"

namespace hetmerge {

// Samples in rows, global integer labels.
struct Dataset {
  Matrix x;
  std::vector<int> y;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return x.rows(); }
  void validate() const;
};

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// A task owns the global labels [label_begin, label_end).
struct TaskRange {
  int task = 0;
  std::size_t label_begin = 0;
  std::size_t label_end = 0;
  bool contains(int label) const {
    return label >= 0 && static_cast<std::size_t>(label) >= label_begin &&
           static_cast<std::size_t>(label) < label_end;
  }
};

std::vector<TaskRange> tasks_of(const ModelBundle& model);

struct EvalReport {
  double joint_acc = 0.0;
  std::map<int, double> per_task_acc;
  double avg_acc = 0.0;
  std::size_t samples = 0;
  std::map<int, std::size_t> per_task_samples;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Joint accuracy is the argmax over every head's logits concatenated in label
// order; per-task accuracy restricts to the task's samples and its own head.
// An empty task list evaluates every head the model has.
EvalReport evaluate(const ModelBundle& model, const Dataset& data,
                    const std::vector<TaskRange>& tasks = {});

// lambda * a + (1 - lambda) * b over all weights, biases and heads.
ModelBundle interpolate(const ModelBundle& a, const ModelBundle& b, double lambda);
// Same with explicit weights, so the grid can use exact complements.
ModelBundle interpolate_weighted(const ModelBundle& a, const ModelBundle& b, double wa, double wb);

// Mean softmax cross-entropy over the joint label space.
double cross_entropy_loss(const ModelBundle& model, const Dataset& data);

inline constexpr std::size_t kBarrierPoints = 21;

struct BarrierReport {
  std::array<double, kBarrierPoints> lambdas{};
  std::array<double, kBarrierPoints> losses{};
  double loss_a = 0.0;
  double loss_b = 0.0;
  double barrier = 0.0;

  nlohmann::json to_json() const;
  std::string to_table() const;
  std::string to_csv() const;
};

BarrierReport loss_barrier(const ModelBundle& a, const ModelBundle& b, const Dataset& data);

}  // namespace hetmerge

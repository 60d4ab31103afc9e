// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic stand-ins for the two-task classification setting: a Gaussian
// mixture whose classes are split into two label-disjoint tasks, and a small
// deterministic SGD trainer.

#pragma once

#include <cstdint>
#include <vector>

#include "hetmerge/eval.h"
#include "hetmerge/model.h"

namespace hetmerge {

struct TaskSpec {
  std::size_t classes_per_task = 5;
  std::size_t input_dim = 16;
  // Typical distance between two class means, in units of the noise scale.
  double separation = 7.0;
  std::size_t samples_per_class = 600;
  double train_fraction = 2.0 / 3.0;

  void validate() const;
};

struct TaskData {
  Dataset train_a, test_a;
  Dataset train_b, test_b;
  Dataset train_joint, test_joint;

  TaskRange task_a() const;
  TaskRange task_b() const;
};

// Task A owns labels [0, K) and task B owns [K, 2K).
TaskData gen_tasks(const TaskSpec& spec, std::uint64_t seed);

// A dense input layer followed by `widths.size() - 1` hidden layers. With
// residual set, every hidden layer after the first is residual (widths must
// then agree).
std::vector<LayerSpec> mlp_arch(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                bool residual = false);

struct TrainConfig {
  std::size_t epochs = 15;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// He-uniform weights and zero biases, rounded to f32.
ModelBundle init_mlp(const std::vector<LayerSpec>& arch, const TaskRange& head,
                     std::uint64_t seed);

// Minibatch SGD on softmax cross-entropy for the single head `head`.
// epoch_losses, when given, receives the mean training loss of each epoch.
ModelBundle train_mlp(const std::vector<LayerSpec>& arch, const Dataset& data,
                      const TaskRange& head, const TrainConfig& config,
                      std::vector<double>* epoch_losses = nullptr);

}  // namespace hetmerge

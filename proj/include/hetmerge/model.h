// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequential dense / residual-dense networks: description, execution,
// depth extension and (de)serialization.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hetmerge/container.h"
#include "hetmerge/depth_align.h"
#include "hetmerge/tensor.h"

namespace hetmerge {

enum class LayerKind { kDense, kResidualDense };
enum class Activation { kRelu, kLinear };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
LayerKind parse_layer_kind(const std::string& s);
Activation parse_activation(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kRelu;

  bool operator==(const LayerSpec&) const = default;
};

// Weights are out_dim x in_dim, so neuron i of the layer is weight row i.
struct Layer {
  LayerSpec spec;
  Matrix weight;
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

// A task-specific classifier on top of the last hidden layer. Column c of its
// logits is global label label_begin + c.
struct Head {
  int task = 0;
  std::size_t label_begin = 0;
  Matrix weight;  // labels x hidden
  std::vector<double> bias;

  std::size_t labels() const { return weight.rows(); }
  std::size_t label_end() const { return label_begin + labels(); }
  bool operator==(const Head&) const = default;
};

struct ModelBundle {
  std::vector<Layer> layers;
  std::vector<Head> heads;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().spec.in_dim; }
  std::size_t hidden_dim() const { return layers.back().spec.out_dim; }
  std::vector<LayerSpec> specs() const;

  const Head& head(int task) const;
  const Head* find_head(int task) const;
  // Heads sorted by label_begin; the order used for joint logits.
  std::vector<const Head*> heads_by_label() const;
  // Global label of each joint-logit column.
  std::vector<std::size_t> joint_labels() const;

  // Throws ValidationError naming the first broken invariant.
  void validate() const;

  bool operator==(const ModelBundle&) const = default;
};

// Fresh layer with zero weights and bias.
Layer make_layer(const LayerSpec& spec);

// batch is samples x input_dim. With no head selected, logits of every head
// are concatenated in label order.
Matrix forward(const ModelBundle& model, const Matrix& batch,
               std::optional<int> head = std::nullopt);
// Outputs (post-activation, post-shortcut) of every layer, samples x out_dim.
std::vector<Matrix> forward_trace(const ModelBundle& model, const Matrix& batch);
Matrix apply_layer(const Layer& layer, const Matrix& x);
Matrix apply_head(const Head& head, const Matrix& hidden);

std::uint64_t fingerprint(const ModelBundle& model);

enum class ExtensionMode { kIdentityDense, kZeroResidual };
std::string to_string(ExtensionMode mode);

// insert_after[i] extra layers follow original layer i.
struct ExtensionPlan {
  std::vector<std::size_t> insert_after;
  ExtensionMode mode = ExtensionMode::kIdentityDense;

  // Segment i of length L contributes L - 1 insertions after layer i.
  static ExtensionPlan from_segments(const SegmentPlan& plan, ExtensionMode mode);
  std::size_t extended_depth() const;
  // For each extended position, the original layer it belongs to.
  std::vector<std::size_t> source_layers() const;
};

// Inserted IdentityDense layers are W = I, b = 0, linear; inserted
// ZeroResidual layers are residual W = 0, b = 0, linear.
ModelBundle extend_model(const ModelBundle& model, const ExtensionPlan& plan);

Container to_container(const ModelBundle& model);
ModelBundle model_from_container(const Container& c);
void save_model(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace hetmerge

// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/model.h"

#include <algorithm>
#include <cinttypes>
#include <cstdio>

#include "hetmerge/error.h"
#include "hetmerge/fingerprint.h"

namespace hetmerge {

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fp);
  return buf;
}

std::string to_string(LayerKind kind) {
  return kind == LayerKind::kDense ? "dense" : "residual_dense";
}

std::string to_string(Activation act) { return act == Activation::kRelu ? "relu" : "linear"; }

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "dense") return LayerKind::kDense;
  if (s == "residual_dense") return LayerKind::kResidualDense;
  throw ValidationError("unknown layer kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "linear") return Activation::kLinear;
  throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(ExtensionMode mode) {
  return mode == ExtensionMode::kIdentityDense ? "identity_dense" : "zero_residual";
}

std::vector<LayerSpec> ModelBundle::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers) out.push_back(l.spec);
  return out;
}

const Head* ModelBundle::find_head(int task) const {
  for (const auto& h : heads)
    if (h.task == task) return &h;
  return nullptr;
}

const Head& ModelBundle::head(int task) const {
  if (const Head* h = find_head(task)) return *h;
  throw ValidationError("model has no head for task " + std::to_string(task));
}

std::vector<const Head*> ModelBundle::heads_by_label() const {
  std::vector<const Head*> out;
  for (const auto& h : heads) out.push_back(&h);
  std::stable_sort(out.begin(), out.end(), [](const Head* a, const Head* b) {
    return a->label_begin < b->label_begin;
  });
  return out;
}

std::vector<std::size_t> ModelBundle::joint_labels() const {
  std::vector<std::size_t> out;
  for (const Head* h : heads_by_label())
    for (std::size_t c = 0; c < h->labels(); ++c) out.push_back(h->label_begin + c);
  return out;
}

void ModelBundle::validate() const {
  if (layers.empty()) throw ValidationError("model must have at least one layer");
  if (heads.empty()) throw ValidationError("model must have at least one head");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer" + std::to_string(i);
    if (l.spec.in_dim == 0 || l.spec.out_dim == 0) {
      throw ValidationError(where + ": zero-sized layer");
    }
    if (l.spec.kind == LayerKind::kResidualDense && l.spec.in_dim != l.spec.out_dim) {
      throw ValidationError(where + ": residual layer needs in_dim == out_dim");
    }
    if (i > 0 && layers[i - 1].spec.out_dim != l.spec.in_dim) {
      throw ValidationError(where + ": in_dim " + std::to_string(l.spec.in_dim) +
                            " does not chain with previous out_dim " +
                            std::to_string(layers[i - 1].spec.out_dim));
    }
    if (l.weight.rows() != l.spec.out_dim || l.weight.cols() != l.spec.in_dim) {
      throw ValidationError(where + ".weight: shape " + l.weight.shape_string() +
                            " does not match spec");
    }
    if (l.bias.size() != l.spec.out_dim) {
      throw ValidationError(where + ".bias: length does not match out_dim");
    }
    require_finite(l.weight, (where + ".weight").c_str());
  }
  std::vector<int> seen;
  for (const auto& h : heads) {
    const std::string where = "head" + std::to_string(h.task);
    if (std::find(seen.begin(), seen.end(), h.task) != seen.end()) {
      throw ValidationError(where + ": duplicate task id");
    }
    seen.push_back(h.task);
    if (h.weight.cols() != hidden_dim() || h.weight.rows() == 0) {
      throw ValidationError(where + ".weight: shape " + h.weight.shape_string() +
                            " does not match hidden dim " + std::to_string(hidden_dim()));
    }
    if (h.bias.size() != h.labels()) {
      throw ValidationError(where + ".bias: length does not match label count");
    }
    require_finite(h.weight, (where + ".weight").c_str());
  }
  const auto ordered = heads_by_label();
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->label_begin < ordered[i - 1]->label_end()) {
      throw ValidationError("heads have overlapping label ranges");
    }
  }
}

Layer make_layer(const LayerSpec& spec) {
  return Layer{spec, Matrix(spec.out_dim, spec.in_dim), std::vector<double>(spec.out_dim, 0.0)};
}

Matrix apply_layer(const Layer& layer, const Matrix& x) {
  const auto& spec = layer.spec;
  if (x.cols() != spec.in_dim) {
    throw ShapeError("forward: input " + x.shape_string() + " does not match layer in_dim " +
                     std::to_string(spec.in_dim));
  }
  Matrix y(x.rows(), spec.out_dim);
  for (std::size_t s = 0; s < x.rows(); ++s) {
    auto in = x.row(s);
    auto out = y.row(s);
    for (std::size_t o = 0; o < spec.out_dim; ++o) {
      auto w = layer.weight.row(o);
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.in_dim; ++k) acc += in[k] * w[k];
      double v = acc + layer.bias[o];
      if (spec.kind == LayerKind::kResidualDense) v = in[o] + v;
      if (spec.activation == Activation::kRelu && v < 0.0) v = 0.0;
      out[o] = v;
    }
  }
  return y;
}

Matrix apply_head(const Head& head, const Matrix& hidden) {
  if (hidden.cols() != head.weight.cols()) {
    throw ShapeError("head" + std::to_string(head.task) + ": hidden " + hidden.shape_string() +
                     " vs weight " + head.weight.shape_string());
  }
  Matrix logits(hidden.rows(), head.labels());
  for (std::size_t s = 0; s < hidden.rows(); ++s) {
    auto h = hidden.row(s);
    for (std::size_t c = 0; c < head.labels(); ++c) {
      auto w = head.weight.row(c);
      double acc = 0.0;
      for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * w[k];
      logits(s, c) = acc + head.bias[c];
    }
  }
  return logits;
}

std::vector<Matrix> forward_trace(const ModelBundle& model, const Matrix& batch) {
  if (model.layers.empty()) throw ValidationError("forward: model has no layers");
  std::vector<Matrix> out;
  out.reserve(model.depth());
  const Matrix* x = &batch;
  for (const auto& layer : model.layers) {
    out.push_back(apply_layer(layer, *x));
    x = &out.back();
  }
  return out;
}

Matrix forward(const ModelBundle& model, const Matrix& batch, std::optional<int> head) {
  if (model.layers.empty()) throw ValidationError("forward: model has no layers");
  if (head && !model.find_head(*head)) {
    throw ValidationError("forward: unknown head id " + std::to_string(*head));
  }
  Matrix hidden = batch;
  for (const auto& layer : model.layers) hidden = apply_layer(layer, hidden);
  if (head) return apply_head(model.head(*head), hidden);

  const auto ordered = model.heads_by_label();
  std::size_t total = 0;
  for (const Head* h : ordered) total += h->labels();
  Matrix joint(hidden.rows(), total);
  std::size_t col = 0;
  for (const Head* h : ordered) {
    Matrix part = apply_head(*h, hidden);
    for (std::size_t s = 0; s < part.rows(); ++s)
      for (std::size_t c = 0; c < part.cols(); ++c) joint(s, col + c) = part(s, c);
    col += part.cols();
  }
  return joint;
}

std::uint64_t fingerprint(const ModelBundle& model) {
  Fingerprint fp;
  for (const auto& l : model.layers) {
    fp.mix(static_cast<std::uint64_t>(l.spec.kind));
    fp.mix(static_cast<std::uint64_t>(l.spec.activation));
    fp.mix(l.weight.data());
    fp.mix(l.bias);
  }
  for (const auto& h : model.heads) {
    fp.mix(static_cast<std::uint64_t>(h.task));
    fp.mix(static_cast<std::uint64_t>(h.label_begin));
    fp.mix(h.weight.data());
    fp.mix(h.bias);
  }
  return fp.value();
}

ExtensionPlan ExtensionPlan::from_segments(const SegmentPlan& plan, ExtensionMode mode) {
  ExtensionPlan out;
  out.mode = mode;
  for (std::size_t i = 0; i < plan.segments(); ++i) {
    out.insert_after.push_back(plan.segment_length(i) - 1);
  }
  return out;
}

std::size_t ExtensionPlan::extended_depth() const {
  std::size_t d = 0;
  for (std::size_t n : insert_after) d += 1 + n;
  return d;
}

std::vector<std::size_t> ExtensionPlan::source_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < insert_after.size(); ++i) {
    for (std::size_t k = 0; k <= insert_after[i]; ++k) out.push_back(i);
  }
  return out;
}

ModelBundle extend_model(const ModelBundle& model, const ExtensionPlan& plan) {
  if (std::all_of(plan.insert_after.begin(), plan.insert_after.end(),
                  [](std::size_t n) { return n == 0; })) {
    if (!plan.insert_after.empty() && plan.insert_after.size() != model.depth()) {
      throw ValidationError("extend_model: plan covers " +
                            std::to_string(plan.insert_after.size()) +
                            " layers but the model has " + std::to_string(model.depth()));
    }
    return model;
  }
  if (plan.insert_after.size() != model.depth()) {
    throw ValidationError("extend_model: plan covers " + std::to_string(plan.insert_after.size()) +
                          " layers but the model has " + std::to_string(model.depth()));
  }
  ModelBundle out;
  out.heads = model.heads;
  out.metadata = model.metadata;
  for (std::size_t i = 0; i < model.depth(); ++i) {
    out.layers.push_back(model.layers[i]);
    const std::size_t width = model.layers[i].spec.out_dim;
    for (std::size_t k = 0; k < plan.insert_after[i]; ++k) {
      LayerSpec spec{plan.mode == ExtensionMode::kIdentityDense ? LayerKind::kDense
                                                                : LayerKind::kResidualDense,
                     width, width, Activation::kLinear};
      Layer layer = make_layer(spec);
      if (plan.mode == ExtensionMode::kIdentityDense) layer.weight = Matrix::identity(width);
      out.layers.push_back(std::move(layer));
    }
  }
  out.metadata["extension"] = {{"mode", to_string(plan.mode)},
                               {"insert_after", plan.insert_after}};
  return out;
}

Container to_container(const ModelBundle& model) {
  model.validate();
  Container c;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.depth(); ++i) {
    const auto& l = model.layers[i];
    layers.push_back({{"kind", to_string(l.spec.kind)},
                      {"in_dim", l.spec.in_dim},
                      {"out_dim", l.spec.out_dim},
                      {"activation", to_string(l.spec.activation)}});
    c.tensors.push_back(NamedTensor::from_matrix("layer" + std::to_string(i) + ".weight", l.weight));
    c.tensors.push_back(NamedTensor::from_vector("layer" + std::to_string(i) + ".bias", l.bias));
  }
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : model.heads) {
    heads.push_back({{"task", h.task}, {"labels", {h.label_begin, h.label_end()}}});
    c.tensors.push_back(NamedTensor::from_matrix("head" + std::to_string(h.task) + ".weight", h.weight));
    c.tensors.push_back(NamedTensor::from_vector("head" + std::to_string(h.task) + ".bias", h.bias));
  }
  c.header["layers"] = std::move(layers);
  c.header["heads"] = std::move(heads);
  c.header["metadata"] = model.metadata;
  return c;
}

namespace {

std::vector<double> as_vector(const NamedTensor& t, std::size_t expected) {
  if (t.shape.size() != 1 || t.shape[0] != expected) {
    throw ValidationError("tensor '" + t.name + "': expected shape [" + std::to_string(expected) + "]");
  }
  return t.values;
}

Matrix as_matrix(const NamedTensor& t, std::size_t rows, std::size_t cols) {
  if (t.shape.size() != 2 || t.shape[0] != rows || t.shape[1] != cols) {
    throw ValidationError("tensor '" + t.name + "': expected shape [" + std::to_string(rows) +
                          "," + std::to_string(cols) + "]");
  }
  return t.to_matrix();
}

}  // namespace

ModelBundle model_from_container(const Container& c) {
  const auto& h = c.header;
  if (!h.contains("layers") || !h["layers"].is_array() || !h.contains("heads") ||
      !h["heads"].is_array()) {
    throw FormatError("HMM1 header does not describe a model (missing layers/heads)");
  }
  ModelBundle m;
  try {
    for (std::size_t i = 0; i < h["layers"].size(); ++i) {
      const auto& lj = h["layers"][i];
      LayerSpec spec{parse_layer_kind(lj.at("kind").get<std::string>()),
                     lj.at("in_dim").get<std::size_t>(), lj.at("out_dim").get<std::size_t>(),
                     parse_activation(lj.at("activation").get<std::string>())};
      const std::string prefix = "layer" + std::to_string(i);
      m.layers.push_back(Layer{spec,
                               as_matrix(c.tensor(prefix + ".weight"), spec.out_dim, spec.in_dim),
                               as_vector(c.tensor(prefix + ".bias"), spec.out_dim)});
    }
    const std::size_t hidden = m.layers.empty() ? 0 : m.hidden_dim();
    for (const auto& hj : h["heads"]) {
      Head head;
      head.task = hj.at("task").get<int>();
      const auto labels = hj.at("labels").get<std::vector<std::size_t>>();
      if (labels.size() != 2 || labels[1] <= labels[0]) {
        throw ValidationError("head" + std::to_string(head.task) + ": bad label range");
      }
      head.label_begin = labels[0];
      const std::string prefix = "head" + std::to_string(head.task);
      head.weight = as_matrix(c.tensor(prefix + ".weight"), labels[1] - labels[0], hidden);
      head.bias = as_vector(c.tensor(prefix + ".bias"), labels[1] - labels[0]);
      m.heads.push_back(std::move(head));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  if (h.contains("metadata")) m.metadata = h["metadata"];
  m.validate();
  return m;
}

void save_model(const ModelBundle& model, const std::filesystem::path& path) {
  write_container(path, to_container(model));
}

ModelBundle load_model(const std::filesystem::path& path) {
  return model_from_container(read_container(path));
}

}  // namespace hetmerge

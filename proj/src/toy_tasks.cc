// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/toy_tasks.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hetmerge/error.h"

namespace hetmerge {

namespace {

// out = a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// out = a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t s = 0; s < a.rows(); ++s) {
    auto ar = a.row(s);
    auto br = b.row(s);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double v = ar[i];
      if (v == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) orow[j] += v * br[j];
    }
  }
  return out;
}

Dataset subset(const Matrix& x, const std::vector<int>& y, std::size_t begin, std::size_t end) {
  Dataset d;
  d.x = slice_rows(x, begin, end);
  d.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin),
             y.begin() + static_cast<std::ptrdiff_t>(end));
  return d;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset d;
  d.x = vstack(a.x, b.x);
  d.y = a.y;
  d.y.insert(d.y.end(), b.y.begin(), b.y.end());
  return d;
}

struct TaskSplit {
  Dataset train, test;
};

// Samples for classes [first, first + count) drawn from per-class Gaussians,
// interleaved by class so that prefix splits stay balanced.
TaskSplit sample_task(const TaskSpec& spec, const std::vector<std::vector<double>>& means,
                      const std::vector<std::vector<double>>& scales, std::size_t first,
                      std::mt19937_64& rng) {
  const std::size_t k = spec.classes_per_task;
  const std::size_t n = spec.samples_per_class;
  const std::size_t n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * n));
  std::normal_distribution<double> noise(0.0, 1.0);

  Matrix x(k * n, spec.input_dim);
  std::vector<int> y(k * n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t row = s * k + c;
      const std::size_t cls = first + c;
      for (std::size_t d = 0; d < spec.input_dim; ++d) {
        x(row, d) = static_cast<float>(means[cls][d] + scales[cls][d] * noise(rng));
      }
      y[row] = static_cast<int>(cls);
    }
  }
  return {subset(x, y, 0, n_train * k), subset(x, y, n_train * k, n * k)};
}

double stable_softmax_xent(std::span<const double> logits, std::size_t target,
                           std::span<double> grad) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    grad[c] = std::exp(logits[c] - peak);
    z += grad[c];
  }
  for (std::size_t c = 0; c < logits.size(); ++c) grad[c] /= z;
  grad[target] -= 1.0;
  return std::log(z) + peak - logits[target];
}

}  // namespace

void TaskSpec::validate() const {
  if (classes_per_task < 2) throw ValidationError("task spec: need at least 2 classes per task");
  if (input_dim == 0) throw ValidationError("task spec: zero input dimension");
  if (samples_per_class < 2) throw ValidationError("task spec: need at least 2 samples per class");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("task spec: train fraction must lie in (0, 1)");
  }
  if (!(separation > 0.0)) throw ValidationError("task spec: separation must be positive");
}

TaskRange TaskData::task_a() const {
  const std::size_t k = train_a.metadata.value("classes_per_task", std::size_t{0});
  return {0, 0, k};
}

TaskRange TaskData::task_b() const {
  const std::size_t k = train_b.metadata.value("classes_per_task", std::size_t{0});
  return {1, k, 2 * k};
}

TaskData gen_tasks(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> spread(0.7, 1.3);

  const std::size_t classes = 2 * spec.classes_per_task;
  const double mean_scale = spec.separation / std::sqrt(2.0 * static_cast<double>(spec.input_dim));
  std::vector<std::vector<double>> means(classes, std::vector<double>(spec.input_dim));
  std::vector<std::vector<double>> scales(classes, std::vector<double>(spec.input_dim));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t d = 0; d < spec.input_dim; ++d) {
      means[c][d] = mean_scale * normal(rng);
      scales[c][d] = spread(rng);
    }
  }

  TaskSplit a = sample_task(spec, means, scales, 0, rng);
  TaskSplit b = sample_task(spec, means, scales, spec.classes_per_task, rng);

  TaskData out{std::move(a.train), std::move(a.test), std::move(b.train), std::move(b.test), {}, {}};
  out.train_joint = concat(out.train_a, out.train_b);
  out.test_joint = concat(out.test_a, out.test_b);

  const nlohmann::json common = {{"seed", seed},
                                 {"classes_per_task", spec.classes_per_task},
                                 {"input_dim", spec.input_dim},
                                 {"separation", spec.separation}};
  auto tag = [&](Dataset& d, const char* task, const char* split) {
    d.metadata = common;
    d.metadata["task"] = task;
    d.metadata["split"] = split;
  };
  tag(out.train_a, "a", "train");
  tag(out.test_a, "a", "test");
  tag(out.train_b, "b", "train");
  tag(out.test_b, "b", "test");
  tag(out.train_joint, "joint", "train");
  tag(out.test_joint, "joint", "test");
  return out;
}

std::vector<LayerSpec> mlp_arch(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                bool residual) {
  if (widths.empty()) throw ValidationError("mlp_arch: need at least one layer");
  std::vector<LayerSpec> arch;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool res = residual && i > 0;
    if (res && widths[i] != in) {
      throw ValidationError("mlp_arch: residual layer " + std::to_string(i) +
                            " must keep width " + std::to_string(in));
    }
    arch.push_back({res ? LayerKind::kResidualDense : LayerKind::kDense, in, widths[i],
                    Activation::kRelu});
    in = widths[i];
  }
  return arch;
}

ModelBundle init_mlp(const std::vector<LayerSpec>& arch, const TaskRange& head,
                     std::uint64_t seed) {
  if (head.label_end <= head.label_begin) throw ValidationError("init_mlp: empty head");
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& w, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : w.data()) v = static_cast<float>(u(rng));
  };
  ModelBundle m;
  for (const auto& spec : arch) {
    Layer l = make_layer(spec);
    double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim));
    if (spec.kind == LayerKind::kResidualDense) bound *= 0.5;
    fill(l.weight, bound);
    m.layers.push_back(std::move(l));
  }
  Head h;
  h.task = head.task;
  h.label_begin = head.label_begin;
  h.weight = Matrix(head.label_end - head.label_begin, m.hidden_dim());
  fill(h.weight, std::sqrt(1.0 / static_cast<double>(m.hidden_dim())));
  h.bias.assign(h.labels(), 0.0);
  m.heads.push_back(std::move(h));
  m.validate();
  return m;
}

ModelBundle train_mlp(const std::vector<LayerSpec>& arch, const Dataset& data,
                      const TaskRange& head_range, const TrainConfig& config,
                      std::vector<double>* epoch_losses) {
  data.validate();
  if (arch.empty() || arch.front().in_dim != data.x.cols()) {
    throw ValidationError("train_mlp: architecture input dim does not match data");
  }
  if (config.batch_size == 0) throw ValidationError("train_mlp: batch size must be positive");
  for (int label : data.y) {
    if (!head_range.contains(label)) {
      throw ValidationError("train_mlp: label " + std::to_string(label) +
                            " outside the head's range");
    }
  }

  ModelBundle model = init_mlp(arch, head_range, config.seed);
  Head& head = model.heads.front();
  const std::size_t depth = model.depth();
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::size_t bs = end - begin;
      Matrix x(bs, data.x.cols());
      for (std::size_t i = 0; i < bs; ++i) {
        std::copy(data.x.row(order[begin + i]).begin(), data.x.row(order[begin + i]).end(),
                  x.row(i).begin());
      }

      // Forward, keeping every layer's input and pre-activation.
      std::vector<Matrix> inputs{x};
      std::vector<Matrix> pre;
      for (const auto& layer : model.layers) {
        Matrix z = matmul_nt(inputs.back(), layer.weight);
        for (std::size_t s = 0; s < bs; ++s) {
          for (std::size_t o = 0; o < layer.spec.out_dim; ++o) {
            z(s, o) += layer.bias[o];
            if (layer.spec.kind == LayerKind::kResidualDense) z(s, o) += inputs.back()(s, o);
          }
        }
        Matrix h = z;
        if (layer.spec.activation == Activation::kRelu)
          for (double& v : h.data()) v = std::max(v, 0.0);
        pre.push_back(std::move(z));
        inputs.push_back(std::move(h));
      }
      Matrix logits = matmul_nt(inputs.back(), head.weight);
      Matrix delta(bs, head.labels());
      for (std::size_t s = 0; s < bs; ++s) {
        for (std::size_t c = 0; c < head.labels(); ++c) logits(s, c) += head.bias[c];
        const auto target = static_cast<std::size_t>(data.y[order[begin + s]]) - head.label_begin;
        loss_sum += stable_softmax_xent(logits.row(s), target, delta.row(s));
      }
      if (!std::isfinite(loss_sum)) {
        throw TrainingError("train_mlp: loss became non-finite in epoch " + std::to_string(epoch) +
                            " at sample " + std::to_string(begin) + " (lr " +
                            std::to_string(config.lr) + ")");
      }
      const double inv = 1.0 / static_cast<double>(bs);
      for (double& v : delta.data()) v *= inv;

      // Backward with in-place SGD updates, top-down.
      Matrix grad_h = matmul(delta, head.weight);
      const Matrix head_grad = matmul_tn(delta, inputs.back());
      for (std::size_t i = 0; i < head.weight.size(); ++i) {
        head.weight.data()[i] -= config.lr * head_grad.data()[i];
      }
      for (std::size_t c = 0; c < head.labels(); ++c) {
        double g = 0.0;
        for (std::size_t s = 0; s < bs; ++s) g += delta(s, c);
        head.bias[c] -= config.lr * g;
      }
      for (std::size_t k = depth; k-- > 0;) {
        Layer& layer = model.layers[k];
        Matrix dz = grad_h;
        if (layer.spec.activation == Activation::kRelu) {
          for (std::size_t i = 0; i < dz.size(); ++i)
            if (pre[k].data()[i] <= 0.0) dz.data()[i] = 0.0;
        }
        if (k > 0) {
          grad_h = matmul(dz, layer.weight);
          if (layer.spec.kind == LayerKind::kResidualDense) grad_h = add(grad_h, dz);
        }
        const Matrix wg = matmul_tn(dz, inputs[k]);
        for (std::size_t i = 0; i < layer.weight.size(); ++i) {
          layer.weight.data()[i] -= config.lr * wg.data()[i];
        }
        for (std::size_t o = 0; o < layer.spec.out_dim; ++o) {
          double g = 0.0;
          for (std::size_t s = 0; s < bs; ++s) g += dz(s, o);
          layer.bias[o] -= config.lr * g;
        }
        if (!all_finite(layer.weight) || !all_finite(Matrix::column(layer.bias))) {
          throw TrainingError("train_mlp: layer " + std::to_string(k) +
                              " diverged in epoch " + std::to_string(epoch) + " (lr " +
                              std::to_string(config.lr) + ")");
        }
      }
    }
    if (epoch_losses) epoch_losses->push_back(loss_sum / static_cast<double>(data.size()));
  }

  for (auto& layer : model.layers) {
    layer.weight = round_to_f32(layer.weight);
    for (double& v : layer.bias) v = static_cast<float>(v);
  }
  head.weight = round_to_f32(head.weight);
  for (double& v : head.bias) v = static_cast<float>(v);
  for (const auto& layer : model.layers) {
    if (!all_finite(layer.weight) || !all_finite(Matrix::column(layer.bias))) {
      throw TrainingError("train_mlp: weights overflow f32 storage (lr " +
                          std::to_string(config.lr) + ")");
    }
  }

  nlohmann::json arch_json = nlohmann::json::array();
  for (const auto& s : arch) {
    arch_json.push_back({{"kind", to_string(s.kind)}, {"in_dim", s.in_dim}, {"out_dim", s.out_dim}});
  }
  model.metadata = {{"name", "mlp"},
                    {"seed", config.seed},
                    {"provenance",
                     {{"trainer", "sgd"},
                      {"epochs", config.epochs},
                      {"lr", config.lr},
                      {"batch_size", config.batch_size},
                      {"task", head_range.task},
                      {"train_samples", data.size()},
                      {"data", data.metadata}}}};
  model.validate();
  return model;
}

}  // namespace hetmerge

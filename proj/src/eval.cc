// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "hetmerge/error.h"
#include "hetmerge/parallel.h"

namespace hetmerge {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double blend(double x, double y, double wa, double wb) { return x == y ? x : wa * x + wb * y; }

Matrix blend(const Matrix& a, const Matrix& b, double wa, double wb) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("interpolate: weight shapes differ " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data()[i] = blend(a.data()[i], b.data()[i], wa, wb);
  }
  return out;
}

std::vector<double> blend(const std::vector<double>& a, const std::vector<double>& b, double wa,
                          double wb) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = blend(a[i], b[i], wa, wb);
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%6.2f", 100.0 * v);
  return buf;
}

}  // namespace

void Dataset::validate() const {
  if (y.size() != x.rows()) {
    throw ValidationError("dataset: " + std::to_string(y.size()) + " labels for " +
                          std::to_string(x.rows()) + " samples");
  }
  require_finite(x, "dataset");
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  Container c;
  c.tensors.push_back(NamedTensor::from_matrix("x", d.x));
  std::vector<double> labels(d.y.begin(), d.y.end());
  c.tensors.push_back(NamedTensor::from_vector("y", labels));
  c.header["metadata"] = d.metadata;
  write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const Container c = read_container(path);
  Dataset d;
  const NamedTensor& x = c.tensor("x");
  if (x.shape.size() != 2) throw ValidationError("dataset tensor 'x' must be 2-D");
  d.x = x.to_matrix();
  for (double v : c.tensor("y").values) d.y.push_back(static_cast<int>(v));
  if (c.header.contains("metadata")) d.metadata = c.header["metadata"];
  d.validate();
  return d;
}

std::vector<TaskRange> tasks_of(const ModelBundle& model) {
  std::vector<TaskRange> out;
  for (const Head* h : model.heads_by_label()) out.push_back({h->task, h->label_begin, h->label_end()});
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [task, acc] : per_task_acc) {
    per[std::to_string(task)] = {{"acc", acc}, {"samples", per_task_samples.at(task)}};
  }
  return {{"joint_acc", joint_acc}, {"avg_acc", avg_acc}, {"samples", samples}, {"per_task", per}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "  Joint    Avg";
  for (const auto& [task, acc] : per_task_acc) os << "  Task " << task;
  os << "\n" << percent(joint_acc) << " " << percent(avg_acc);
  for (const auto& [task, acc] : per_task_acc) os << "  " << percent(acc);
  os << "\n";
  return os.str();
}

EvalReport evaluate(const ModelBundle& model, const Dataset& data,
                    const std::vector<TaskRange>& tasks_in) {
  data.validate();
  const std::vector<TaskRange> tasks = tasks_in.empty() ? tasks_of(model) : tasks_in;
  for (const auto& t : tasks) {
    if (!model.find_head(t.task)) {
      throw ValidationError("evaluate: model has no head for task " + std::to_string(t.task));
    }
  }

  EvalReport report;
  report.samples = data.size();
  const Matrix joint = forward(model, data.x);
  const auto labels = model.joint_labels();
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    if (data.y[s] >= 0 && labels[argmax(joint.row(s))] == static_cast<std::size_t>(data.y[s])) {
      ++correct;
    }
  }
  report.joint_acc = data.size() ? static_cast<double>(correct) / data.size() : 0.0;

  double acc_sum = 0.0;
  for (const auto& t : tasks) {
    const Head& head = model.head(t.task);
    std::vector<std::size_t> rows;
    for (std::size_t s = 0; s < data.size(); ++s)
      if (t.contains(data.y[s])) rows.push_back(s);
    Matrix x(rows.size(), data.x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(data.x.row(rows[i]).begin(), data.x.row(rows[i]).end(), x.row(i).begin());
    }
    std::size_t hits = 0;
    if (!rows.empty()) {
      const Matrix logits = forward(model, x, t.task);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (head.label_begin + argmax(logits.row(i)) == static_cast<std::size_t>(data.y[rows[i]])) {
          ++hits;
        }
      }
    }
    const double acc = rows.empty() ? 0.0 : static_cast<double>(hits) / rows.size();
    report.per_task_acc[t.task] = acc;
    report.per_task_samples[t.task] = rows.size();
    acc_sum += acc;
  }
  report.avg_acc = tasks.empty() ? 0.0 : acc_sum / static_cast<double>(tasks.size());
  return report;
}

ModelBundle interpolate_weighted(const ModelBundle& a, const ModelBundle& b, double wa, double wb) {
  if (a.specs() != b.specs() || a.heads.size() != b.heads.size()) {
    throw ValidationError("interpolate: architectures differ");
  }
  ModelBundle out = a;
  for (std::size_t k = 0; k < a.depth(); ++k) {
    out.layers[k].weight = blend(a.layers[k].weight, b.layers[k].weight, wa, wb);
    out.layers[k].bias = blend(a.layers[k].bias, b.layers[k].bias, wa, wb);
  }
  for (auto& h : out.heads) {
    const Head* hb = b.find_head(h.task);
    if (!hb || hb->label_begin != h.label_begin) {
      throw ValidationError("interpolate: heads differ");
    }
    h.weight = blend(h.weight, hb->weight, wa, wb);
    h.bias = blend(h.bias, hb->bias, wa, wb);
  }
  return out;
}

ModelBundle interpolate(const ModelBundle& a, const ModelBundle& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("interpolate: lambda must lie in [0, 1]");
  }
  return interpolate_weighted(a, b, lambda, 1.0 - lambda);
}

double cross_entropy_loss(const ModelBundle& model, const Dataset& data) {
  data.validate();
  if (data.size() == 0) throw ValidationError("cross_entropy_loss: empty dataset");
  const Matrix logits = forward(model, data.x);
  const auto labels = model.joint_labels();
  double total = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    auto it = std::find(labels.begin(), labels.end(), static_cast<std::size_t>(data.y[s]));
    if (data.y[s] < 0 || it == labels.end()) {
      throw ValidationError("cross_entropy_loss: label " + std::to_string(data.y[s]) +
                            " is not covered by the model's heads");
    }
    auto row = logits.row(s);
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    total += std::log(z) + peak - row[static_cast<std::size_t>(it - labels.begin())];
  }
  return total / static_cast<double>(data.size());
}

nlohmann::json BarrierReport::to_json() const {
  return {{"lambdas", lambdas}, {"losses", losses}, {"loss_a", loss_a},
          {"loss_b", loss_b},   {"barrier", barrier}};
}

std::string BarrierReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  os << "lambda      loss\n";
  for (std::size_t k = 0; k < kBarrierPoints; ++k) {
    std::snprintf(buf, sizeof(buf), "%6.2f  %10.6f\n", lambdas[k], losses[k]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "barrier %.6f (L_A %.6f, L_B %.6f)\n", barrier, loss_a, loss_b);
  os << buf;
  return os.str();
}

std::string BarrierReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "lambda,loss\n";
  for (std::size_t k = 0; k < kBarrierPoints; ++k) os << lambdas[k] << "," << losses[k] << "\n";
  return os.str();
}

BarrierReport loss_barrier(const ModelBundle& a, const ModelBundle& b, const Dataset& data) {
  if (a.specs() != b.specs()) throw ValidationError("loss_barrier: architectures differ");
  constexpr double steps = static_cast<double>(kBarrierPoints - 1);
  BarrierReport report;
  parallel_for(kBarrierPoints, [&](std::size_t k) {
    const double wa = static_cast<double>(k) / steps;
    const double wb = static_cast<double>(kBarrierPoints - 1 - k) / steps;
    report.lambdas[k] = wa;
    report.losses[k] = cross_entropy_loss(interpolate_weighted(a, b, wa, wb), data);
  });
  report.loss_a = report.losses.back();
  report.loss_b = report.losses.front();
  report.barrier = *std::max_element(report.losses.begin(), report.losses.end()) -
                   0.5 * (report.loss_a + report.loss_b);
  return report;
}

}  // namespace hetmerge

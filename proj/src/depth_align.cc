// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/depth_align.h"

#include <algorithm>

#include "hetmerge/error.h"

namespace hetmerge {

namespace {

// 1-based view over the m x n similarity matrix. Column 0 reads as 0: the
// layer-wise recurrence touches C[j][i-1] with i = 1.
class Similarity {
 public:
  explicit Similarity(const Matrix& c) : c_(c) {}
  double operator()(std::size_t deep, std::size_t shallow) const {
    return shallow == 0 ? 0.0 : c_(deep - 1, shallow - 1);
  }
  std::size_t deep() const { return c_.rows(); }
  std::size_t shallow() const { return c_.cols(); }

 private:
  const Matrix& c_;
};

void check_input(const Matrix& c) {
  if (c.cols() == 0) throw ValidationError("depth alignment: shallow model has no layers");
  if (c.rows() < c.cols()) {
    throw InfeasibleError("depth alignment: deep model has " + std::to_string(c.rows()) +
                          " layers, fewer than the " + std::to_string(c.cols()) +
                          " layers of the shallow model");
  }
  require_finite(c, "depth alignment similarity matrix");
}

// (n+1) x (m+1) table, row 0 and column 0 unused padding.
Matrix fill_padded(const Similarity& c, AlignObjective objective) {
  const std::size_t n = c.shallow();
  const std::size_t m = c.deep();
  Matrix t(n + 1, m + 1);
  for (std::size_t i = 1; i <= n; ++i) t(i, i) = t(i - 1, i - 1) + c(i, i);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = i + 1; j <= m; ++j) {
      const double skip = objective == AlignObjective::kSegmentWise
                              ? t(i, j - 1)
                              : t(i, j - 1) + c(j, i - 1);
      t(i, j) = std::max(skip, t(i - 1, j - 1) + c(j, i));
    }
  }
  return t;
}

SegmentPlan align(const Matrix& c_raw, AlignObjective objective, AlignMethod method) {
  check_input(c_raw);
  const Similarity c(c_raw);
  const std::size_t n = c.shallow();
  const std::size_t m = c.deep();
  const Matrix t = fill_padded(c, objective);

  auto skip_value = [&](std::size_t i, std::size_t j) {
    return objective == AlignObjective::kSegmentWise ? t(i, j - 1) : t(i, j - 1) + c(j, i - 1);
  };

  // g[0] is padding so that g[i] matches the 1-based pseudocode.
  std::vector<std::size_t> g(n + 1, 0);
  g[1] = 1;
  g[n] = m;
  std::size_t i = n - 1;
  std::size_t j = m - 1;
  while (i >= 2) {
    while (j >= i + 1 && t(i, j) == skip_value(i, j)) --j;
    g[i] = j;
    --i;
    --j;
  }

  SegmentPlan plan;
  plan.g.assign(g.begin() + 1, g.end());
  plan.score = t(n, m);
  plan.method = method;
  return plan;
}

}  // namespace

std::string to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::kSma: return "sma";
    case AlignMethod::kLma: return "lma";
    case AlignMethod::kOracle: return "oracle";
  }
  return "?";
}

AlignMethod parse_align_method(const std::string& s) {
  if (s == "sma") return AlignMethod::kSma;
  if (s == "lma") return AlignMethod::kLma;
  if (s == "oracle") return AlignMethod::kOracle;
  throw ValidationError("unknown depth alignment method '" + s + "'");
}

void SegmentPlan::validate(std::size_t deep_depth) const {
  if (g.empty()) throw ValidationError("segment plan is empty");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < i + 1) {
      throw ValidationError("segment plan: g[" + std::to_string(i + 1) + "] = " +
                            std::to_string(g[i]) + " is below its index");
    }
    if (i > 0 && g[i] <= g[i - 1]) {
      throw ValidationError("segment plan is not strictly increasing");
    }
  }
  if (g.back() != deep_depth) {
    throw ValidationError("segment plan ends at layer " + std::to_string(g.back()) +
                          ", expected " + std::to_string(deep_depth));
  }
}

SegmentPlan SegmentPlan::identity(std::size_t depth) {
  SegmentPlan p;
  for (std::size_t i = 1; i <= depth; ++i) p.g.push_back(i);
  p.method = AlignMethod::kSma;
  return p;
}

nlohmann::json SegmentPlan::to_json() const {
  return {{"method", to_string(method)}, {"g", g}, {"score", score}};
}

SegmentPlan SegmentPlan::from_json(const nlohmann::json& j) {
  SegmentPlan p;
  try {
    p.method = parse_align_method(j.at("method").get<std::string>());
    p.g = j.at("g").get<std::vector<std::size_t>>();
    p.score = j.at("score").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed segment plan JSON: ") + e.what());
  }
  return p;
}

SegmentPlan sma_align(const Matrix& c) {
  return align(c, AlignObjective::kSegmentWise, AlignMethod::kSma);
}

SegmentPlan lma_align(const Matrix& c) {
  return align(c, AlignObjective::kLayerWise, AlignMethod::kLma);
}

Matrix fill_dp_table(const Matrix& c, AlignObjective objective) {
  check_input(c);
  const Matrix padded = fill_padded(Similarity(c), objective);
  return slice_cols(slice_rows(padded, 1, padded.rows()), 1, padded.cols());
}

double path_score(const Matrix& c_raw, const std::vector<std::size_t>& path,
                  AlignObjective objective) {
  const Similarity c(c_raw);
  const std::size_t n = path.size();
  const std::size_t m = c.deep();
  double v = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    v = v + c(path[k - 1], k);
    if (objective == AlignObjective::kLayerWise) {
      const std::size_t row_end = k < n ? path[k] - 1 : m;
      for (std::size_t j = path[k - 1] + 1; j <= row_end; ++j) v = v + c(j, k - 1);
    }
  }
  return v;
}

SegmentPlan brute_force_align(const Matrix& c, AlignObjective objective) {
  check_input(c);
  const std::size_t n = c.cols();
  const std::size_t m = c.rows();
  if (m > kBruteForceMaxDepth) {
    throw ValidationError("brute_force_align: deep model has " + std::to_string(m) +
                          " layers; enumeration is limited to " +
                          std::to_string(kBruteForceMaxDepth));
  }

  std::vector<std::size_t> path(n);
  for (std::size_t k = 0; k < n; ++k) path[k] = k + 1;
  std::vector<std::size_t> best_path = path;
  double best = path_score(c, path, objective);

  // Lexicographic successor among strictly increasing sequences in [1, m].
  auto advance = [&]() {
    std::size_t k = n;
    while (k > 0 && path[k - 1] == m - n + k) --k;
    if (k == 0) return false;
    ++path[k - 1];
    for (std::size_t q = k; q < n; ++q) path[q] = path[q - 1] + 1;
    return true;
  };
  while (advance()) {
    const double s = path_score(c, path, objective);
    if (s > best) {
      best = s;
      best_path = path;
    }
  }

  SegmentPlan plan;
  plan.g = best_path;
  plan.g.back() = m;
  plan.score = best;
  plan.method = AlignMethod::kOracle;
  return plan;
}

}  // namespace hetmerge

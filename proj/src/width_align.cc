// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/width_align.h"

#include <algorithm>
#include <iostream>

#include "hetmerge/error.h"
#include "hetmerge/fingerprint.h"
#include "hetmerge/hungarian.h"
#include "hetmerge/parallel.h"
#include "hetmerge/similarity.h"

namespace hetmerge {

namespace {

std::uint64_t parse_hex(const nlohmann::json& j) {
  return std::stoull(j.get<std::string>(), nullptr, 16);
}

std::uint64_t feature_fingerprint(const Matrix& f) {
  Fingerprint fp;
  fp.mix(static_cast<std::uint64_t>(f.rows()));
  fp.mix(f.data());
  return fp.value();
}

// Groups ordered by smallest member, with their centered mean features.
class ZipState {
 public:
  ZipState(const Matrix& centered, bool recompute) : recompute_(recompute) {
    const std::size_t n = centered.rows();
    for (std::size_t i = 0; i < n; ++i) {
      groups_.push_back({i});
      sums_.push_back(std::vector<double>(centered.row(i).begin(), centered.row(i).end()));
    }
    sim_.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        sim_[i][j] = sim_[j][i] = centered_correlation(centered.row(i), centered.row(j));
  }

  std::size_t size() const { return groups_.size(); }

  bool all_zero() const {
    for (std::size_t i = 0; i < sim_.size(); ++i)
      for (std::size_t j = i + 1; j < sim_.size(); ++j)
        if (sim_[i][j] != 0.0) return false;
    return true;
  }

  std::pair<std::size_t, std::size_t> best_pair() const {
    std::pair<std::size_t, std::size_t> best{0, 1};
    double best_value = sim_[0][1];
    for (std::size_t p = 0; p < size(); ++p) {
      for (std::size_t q = p + 1; q < size(); ++q) {
        if (sim_[p][q] > best_value) {
          best_value = sim_[p][q];
          best = {p, q};
        }
      }
    }
    return best;
  }

  void merge(std::size_t p, std::size_t q) {
    const double wp = static_cast<double>(groups_[p].size());
    const double wq = static_cast<double>(groups_[q].size());
    if (!recompute_) {
      for (std::size_t k = 0; k < size(); ++k) {
        if (k == p || k == q) continue;
        sim_[p][k] = sim_[k][p] = (wp * sim_[p][k] + wq * sim_[q][k]) / (wp + wq);
      }
    }
    groups_[p].insert(groups_[p].end(), groups_[q].begin(), groups_[q].end());
    std::sort(groups_[p].begin(), groups_[p].end());
    for (std::size_t s = 0; s < sums_[p].size(); ++s) sums_[p][s] += sums_[q][s];

    groups_.erase(groups_.begin() + static_cast<std::ptrdiff_t>(q));
    sums_.erase(sums_.begin() + static_cast<std::ptrdiff_t>(q));
    sim_.erase(sim_.begin() + static_cast<std::ptrdiff_t>(q));
    for (auto& row : sim_) row.erase(row.begin() + static_cast<std::ptrdiff_t>(q));

    if (recompute_) {
      const std::vector<double> fp = mean_feature(p);
      for (std::size_t k = 0; k < size(); ++k) {
        if (k == p) continue;
        sim_[p][k] = sim_[k][p] = centered_correlation(fp, mean_feature(k));
      }
    }
  }

  std::vector<std::vector<std::size_t>> take_groups() { return std::move(groups_); }

 private:
  std::vector<double> mean_feature(std::size_t g) const {
    std::vector<double> out = sums_[g];
    const double inv = 1.0 / static_cast<double>(groups_[g].size());
    for (double& v : out) v *= inv;
    return out;
  }

  bool recompute_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::vector<double>> sums_;
  std::vector<std::vector<double>> sim_;
};

}  // namespace

std::string to_string(WidthStrategy s) { return s == WidthStrategy::kPermute ? "permute" : "zip"; }

WidthStrategy parse_width_strategy(const std::string& s) {
  if (s == "permute") return WidthStrategy::kPermute;
  if (s == "zip") return WidthStrategy::kZip;
  throw ValidationError("unknown width strategy '" + s + "'");
}

MergeMap MergeMap::from_groups(std::vector<std::vector<std::size_t>> groups, std::size_t n_a,
                               std::size_t n_b, const WidthOptions& options) {
  const std::size_t total = n_a + n_b;
  std::vector<int> seen(total, 0);
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("merge map: empty group");
    for (std::size_t c : g) {
      if (c >= total) throw ValidationError("merge map: neuron index out of range");
      ++seen[c];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) {
    throw ValidationError("merge map: every neuron must belong to exactly one group");
  }

  MergeMap m;
  m.n_a = n_a;
  m.n_b = n_b;
  m.scale_a = options.scale_a;
  m.scale_b = options.scale_b;
  m.groups = std::move(groups);
  m.merge = Matrix(m.r(), total);
  m.unmerge = Matrix(total, m.r());
  for (std::size_t g = 0; g < m.r(); ++g) {
    std::vector<std::size_t> members = m.groups[g];
    std::sort(members.begin(), members.end());
    double denom = 0.0;
    for (std::size_t c : members) denom += c < n_a ? m.scale_a : m.scale_b;
    // The last member takes the complement so that the row sums to exactly
    // 1 when accumulated in column order, keeping merge * unmerge = I exact.
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < members.size(); ++k) {
      const std::size_t c = members[k];
      const double w = denom != 0.0 ? (c < n_a ? m.scale_a : m.scale_b) / denom
                                     : 1.0 / static_cast<double>(members.size());
      m.merge(g, c) = w;
      sum += w;
    }
    m.merge(g, members.back()) = 1.0 - sum;
    for (std::size_t c : members) m.unmerge(c, g) = 1.0;
  }
  if (options.pinv_unmerge) m.unmerge = pseudo_inverse(m.merge);
  return m;
}

nlohmann::json MergeMap::to_json() const {
  return {{"n_a", n_a}, {"n_b", n_b}, {"r", r()}, {"scale_a", scale_a},
          {"scale_b", scale_b}, {"groups", groups}};
}

MergeMap MergeMap::from_json(const nlohmann::json& j, const WidthOptions& options) {
  try {
    WidthOptions opts = options;
    opts.scale_a = j.at("scale_a").get<double>();
    opts.scale_b = j.at("scale_b").get<double>();
    return from_groups(j.at("groups").get<std::vector<std::vector<std::size_t>>>(),
                       j.at("n_a").get<std::size_t>(), j.at("n_b").get<std::size_t>(), opts);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed merge map JSON: ") + e.what());
  }
}

double matching_objective(const Matrix& feat_a, const Matrix& feat_b,
                          const std::vector<std::size_t>& pairing) {
  const Matrix corr = cross_correlation(feat_a, feat_b);
  double s = 0.0;
  for (std::size_t i = 0; i < pairing.size(); ++i) s += corr(i, pairing[i]);
  return s;
}

MergeMap permutation_match(const Matrix& feat_a, const Matrix& feat_b,
                           const WidthOptions& options) {
  if (feat_a.rows() != feat_b.rows()) {
    throw ValidationError("permutation_match: widths differ (" + std::to_string(feat_a.rows()) +
                          " vs " + std::to_string(feat_b.rows()) +
                          "); use the zip strategy for width-heterogeneous layers");
  }
  if (feat_a.rows() == 0) throw ValidationError("permutation_match: zero-width layer");
  const std::size_t n = feat_a.rows();
  const auto pairing = max_weight_assignment(cross_correlation(feat_a, feat_b));
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups.push_back({i, n + pairing[i]});
  return MergeMap::from_groups(std::move(groups), n, n, options);
}

MergeMap elastic_zip(const Matrix& feat_a, const Matrix& feat_b, std::size_t r,
                     const WidthOptions& options, ZipTrace* trace) {
  if (feat_a.cols() != feat_b.cols()) {
    throw ShapeError("elastic_zip: sample counts differ");
  }
  const std::size_t total = feat_a.rows() + feat_b.rows();
  if (r < 1 || r > total) {
    throw ValidationError("elastic_zip: r = " + std::to_string(r) + " outside [1, " +
                          std::to_string(total) + "]");
  }
  ZipState state(center_rows(vstack(feat_a, feat_b)), options.recompute_zip);
  if (state.size() > r && state.all_zero()) {
    std::cerr << "warning: elastic_zip: all neuron correlations are zero; "
                 "merging in index order\n";
  }
  while (state.size() > r) {
    const auto [p, q] = state.best_pair();
    if (trace) trace->push_back({p, q});
    state.merge(p, q);
  }
  return MergeMap::from_groups(state.take_groups(), feat_a.rows(), feat_b.rows(), options);
}

nlohmann::json AlignmentPlan::to_json() const {
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& b : boundaries) {
    bs.push_back({{"deep_layer", b.deep_layer},
                  {"shallow_layer", b.shallow_layer},
                  {"shallow_feature", fingerprint_hex(b.shallow_feature_fingerprint)},
                  {"map", b.map.to_json()}});
  }
  return {{"strategy", to_string(strategy)},
          {"model_a", fingerprint_hex(model_a)},
          {"model_b", fingerprint_hex(model_b)},
          {"batch", fingerprint_hex(batch)},
          {"boundaries", std::move(bs)}};
}

AlignmentPlan AlignmentPlan::from_json(const nlohmann::json& j) {
  AlignmentPlan p;
  try {
    p.strategy = parse_width_strategy(j.at("strategy").get<std::string>());
    p.model_a = parse_hex(j.at("model_a"));
    p.model_b = parse_hex(j.at("model_b"));
    p.batch = parse_hex(j.at("batch"));
    for (const auto& b : j.at("boundaries")) {
      p.boundaries.push_back({b.at("deep_layer").get<std::size_t>(),
                              b.at("shallow_layer").get<std::size_t>(),
                              parse_hex(b.at("shallow_feature")), MergeMap::from_json(b.at("map"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed alignment plan JSON: ") + e.what());
  }
  return p;
}

AlignmentPlan build_alignment_plan(const SegmentPlan& plan, const FeatureCache& cache_a,
                                   const FeatureCache& cache_b_ext, WidthStrategy strategy,
                                   const std::vector<std::size_t>& r_per_boundary,
                                   const WidthOptions& options) {
  const std::size_t depth = cache_a.depth();
  if (cache_b_ext.depth() != depth) {
    throw ValidationError("build_alignment_plan: deep model has " + std::to_string(depth) +
                          " layers but the extended shallow model has " +
                          std::to_string(cache_b_ext.depth()));
  }
  if (cache_a.batch_fingerprint != cache_b_ext.batch_fingerprint) {
    throw ValidationError("build_alignment_plan: caches were captured on different batches");
  }
  plan.validate(depth);
  if (!r_per_boundary.empty() && r_per_boundary.size() != 1 && r_per_boundary.size() != depth) {
    throw ValidationError("build_alignment_plan: expected 1 or " + std::to_string(depth) +
                          " r values, got " + std::to_string(r_per_boundary.size()));
  }

  AlignmentPlan out;
  out.strategy = strategy;
  out.model_a = cache_a.model_fingerprint;
  out.model_b = cache_b_ext.model_fingerprint;
  out.batch = cache_a.batch_fingerprint;
  out.boundaries.resize(depth);

  std::size_t segment = 0;
  for (std::size_t k = 0; k < depth; ++k) {
    while (k + 1 > plan.g[segment]) ++segment;
    out.boundaries[k].deep_layer = k;
    out.boundaries[k].shallow_layer = segment;
    out.boundaries[k].shallow_feature_fingerprint = feature_fingerprint(cache_b_ext.layers[k]);
  }

  parallel_for(depth, [&](std::size_t k) {
    const Matrix& fa = cache_a.layers[k];
    const Matrix& fb = cache_b_ext.layers[k];
    if (strategy == WidthStrategy::kPermute) {
      out.boundaries[k].map = permutation_match(fa, fb, options);
      return;
    }
    std::size_t r = std::max(fa.rows(), fb.rows());
    if (r_per_boundary.size() == 1) r = r_per_boundary[0];
    if (r_per_boundary.size() == depth) r = r_per_boundary[k];
    out.boundaries[k].map = elastic_zip(fa, fb, r, options);
  });
  return out;
}

}  // namespace hetmerge

// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hetmerge/cli.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "hetmerge/depth_align.h"
#include "hetmerge/error.h"
#include "hetmerge/eval.h"
#include "hetmerge/features.h"
#include "hetmerge/fingerprint.h"
#include "hetmerge/merger.h"
#include "hetmerge/model.h"
#include "hetmerge/similarity.h"
#include "hetmerge/toy_tasks.h"
#include "hetmerge/width_align.h"

namespace hetmerge::cli {

namespace {

using nlohmann::json;

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

// Plain-text table with left-aligned, space-padded columns.
class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      width.resize(std::max(width.size(), r.size()), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream os;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      for (std::size_t i = 0; i < rows_[k].size(); ++i) {
        os << rows_[k][i];
        if (i + 1 < rows_[k].size()) os << std::string(width[i] - rows_[k][i].size() + 2, ' ');
      }
      os << '\n';
      if (k == 0) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
        os << std::string(total, '-') << '\n';
      }
    }
    return os.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Appends "--key value" for every config-file entry not already given as a
// flag, so explicit flags win.
std::vector<std::string> merge_config_file(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  const json cfg = read_json_file(*path);
  if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");

  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  auto scalar = [](const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
      std::ostringstream os;
      os.precision(17);
      os << v.get<double>();
      return os.str();
    }
    return v.dump();
  };
  std::vector<std::string> extra;
  for (const auto& [key, value] : cfg.items()) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_array()) {
      extra.push_back(flag);
      for (const auto& v : value) extra.push_back(scalar(v));
    } else if (!value.is_null()) {
      extra.push_back(flag);
      extra.push_back(scalar(value));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// Every named option of a subcommand with its resolved value.
// Numeric option values are echoed as JSON numbers, everything else verbatim.
json typed(const std::string& v) {
  json parsed = json::parse(v, nullptr, false);
  return !parsed.is_discarded() && parsed.is_number() ? parsed : json(v);
}

json resolved_config(const CLI::App& sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() && opt->get_name().empty()) continue;
    std::string key = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (key == "help" || key == "config" || key == "json") continue;
    if (opt->get_expected_min() == 0) {
      cfg[key] = opt->count() > 0;
      continue;
    }
    std::vector<std::string> values = opt->results();
    if (values.empty() && !opt->get_default_str().empty()) values = {opt->get_default_str()};
    if (values.empty()) {
      cfg[key] = nullptr;
    } else if (values.size() == 1 && opt->get_expected_max() <= 1) {
      cfg[key] = typed(values.front());
    } else {
      json list = json::array();
      for (const auto& v : values) list.push_back(typed(v));
      cfg[key] = list;
    }
  }
  return cfg;
}

TaskRange task_range_for(const Dataset& data, const std::string& task) {
  if (!data.metadata.contains("classes_per_task")) {
    throw ValidationError("dataset metadata lacks classes_per_task; cannot resolve task '" + task +
                          "'");
  }
  const std::size_t k = data.metadata.at("classes_per_task").get<std::size_t>();
  if (task == "a") return {0, 0, k};
  if (task == "b") return {1, k, 2 * k};
  if (task == "joint") return {0, 0, 2 * k};
  throw ValidationError("unknown task '" + task + "' (expected a, b or joint)");
}

CalibrationBatch load_calibration(const std::string& path, std::size_t samples,
                                  std::uint64_t seed) {
  const Dataset d = load_dataset(path);
  return sample_calibration_batch(d.x, d.y, samples, seed);
}

std::string plan_string(const SegmentPlan& p) {
  std::string s = "[";
  for (std::size_t i = 0; i < p.g.size(); ++i) s += (i ? ", " : "") + std::to_string(p.g[i]);
  return s + "]";
}

std::string matrix_table(const Matrix& m, const std::string& row_label,
                         const std::string& col_label) {
  std::vector<std::string> header{row_label + "\\" + col_label};
  for (std::size_t j = 0; j < m.cols(); ++j) header.push_back(std::to_string(j + 1));
  Table t(header);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(fmt(m(i, j)));
    t.add(row);
  }
  return t.str();
}

struct Options {
  bool json_out = false;
  std::string config;

  // shared
  std::uint64_t seed = 0;
  std::string out, out_dir, data, model, calib, a, b, recipe, csv, path;
  std::size_t calib_samples = kDefaultCalibrationSamples;

  // gen-data
  TaskSpec spec;

  // train
  std::string task = "a";
  std::vector<std::size_t> widths;
  bool residual = false;
  TrainConfig train;

  // align
  std::string method = "lma";
  std::string objective = "layer";
  std::string strategy;
  std::vector<std::size_t> r;
  std::vector<double> scales{0.5, 0.5};
  int layer_a = -1, layer_b = -1;
  bool fixed_zip = false;
  bool pinv_unmerge = false;

  // eval / barrier
  std::vector<int> tasks;
  bool align = false;
};

AlignObjective parse_objective(const std::string& s) {
  if (s == "layer") return AlignObjective::kLayerWise;
  if (s == "segment") return AlignObjective::kSegmentWise;
  throw ValidationError("unknown objective '" + s + "' (expected layer or segment)");
}

WidthOptions width_options(const Options& o) {
  if (o.scales.size() != 2) throw ValidationError("--scales takes exactly two values");
  WidthOptions w;
  w.scale_a = o.scales[0];
  w.scale_b = o.scales[1];
  w.recompute_zip = !o.fixed_zip;
  w.pinv_unmerge = o.pinv_unmerge;
  return w;
}

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& raw) {
    CLI::App app{"Training-free merging of heterogeneous dense networks", "hetmerge"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    std::map<std::string, std::function<void(const json&)>> handlers;
    define(app, handlers);

    std::vector<std::string> args;
    try {
      args = merge_config_file(raw);
    } catch (const ValidationError& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitValidation;
    }
    std::reverse(args.begin(), args.end());
    try {
      app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out_, err_);
      return code == 0 ? kExitOk : kExitValidation;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
      handlers.at(sub->get_name())(resolved_config(*sub));
      return kExitOk;
    } catch (const ValidationError& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitValidation;
    } catch (const json::exception& e) {
      err_ << "error: malformed JSON input: " << e.what() << '\n';
      return kExitValidation;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitInternal;
    }
  }

 private:
  void common(CLI::App* sub) {
    sub->add_flag("--json", o_.json_out, "Machine-readable JSON on stdout");
    sub->add_option("--config", o_.config,
                    "JSON file of flag values (keys are flag names); explicit flags win");
  }
  void seed_option(CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("--seed", o_.seed, "Seed for every random choice");
    if (required) opt->required();
  }

  void define(CLI::App& app, std::map<std::string, std::function<void(const json&)>>& h) {
    {
      auto* s = app.add_subcommand("gen-data", "Generate the two-task Gaussian-mixture datasets");
      common(s);
      seed_option(s);
      s->add_option("--out-dir", o_.out_dir, "Directory for the dataset containers")->required();
      s->add_option("--classes", o_.spec.classes_per_task, "Classes per task")->capture_default_str();
      s->add_option("--input-dim", o_.spec.input_dim, "Input dimension")->capture_default_str();
      s->add_option("--separation", o_.spec.separation,
                    "Typical distance between class means in noise units")
          ->capture_default_str();
      s->add_option("--samples-per-class", o_.spec.samples_per_class, "Samples per class")
          ->capture_default_str();
      s->add_option("--train-fraction", o_.spec.train_fraction, "Train share of each class")
          ->capture_default_str();
      s->add_option("--calib-samples", o_.calib_samples,
                    "Rows of the joint training set copied into calib.hmm1")
          ->capture_default_str();
      h["gen-data"] = [this](const json& c) { gen_data(c); };
    }
    {
      auto* s = app.add_subcommand("train", "Train an MLP with minibatch SGD");
      common(s);
      seed_option(s);
      s->add_option("--data", o_.data, "Training dataset container")->required();
      s->add_option("--task", o_.task, "Head to train: a, b or joint")->capture_default_str();
      s->add_option("--widths", o_.widths, "Layer widths, e.g. --widths 64 64 64")->required();
      s->add_flag("--residual", o_.residual, "Make every layer after the first residual");
      s->add_option("--epochs", o_.train.epochs, "Epochs")->capture_default_str();
      s->add_option("--lr", o_.train.lr, "Learning rate")->capture_default_str();
      s->add_option("--batch-size", o_.train.batch_size, "Minibatch size")->capture_default_str();
      s->add_option("--out", o_.out, "Output model container")->required();
      h["train"] = [this](const json& c) { train(c); };
    }
    {
      auto* s = app.add_subcommand("capture", "Record per-layer features on a calibration batch");
      common(s);
      seed_option(s);
      s->add_option("--model", o_.model, "Model container")->required();
      s->add_option("--calib", o_.calib, "Calibration dataset container")->required();
      s->add_option("--calib-samples", o_.calib_samples, "Calibration rows to draw")
          ->capture_default_str();
      s->add_option("--out", o_.out, "Output feature container")->required();
      h["capture"] = [this](const json& c) { capture(c); };
    }
    {
      auto* s = app.add_subcommand("align-depth", "Segment the deeper model against the shallower");
      common(s);
      s->add_option("--a", o_.a, "Feature container of one model")->required();
      s->add_option("--b", o_.b, "Feature container of the other model")->required();
      s->add_option("--method", o_.method, "sma, lma or oracle")->capture_default_str();
      s->add_option("--objective", o_.objective, "Oracle objective: layer or segment")
          ->capture_default_str();
      s->add_option("--out", o_.out, "Write the plan as JSON");
      h["align-depth"] = [this](const json& c) { align_depth(c); };
    }
    {
      auto* s = app.add_subcommand("align-width", "Match neurons of one layer pair");
      common(s);
      s->add_option("--a", o_.a, "Feature container of model A")->required();
      s->add_option("--b", o_.b, "Feature container of model B")->required();
      s->add_option("--layer-a", o_.layer_a, "0-based layer of A (default: last)");
      s->add_option("--layer-b", o_.layer_b, "0-based layer of B (default: last)");
      s->add_option("--strategy", o_.strategy, "permute or zip")->required();
      s->add_option("--r", o_.r, "Merged width for zip (default: the larger width)")
          ->expected(0, 1);
      s->add_option("--scales", o_.scales, "Weights of A and B")->expected(2)->capture_default_str();
      s->add_flag("--fixed-zip", o_.fixed_zip, "Fix zip correlations upfront (average linkage)");
      s->add_flag("--pinv-unmerge", o_.pinv_unmerge, "Use the pseudo-inverse as unmerge");
      s->add_option("--out", o_.out, "Write the merge map as JSON");
      h["align-width"] = [this](const json& c) { align_width(c); };
    }
    {
      auto* s = app.add_subcommand("merge", "Merge two models into one multi-task model");
      common(s);
      seed_option(s);
      s->add_option("--a", o_.a, "Model A container")->required();
      s->add_option("--b", o_.b, "Model B container")->required();
      s->add_option("--calib", o_.calib, "Calibration dataset container");
      s->add_option("--calib-samples", o_.calib_samples, "Calibration rows to draw")
          ->capture_default_str();
      s->add_option("--depth-method", o_.method, "sma, lma or oracle")->capture_default_str();
      s->add_option("--objective", o_.objective, "Oracle objective: layer or segment")
          ->capture_default_str();
      s->add_option("--strategy", o_.strategy, "avg, permute or zip")
          ->default_str("zip");
      s->add_option("--r", o_.r, "Merged width: one value, or one per layer of the deeper model");
      s->add_option("--scales", o_.scales, "Weights of A and B")->expected(2)->capture_default_str();
      s->add_flag("--residual", o_.residual, "Zero-residual depth extension");
      s->add_flag("--fixed-zip", o_.fixed_zip, "Fix zip correlations upfront (average linkage)");
      s->add_flag("--pinv-unmerge", o_.pinv_unmerge, "Use the pseudo-inverse as unmerge");
      s->add_option("--out", o_.out, "Output merged model container")->required();
      s->add_option("--recipe", o_.recipe, "Recipe JSON path (default: <out>.recipe.json)");
      h["merge"] = [this](const json& c) { merge(c); };
    }
    {
      auto* s = app.add_subcommand("eval", "Joint and per-task accuracy of a model");
      common(s);
      s->add_option("--model", o_.model, "Model container")->required();
      s->add_option("--data", o_.data, "Dataset container")->required();
      s->add_option("--tasks", o_.tasks, "Task ids to evaluate (default: all heads)");
      h["eval"] = [this](const json& c) { eval(c); };
    }
    {
      auto* s = app.add_subcommand("barrier", "Loss barrier along the linear path between models");
      common(s);
      seed_option(s, false);
      s->add_option("--a", o_.a, "Model A container")->required();
      s->add_option("--b", o_.b, "Model B container")->required();
      s->add_option("--data", o_.data, "Dataset container")->required();
      s->add_flag("--align", o_.align, "Permute B into A's neuron basis first (needs --calib)");
      s->add_option("--calib", o_.calib, "Calibration dataset container for --align");
      s->add_option("--calib-samples", o_.calib_samples, "Calibration rows to draw")
          ->capture_default_str();
      s->add_option("--csv", o_.csv, "Write the 21-point loss curve as CSV");
      h["barrier"] = [this](const json& c) { barrier(c); };
    }
    {
      auto* s = app.add_subcommand("inspect", "Print the JSON header of a container");
      common(s);
      s->add_option("path", o_.path, "Container file")->required();
      h["inspect"] = [this](const json& c) { inspect(c); };
    }
  }

  void gen_data(const json& config) {
    std::filesystem::create_directories(o_.out_dir);
    const TaskData d = gen_tasks(o_.spec, o_.seed);
    const CalibrationBatch cb =
        sample_calibration_batch(d.train_joint.x, d.train_joint.y, o_.calib_samples, o_.seed);
    Dataset calib{cb.inputs, cb.labels, d.train_joint.metadata};
    calib.metadata["split"] = "calib";

    const std::vector<std::pair<std::string, const Dataset*>> files = {
        {"train_a", &d.train_a},         {"test_a", &d.test_a},
        {"train_b", &d.train_b},         {"test_b", &d.test_b},
        {"train_joint", &d.train_joint}, {"test_joint", &d.test_joint},
        {"calib", &calib}};
    json listing = json::array();
    Table t({"file", "samples"});
    for (const auto& [name, ds] : files) {
      Dataset copy = *ds;
      copy.metadata["config"] = config;
      const auto path = std::filesystem::path(o_.out_dir) / (name + ".hmm1");
      save_dataset(copy, path);
      listing.push_back({{"file", path.string()}, {"samples", ds->size()}});
      t.add({path.string(), std::to_string(ds->size())});
    }
    if (o_.json_out) {
      out_ << json{{"config", config}, {"files", listing}}.dump(2) << '\n';
    } else {
      out_ << t.str();
    }
  }

  void train(const json& config) {
    const Dataset data = load_dataset(o_.data);
    const TaskRange range = task_range_for(data, o_.task);
    const auto arch = mlp_arch(data.x.cols(), o_.widths, o_.residual);
    TrainConfig tc = o_.train;
    tc.seed = o_.seed;
    std::vector<double> losses;
    ModelBundle m = train_mlp(arch, data, range, tc, &losses);
    m.metadata["config"] = config;
    save_model(m, o_.out);
    const EvalReport rep = evaluate(m, data);
    if (o_.json_out) {
      out_ << json{{"config", config}, {"epoch_losses", losses}, {"train", rep.to_json()}}.dump(2)
           << '\n';
      return;
    }
    Table t({"epoch", "loss"});
    for (std::size_t i = 0; i < losses.size(); ++i) t.add({std::to_string(i + 1), fmt(losses[i], 6)});
    out_ << t.str() << "train accuracy " << fmt(rep.joint_acc) << '\n';
  }

  void capture(const json& config) {
    const ModelBundle m = load_model(o_.model);
    const CalibrationBatch batch = load_calibration(o_.calib, o_.calib_samples, o_.seed);
    const FeatureCache cache = capture_features(m, batch);
    save_features(cache, o_.out, {{"config", config}});
    if (o_.json_out) {
      json layers = json::array();
      for (const auto& l : cache.layers) layers.push_back({l.rows(), l.cols()});
      out_ << json{{"config", config},
                   {"model_fingerprint", fingerprint_hex(cache.model_fingerprint)},
                   {"batch_fingerprint", fingerprint_hex(cache.batch_fingerprint)},
                   {"layers", layers}}
                  .dump(2)
           << '\n';
      return;
    }
    Table t({"layer", "neurons", "samples"});
    for (std::size_t i = 0; i < cache.depth(); ++i) {
      t.add({std::to_string(i), std::to_string(cache.layers[i].rows()),
             std::to_string(cache.layers[i].cols())});
    }
    out_ << t.str();
  }

  void align_depth(const json& config) {
    FeatureCache fa = load_features(o_.a);
    FeatureCache fb = load_features(o_.b);
    const bool swapped = fb.depth() > fa.depth();
    if (swapped) std::swap(fa, fb);
    const LayerSimMatrix sim = layer_similarity_matrix(fa, fb);
    const AlignMethod method = parse_align_method(o_.method);
    SegmentPlan plan;
    switch (method) {
      case AlignMethod::kSma: plan = sma_align(sim.values); break;
      case AlignMethod::kLma: plan = lma_align(sim.values); break;
      case AlignMethod::kOracle:
        plan = brute_force_align(sim.values, parse_objective(o_.objective));
        break;
    }
    json sim_rows = json::array();
    for (std::size_t i = 0; i < sim.values.rows(); ++i) {
      sim_rows.push_back(std::vector<double>(sim.values.row(i).begin(), sim.values.row(i).end()));
    }
    const json doc = {{"config", config},
                      {"plan", plan.to_json()},
                      {"swapped", swapped},
                      {"similarity", sim_rows}};
    if (!o_.out.empty()) write_json_file(o_.out, doc);
    if (o_.json_out) {
      out_ << doc.dump(2) << '\n';
      return;
    }
    out_ << "layer CKA (rows: deep model, columns: shallow model)\n"
         << matrix_table(sim.values, "deep", "shallow") << '\n';
    Table t({"method", "segments", "g", "score"});
    t.add({to_string(plan.method), std::to_string(plan.segments()), plan_string(plan),
           fmt(plan.score, 6)});
    out_ << t.str();
  }

  void align_width(const json& config) {
    const FeatureCache fa = load_features(o_.a);
    const FeatureCache fb = load_features(o_.b);
    if (fa.batch_fingerprint != fb.batch_fingerprint) {
      throw ValidationError("feature caches were captured on different calibration batches");
    }
    auto pick = [](const FeatureCache& f, int layer, const char* which) {
      if (layer < 0) return f.depth() - 1;
      if (static_cast<std::size_t>(layer) >= f.depth()) {
        throw ValidationError(std::string("--layer-") + which + " " + std::to_string(layer) +
                              " out of range (depth " + std::to_string(f.depth()) + ")");
      }
      return static_cast<std::size_t>(layer);
    };
    const std::size_t la = pick(fa, o_.layer_a, "a");
    const std::size_t lb = pick(fb, o_.layer_b, "b");
    const WidthOptions w = width_options(o_);
    const WidthStrategy strategy = parse_width_strategy(o_.strategy);
    MergeMap map;
    if (strategy == WidthStrategy::kPermute) {
      map = permutation_match(fa.layers[la], fb.layers[lb], w);
    } else {
      const std::size_t r = o_.r.empty()
                                ? std::max(fa.layers[la].rows(), fb.layers[lb].rows())
                                : o_.r.front();
      map = elastic_zip(fa.layers[la], fb.layers[lb], r, w);
    }
    const json doc = {{"config", config},
                      {"layer_a", la},
                      {"layer_b", lb},
                      {"strategy", to_string(strategy)},
                      {"map", map.to_json()}};
    if (!o_.out.empty()) write_json_file(o_.out, doc);
    if (o_.json_out) {
      out_ << doc.dump(2) << '\n';
      return;
    }
    std::size_t cross = 0;
    for (const auto& g : map.groups) {
      const bool has_a = std::any_of(g.begin(), g.end(), [&](std::size_t i) { return i < map.n_a; });
      const bool has_b = std::any_of(g.begin(), g.end(), [&](std::size_t i) { return i >= map.n_a; });
      cross += has_a && has_b;
    }
    Table t({"strategy", "n_a", "n_b", "r", "cross-model groups"});
    t.add({to_string(strategy), std::to_string(map.n_a), std::to_string(map.n_b),
           std::to_string(map.r()), std::to_string(cross)});
    out_ << t.str();
  }

  void merge(const json& config) {
    const ModelBundle a = load_model(o_.a);
    const ModelBundle b = load_model(o_.b);
    PipelineOptions p;
    p.strategy = parse_merge_strategy(o_.strategy.empty() ? "zip" : o_.strategy);
    p.depth_method = parse_align_method(o_.method);
    p.oracle_objective = parse_objective(o_.objective);
    p.r = o_.r;
    p.width = width_options(o_);
    p.residual = o_.residual;

    CalibrationBatch calib;
    if (p.strategy != MergeStrategy::kVanillaAvg) {
      if (o_.calib.empty()) throw ValidationError("--calib is required unless --strategy avg");
      calib = load_calibration(o_.calib, o_.calib_samples, o_.seed);
    }
    MergeResult res = merge_models(a, b, calib, p);
    res.model.metadata["config"] = config;
    save_model(res.model, o_.out);
    json recipe = res.recipe.to_json();
    recipe["config"] = config;
    const std::string recipe_path = o_.recipe.empty() ? o_.out + ".recipe.json" : o_.recipe;
    write_json_file(recipe_path, recipe);

    if (o_.json_out) {
      out_ << json{{"config", config}, {"recipe", recipe}, {"model", o_.out},
                   {"recipe_file", recipe_path}}
                  .dump(2)
           << '\n';
      return;
    }
    Table t({"strategy", "depth", "g", "score", "merged depth", "widths"});
    std::string widths;
    for (const auto& l : res.model.layers) {
      widths += (widths.empty() ? "" : ",") + std::to_string(l.spec.out_dim);
    }
    t.add({to_string(p.strategy), res.recipe.depth_tag, plan_string(res.recipe.depth_plan),
           fmt(res.recipe.depth_plan.score, 6), std::to_string(res.model.depth()), widths});
    out_ << t.str() << "wrote " << o_.out << " and " << recipe_path << '\n';
  }

  void eval(const json& config) {
    const ModelBundle m = load_model(o_.model);
    const Dataset data = load_dataset(o_.data);
    std::vector<TaskRange> ranges;
    if (!o_.tasks.empty()) {
      const auto all = tasks_of(m);
      for (int t : o_.tasks) {
        auto it = std::find_if(all.begin(), all.end(), [&](const TaskRange& r) { return r.task == t; });
        if (it == all.end()) throw ValidationError("model has no head for task " + std::to_string(t));
        ranges.push_back(*it);
      }
    }
    const EvalReport rep = evaluate(m, data, ranges);
    if (o_.json_out) {
      json j = rep.to_json();
      j["config"] = config;
      out_ << j.dump(2) << '\n';
    } else {
      out_ << rep.to_table();
    }
  }

  void barrier(const json& config) {
    const ModelBundle a = load_model(o_.a);
    ModelBundle b = load_model(o_.b);
    const Dataset data = load_dataset(o_.data);
    if (o_.align) {
      if (o_.calib.empty()) throw ValidationError("--align needs --calib");
      const CalibrationBatch calib = load_calibration(o_.calib, o_.calib_samples, o_.seed);
      if (a.specs() != b.specs()) {
        throw ValidationError("barrier needs identical architectures");
      }
      const FeatureCache fa = capture_features(a, calib);
      const FeatureCache fb = capture_features(b, calib);
      const AlignmentPlan plan = build_alignment_plan(SegmentPlan::identity(a.depth()), fa, fb,
                                                      WidthStrategy::kPermute);
      b = permute_to_reference(b, plan);
    }
    const BarrierReport rep = loss_barrier(a, b, data);
    if (!o_.csv.empty()) {
      std::ofstream f(o_.csv);
      if (!f) throw IoError("cannot open " + o_.csv + " for writing");
      f << rep.to_csv();
    }
    if (o_.json_out) {
      json j = rep.to_json();
      j["config"] = config;
      j["aligned"] = o_.align;
      out_ << j.dump(2) << '\n';
    } else {
      out_ << rep.to_table();
    }
  }

  void inspect(const json&) { out_ << read_container_header(o_.path).dump(2) << '\n'; }

  std::ostream& out_;
  std::ostream& err_;
  Options o_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Runner runner(out, err);
  return runner.run(args);
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace hetmerge::cli

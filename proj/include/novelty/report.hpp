#pragma once

// Experiment artifacts. Every file is a pure function of (config, seed):
//
//   metrics.json          counts, accuracies, detection stats, check results
//   manifest.json         code version, seed, stage, serialized config, file list
//   detection.csv         index,score,ood        (stage detect and later)
//   distances.csv         i,j,distance           (stage distances and later)
//   scatter_initial.csv   x0,x1,true,pred,entropy,ood for the initial model
//   scatter_final.csv     same columns for the fine-tuned model
//   confusion.csv         predicted x true counts of the fine-tuned model
//   model_*.ckpt          initial / extended / final / baseline checkpoints
//
// Scatter files drop the coordinate columns for data that is not 2-D.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "novelty/checkpoint.hpp"
#include "novelty/config.hpp"
#include "novelty/distances.hpp"
#include "novelty/errors.hpp"
#include "novelty/losses.hpp"
#include "novelty/nn.hpp"
#include "novelty/ood.hpp"
#include "novelty/pipeline.hpp"

namespace novelty {

inline constexpr const char* kCodeVersion = "novelty 1.0.0";
inline constexpr const char* kMetricsSchema = "novelty-metrics/1";

struct ScatterRow {
  std::vector<double> coordinates;  // empty unless the data is 2-D
  int true_label = -1;
  std::size_t predicted_label = 0;
  double entropy = 0.0;  // normalized softmax entropy in [0,1]
  bool is_ood = false;
};

// One row per sample. `ood_indices` (ascending) marks the OoD flag.
inline std::vector<ScatterRow> export_scatter(const FeedforwardClassifier& model,
                                              const LabeledDataset& ds,
                                              std::span<const std::size_t> ood_indices) {
  std::vector<ScatterRow> rows(ds.size());
  const Matrix logits = predict_logits(model, ds.samples);
  const bool planar = ds.samples.cols() == 2;
  std::size_t next_ood = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    auto& row = rows[r];
    if (planar) row.coordinates.assign(ds.samples.row(r).begin(), ds.samples.row(r).end());
    row.true_label = ds.has_labels() ? ds.labels[r] : -1;
    row.predicted_label = argmax(logits.row(r));
    row.entropy = entropy_score(softmax(logits.row(r)));
    while (next_ood < ood_indices.size() && ood_indices[next_ood] < r) ++next_ood;
    row.is_ood = next_ood < ood_indices.size() && ood_indices[next_ood] == r;
  }
  return rows;
}

inline void write_scatter_csv(const std::vector<ScatterRow>& rows, std::ostream& os) {
  const std::size_t dims = rows.empty() ? 0 : rows.front().coordinates.size();
  for (std::size_t d = 0; d < dims; ++d) os << 'x' << d << ',';
  os << "true,pred,entropy,ood\n";
  char buf[32];
  for (const auto& row : rows) {
    for (double x : row.coordinates) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      os << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", row.entropy);
    os << row.true_label << ',' << row.predicted_label << ',' << buf << ','
       << (row.is_ood ? 1 : 0) << '\n';
  }
}

// Rows are predicted classes, columns true classes.
inline void write_confusion_csv(const Matrix& confusion, std::ostream& os) {
  os << "predicted";
  for (std::size_t t = 0; t < confusion.cols(); ++t) os << ",true_" << t;
  os << '\n';
  for (std::size_t p = 0; p < confusion.rows(); ++p) {
    os << p;
    for (std::size_t t = 0; t < confusion.cols(); ++t)
      os << ',' << static_cast<long long>(confusion(p, t));
    os << '\n';
  }
}

inline void write_detection_csv(const OodDetection& det, std::ostream& os) {
  os << "index,score,ood\n";
  char buf[32];
  std::size_t next = 0;
  for (std::size_t i = 0; i < det.scores.size(); ++i) {
    while (next < det.ood_indices.size() && det.ood_indices[next] < i) ++next;
    const bool ood = next < det.ood_indices.size() && det.ood_indices[next] == i;
    std::snprintf(buf, sizeof buf, "%.17g", det.scores[i]);
    os << i << ',' << buf << ',' << (ood ? 1 : 0) << '\n';
  }
}

inline nlohmann::ordered_json detection_json(const DetectionStats& s, double tau) {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["flagged"] = s.flagged;
  j["true_positives"] = s.true_positives;
  j["false_positives"] = s.false_positives;
  j["recall"] = s.recall;
  j["false_positive_rate"] = s.false_positive_rate;
  return j;
}

inline nlohmann::ordered_json report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["acc_known"] = r.acc_known;
  j["acc_novel"] = r.acc_novel;
  j["novel_in_empty"] = r.novel_in_empty;
  j["purity"] = r.purity;
  j["known_samples"] = r.known_samples;
  j["novel_samples"] = r.novel_samples;
  j["mapping"] = r.mapping.assignment;
  j["mapping_partial"] = r.mapping.partial;
  j["unused_clusters"] = r.unused_clusters;
  return j;
}

struct CheckResult {
  std::string name;
  double threshold = 0.0;
  std::optional<double> value;  // unset when the metric is not produced at this stage
  bool passed = false;
};

inline std::vector<CheckResult> evaluate_checks(const CheckThresholds& t,
                                                const PipelineResult& res) {
  std::vector<CheckResult> out;
  auto add = [&](const char* name, const std::optional<double>& threshold,
                 std::optional<double> value, bool at_least) {
    if (!threshold) return;
    CheckResult c{name, *threshold, value, false};
    if (value) c.passed = at_least ? *value >= *threshold : *value <= *threshold;
    out.push_back(std::move(c));
  };
  std::optional<double> recall, fpr, known, novel, in_empty, purity;
  if (res.detection_stats) {
    recall = res.detection_stats->recall;
    fpr = res.detection_stats->false_positive_rate;
  }
  if (res.report) {
    known = res.report->acc_known;
    novel = res.report->acc_novel;
    in_empty = res.report->novel_in_empty;
    purity = res.report->purity;
  }
  add("min_recall", t.min_recall, recall, true);
  add("max_fpr", t.max_fpr, fpr, false);
  add("min_acc_known", t.min_acc_known, known, true);
  add("min_acc_novel", t.min_acc_novel, novel, true);
  add("min_novel_in_empty", t.min_novel_in_empty, in_empty, true);
  add("min_purity", t.min_purity, purity, true);
  return out;
}

// Checks whose metric was not produced count as failed.
inline bool all_checks_pass(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::kTrain: return "train";
    case Stage::kDetect: return "detect";
    case Stage::kDistances: return "distances";
    case Stage::kExtend: return "extend";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

inline std::optional<Stage> parse_stage(const std::string& name) {
  for (Stage s : {Stage::kTrain, Stage::kDetect, Stage::kDistances, Stage::kExtend,
                  Stage::kEvaluate})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

inline nlohmann::ordered_json metrics_json(const ExperimentConfig& config,
                                           const PipelineResult& res, Stage stage,
                                           const std::vector<CheckResult>& checks) {
  nlohmann::ordered_json j;
  j["schema"] = kMetricsSchema;
  j["experiment"] = config.name;
  j["seed"] = config.seed;
  j["stage"] = to_string(stage);
  j["q"] = res.data.q;
  j["k"] = config.k;
  j["novel_classes"] = res.data.novel_classes;
  j["train_samples"] = res.data.train.size();
  j["test_samples"] = res.data.test.size();
  j["initial"] = {{"acc_known", res.initial_acc_known}};
  if (res.detection_stats) j["detection"] = detection_json(*res.detection_stats, config.tau);
  if (res.distances) j["distances"] = {{"size", res.distances->size()}};
  if (res.report) j["final"] = report_json(*res.report);
  if (res.baseline) {
    auto b = report_json(res.baseline->report);
    b["kmeans_inertia"] = res.baseline->clusters.inertia;
    b["kmeans_iterations"] = res.baseline->clusters.iterations;
    j["baseline"] = std::move(b);
  }
  if (!checks.empty()) {
    auto& arr = j["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
      nlohmann::ordered_json e;
      e["name"] = c.name;
      e["threshold"] = c.threshold;
      e["value"] = c.value ? nlohmann::ordered_json(*c.value) : nlohmann::ordered_json();
      e["passed"] = c.passed;
      arr.push_back(std::move(e));
    }
  }
  return j;
}

struct RunOutcome {
  PipelineResult result;
  std::vector<CheckResult> checks;
  std::vector<std::string> files;  // written artifacts, relative to the output directory
};

namespace report_detail {
template <typename Writer>
void write_file(const std::filesystem::path& dir, const std::string& name,
                std::vector<std::string>& files, Writer&& writer) {
  const auto path = dir / name;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  writer(os);
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
  files.push_back(name);
}
}  // namespace report_detail

// Runs the pipeline up to `stage` and writes the artifacts of every completed
// stage into `out_dir` (created if missing).
inline RunOutcome run_experiment(const ExperimentConfig& config,
                                 const std::filesystem::path& out_dir,
                                 Stage stage = Stage::kEvaluate, bool with_baseline = false) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  RunOutcome out;
  out.result = run_pipeline(config, stage, with_baseline);
  const auto& res = out.result;
  out.checks = evaluate_checks(config.check, res);
  using report_detail::write_file;
  auto& files = out.files;

  auto ckpt = [&](const std::string& name, const FeedforwardClassifier& m) {
    write_file(out_dir, name, files, [&](std::ostream& os) { save_checkpoint(m, os); });
  };
  auto scatter = [&](const std::string& name, const FeedforwardClassifier& m) {
    std::vector<std::size_t> none;
    const auto& ood = res.detection ? res.detection->ood_indices : none;
    write_file(out_dir, name, files, [&](std::ostream& os) {
      write_scatter_csv(export_scatter(m, res.data.test, ood), os);
    });
  };

  ckpt("model_initial.ckpt", res.initial_model);
  scatter("scatter_initial.csv", res.initial_model);
  if (res.detection)
    write_file(out_dir, "detection.csv", files,
               [&](std::ostream& os) { write_detection_csv(*res.detection, os); });
  if (res.distances)
    write_file(out_dir, "distances.csv", files,
               [&](std::ostream& os) { save_distance_csv(*res.distances, os); });
  if (res.extended_model) ckpt("model_extended.ckpt", *res.extended_model);
  if (res.final_model) {
    ckpt("model_final.ckpt", *res.final_model);
    scatter("scatter_final.csv", *res.final_model);
  }
  if (res.report)
    write_file(out_dir, "confusion.csv", files,
               [&](std::ostream& os) { write_confusion_csv(res.report->confusion, os); });
  if (res.baseline) {
    ckpt("model_baseline.ckpt", res.baseline->model);
    write_file(out_dir, "confusion_baseline.csv", files, [&](std::ostream& os) {
      write_confusion_csv(res.baseline->report.confusion, os);
    });
  }

  const auto metrics = metrics_json(config, res, stage, out.checks);
  write_file(out_dir, "metrics.json", files,
             [&](std::ostream& os) { os << metrics.dump(2) << '\n'; });

  nlohmann::ordered_json manifest;
  manifest["code_version"] = kCodeVersion;
  manifest["seed"] = config.seed;
  manifest["stage"] = to_string(stage);
  manifest["baseline"] = with_baseline;
  manifest["config"] = serialize_config(config);
  manifest["files"] = files;
  write_file(out_dir, "manifest.json", files,
             [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
  return out;
}

}  // namespace novelty

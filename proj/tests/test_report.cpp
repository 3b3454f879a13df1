#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "novelty/config.hpp"
#include "novelty/report.hpp"

using namespace novelty;

namespace {
std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 11;
  c.two_moons.train_samples = 120;
  c.two_moons.test_samples = 60;
  c.two_moons.blob_samples = 30;
  c.hidden = {6, 6};
  c.initial.epochs = 3;
  c.finetune.epochs = 2;
  c.finetune.batch_size = 16;
  c.check.min_recall = 0.0;
  c.check.min_acc_novel = 0.0;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}
}  // namespace

TEST(Scatter, ToySetHeaderAndEntropy) {
  const auto model = make_classifier(std::vector<std::size_t>{2, 4, 2}, 3);
  LabeledDataset ds;
  ds.samples = Matrix{{0, 0}, {1, -1}, {2, 3}};
  ds.labels = {0, 1, 1};
  const std::vector<std::size_t> ood{2};
  const auto rows = export_scatter(model, ds, ood);
  ASSERT_EQ(rows.size(), 3u);
  const Matrix logits = predict_logits(model, ds.samples);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(rows[r].entropy, entropy_score(softmax(logits.row(r))), 1e-12);
    EXPECT_EQ(rows[r].is_ood, r == 2);
  }
  std::ostringstream os;
  write_scatter_csv(rows, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "x0,x1,true,pred,entropy,ood");
  int count = 0;
  while (std::getline(is, line)) ++count;
  EXPECT_EQ(count, 3);
}

TEST(Scatter, HighDimensionalDataOmitsCoordinates) {
  const auto model = make_classifier(std::vector<std::size_t>{3, 2}, 3);
  LabeledDataset ds;
  ds.samples = Matrix(2, 3, 0.5);
  ds.labels = {0, 1};
  std::ostringstream os;
  write_scatter_csv(export_scatter(model, ds, {}), os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "true,pred,entropy,ood");
}

TEST(ConfusionCsv, Layout) {
  std::ostringstream os;
  write_confusion_csv(Matrix{{1, 0}, {2, 3}}, os);
  EXPECT_EQ(os.str(), "predicted,true_0,true_1\n0,1,0\n1,2,3\n");
}

TEST(Checks, MissingMetricFails) {
  PipelineResult res;
  CheckThresholds t;
  t.min_recall = 0.5;
  t.max_fpr = 0.1;
  res.detection_stats = DetectionStats{};
  res.detection_stats->recall = 0.6;
  res.detection_stats->false_positive_rate = 0.2;
  auto checks = evaluate_checks(t, res);
  ASSERT_EQ(checks.size(), 2u);
  EXPECT_TRUE(checks[0].passed);
  EXPECT_FALSE(checks[1].passed);
  t = {};
  t.min_purity = 0.0;
  checks = evaluate_checks(t, res);
  ASSERT_EQ(checks.size(), 1u);
  EXPECT_FALSE(checks[0].value.has_value());
  EXPECT_FALSE(all_checks_pass(checks));
}

TEST(Stage, NamesRoundTrip) {
  for (Stage s : {Stage::kTrain, Stage::kDetect, Stage::kDistances, Stage::kExtend,
                  Stage::kEvaluate})
    EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_FALSE(parse_stage("bogus").has_value());
}

TEST(RunExperiment, ArtifactsAndByteIdenticalRerun) {
  const auto cfg = tiny_config();
  const auto a = temp_dir("novelty_report_a"), b = temp_dir("novelty_report_b");
  const auto out = run_experiment(cfg, a, Stage::kEvaluate, true);
  run_experiment(cfg, b, Stage::kEvaluate, true);
  for (const char* f : {"metrics.json", "manifest.json", "scatter_initial.csv",
                        "scatter_final.csv", "confusion.csv", "detection.csv", "distances.csv",
                        "model_initial.ckpt", "model_extended.ckpt", "model_final.ckpt",
                        "model_baseline.ckpt", "confusion_baseline.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto metrics = nlohmann::json::parse(slurp(a / "metrics.json"));
  EXPECT_EQ(metrics["schema"], kMetricsSchema);
  EXPECT_EQ(metrics["seed"], 11);
  EXPECT_TRUE(metrics.contains("final"));
  EXPECT_TRUE(metrics.contains("baseline"));
  EXPECT_EQ(metrics["checks"].size(), 2u);
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest["code_version"], kCodeVersion);
  EXPECT_EQ(parse_config_string(manifest["config"].get<std::string>()), cfg);
  EXPECT_EQ(out.files.size(), 12u);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(RunExperiment, DetectStageEmitsOnlyDetectionArtifacts) {
  const auto dir = temp_dir("novelty_report_detect");
  const auto out = run_experiment(tiny_config(), dir, Stage::kDetect);
  EXPECT_TRUE(std::filesystem::exists(dir / "detection.csv"));
  for (const char* f : {"distances.csv", "model_extended.ckpt", "model_final.ckpt",
                        "scatter_final.csv", "confusion.csv"})
    EXPECT_FALSE(std::filesystem::exists(dir / f)) << f;
  const auto metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
  EXPECT_EQ(metrics["stage"], "detect");
  EXPECT_FALSE(metrics.contains("final"));
  // min_acc_novel has no value before evaluation.
  EXPECT_FALSE(all_checks_pass(out.checks));
  std::filesystem::remove_all(dir);
}

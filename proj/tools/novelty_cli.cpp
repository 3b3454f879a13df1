// Command-line front end. Every subcommand recomputes the pipeline from the
// config up to its stage, so outputs depend only on (config, seed).
//
// Exit codes: 0 success, 1 unexpected error, 2 config error,
//             3 data/format error, 4 a --check threshold failed.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "novelty/config.hpp"
#include "novelty/errors.hpp"
#include "novelty/report.hpp"

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kCheckFailed = 4 };

struct RunOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::string stage;
  bool check = false;
};

void print_summary(const novelty::RunOutcome& run) {
  const auto& r = run.result;
  std::printf("initial known accuracy: %.4f\n", r.initial_acc_known);
  if (r.detection_stats)
    std::printf("detection: flagged %zu, recall %.4f, false positive rate %.4f\n",
                r.detection_stats->flagged, r.detection_stats->recall,
                r.detection_stats->false_positive_rate);
  if (r.report)
    std::printf("final: known %.4f, novel %.4f, novel in empty %.4f, purity %.4f\n",
                r.report->acc_known, r.report->acc_novel, r.report->novel_in_empty,
                r.report->purity);
  if (r.baseline)
    std::printf("k-means baseline: known %.4f, novel %.4f\n", r.baseline->report.acc_known,
                r.baseline->report.acc_novel);
  for (const auto& c : run.checks)
    std::printf("check %-20s %s (threshold %.4f, value %s)\n", c.name.c_str(),
                c.passed ? "PASS" : "FAIL", c.threshold,
                c.value ? std::to_string(*c.value).c_str() : "n/a");
}

int run_single(const RunOptions& opt, novelty::Stage default_stage, bool baseline) {
  auto config = novelty::parse_config(opt.config_path);
  if (opt.seed) config.seed = *opt.seed;
  novelty::Stage stage = default_stage;
  if (!opt.stage.empty()) {
    const auto parsed = novelty::parse_stage(opt.stage);
    if (!parsed) throw novelty::ConfigError("--stage", "unknown stage '" + opt.stage + "'");
    stage = *parsed;
  }
  const auto run = novelty::run_experiment(config, opt.out_dir, stage, baseline);
  print_summary(run);
  std::printf("artifacts written to %s\n", opt.out_dir.c_str());
  if (opt.check && !novelty::all_checks_pass(run.checks)) return kCheckFailed;
  return kOk;
}

struct SweepOptions {
  std::vector<std::string> configs;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "sweep";
  unsigned jobs = 1;
  bool baseline = false;
  bool check = false;
};

struct SweepJob {
  novelty::ExperimentConfig config;
  std::filesystem::path dir;
};

int run_sweep(const SweepOptions& opt) {
  std::vector<SweepJob> jobs;
  for (const auto& path : opt.configs) {
    const auto base = novelty::parse_config(path);
    const auto seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : opt.seeds;
    for (auto seed : seeds) {
      SweepJob job{base, {}};
      job.config.seed = seed;
      job.dir = std::filesystem::path(opt.out_dir) /
                (base.name + "_seed" + std::to_string(seed));
      jobs.push_back(std::move(job));
    }
  }

  std::vector<std::optional<novelty::RunOutcome>> outcomes(jobs.size());
  const unsigned width = std::max(1u, opt.jobs);
  for (std::size_t begin = 0; begin < jobs.size(); begin += width) {
    std::vector<std::future<novelty::RunOutcome>> running;
    const std::size_t end = std::min(jobs.size(), begin + width);
    for (std::size_t i = begin; i < end; ++i)
      running.push_back(std::async(std::launch::async, [&job = jobs[i], &opt] {
        return novelty::run_experiment(job.config, job.dir, novelty::Stage::kEvaluate,
                                       opt.baseline);
      }));
    for (std::size_t i = begin; i < end; ++i) outcomes[i] = running[i - begin].get();
  }

  std::filesystem::create_directories(opt.out_dir);
  std::ofstream summary(std::filesystem::path(opt.out_dir) / "summary.csv");
  summary << "name,seed,recall,false_positive_rate,acc_known,acc_novel,novel_in_empty,purity,"
             "baseline_acc_novel,checks_passed\n";
  bool all_pass = true;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& r = outcomes[i]->result;
    const bool pass = novelty::all_checks_pass(outcomes[i]->checks);
    all_pass = all_pass && pass;
    char baseline[32] = "";
    if (r.baseline)
      std::snprintf(baseline, sizeof baseline, "%.17g", r.baseline->report.acc_novel);
    char line[512];
    std::snprintf(line, sizeof line, "%s,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%d\n",
                  jobs[i].config.name.c_str(),
                  static_cast<unsigned long long>(jobs[i].config.seed),
                  r.detection_stats->recall, r.detection_stats->false_positive_rate,
                  r.report->acc_known, r.report->acc_novel, r.report->novel_in_empty,
                  r.report->purity,
                  baseline,
                  pass ? 1 : 0);
    summary << line;
    std::printf("%s seed %llu: known %.4f novel %.4f%s\n", jobs[i].config.name.c_str(),
                static_cast<unsigned long long>(jobs[i].config.seed), r.report->acc_known,
                r.report->acc_novel, pass ? "" : " (check failed)");
  }
  if (!summary) throw novelty::IoError("failed writing sweep summary");
  return opt.check && !all_pass ? kCheckFailed : kOk;
}

void add_run_options(CLI::App* cmd, RunOptions& opt, bool with_stage) {
  cmd->add_option("--config", opt.config_path, "experiment config (INI)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--seed", opt.seed, "override the config seed");
  if (with_stage)
    cmd->add_option("--stage", opt.stage, "last stage: train|detect|distances|extend|evaluate");
  cmd->add_flag("--check", opt.check, "exit with code 4 if a [check] threshold fails");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-world classification: OoD detection, class extension, clustering"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    novelty::Stage stage;
    bool baseline;
  };
  const std::vector<Sub> subs = {
      {"train", "train the initial model", novelty::Stage::kTrain, false},
      {"detect", "train and detect OoD samples", novelty::Stage::kDetect, false},
      {"distances", "... and build the OoD distance matrix", novelty::Stage::kDistances, false},
      {"extend", "... and extend and fine-tune the model", novelty::Stage::kExtend, false},
      {"evaluate", "... and evaluate the extended model", novelty::Stage::kEvaluate, false},
      {"baseline", "full run plus the k-means pseudo-label baseline", novelty::Stage::kEvaluate,
       true},
      {"run", "all stages (use --stage to stop early)", novelty::Stage::kEvaluate, false},
  };
  std::vector<RunOptions> options(subs.size());
  std::vector<CLI::App*> commands;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_run_options(cmd, options[i], std::string(subs[i].name) == "run");
    commands.push_back(cmd);
  }

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "run several configs/seeds in parallel");
  sweep_cmd->add_option("--config", sweep.configs, "experiment configs")
      ->required()
      ->check(CLI::ExistingFile);
  sweep_cmd->add_option("--seeds", sweep.seeds, "seeds (default: each config's seed)")
      ->delimiter(',');
  sweep_cmd->add_option("--out", sweep.out_dir, "output root; one subdirectory per run")
      ->capture_default_str();
  sweep_cmd->add_option("--jobs", sweep.jobs, "parallel runs")->capture_default_str();
  sweep_cmd->add_flag("--baseline", sweep.baseline, "also run the k-means baseline");
  sweep_cmd->add_flag("--check", sweep.check, "exit with code 4 if any check fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (sweep_cmd->parsed()) return run_sweep(sweep);
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (commands[i]->parsed()) return run_single(options[i], subs[i].stage, subs[i].baseline);
  } catch (const novelty::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const novelty::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kData;
  } catch (const novelty::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kData;
  } catch (const novelty::ConsistencyError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
  return kUnexpected;
}

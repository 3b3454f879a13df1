// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "novelty/config.hpp"
#include "novelty/distances.hpp"
#include "novelty/gradcheck.hpp"
#include "novelty/losses.hpp"
#include "novelty/pipeline.hpp"
#include "novelty/report.hpp"

using namespace novelty;
namespace fs = std::filesystem;

namespace {

enum class Verdict { kPass, kFail, kSkipped };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) {
  return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)};
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1,
                     double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = d(rng);
  return m;
}

ExperimentConfig sample_config(const std::string& name) {
  return parse_config(fs::path(NOVELTY_SAMPLES_DIR) / name);
}

// 1. Closed-form loss identities.
Outcome loss_identities() {
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (std::size_t q = 2; q <= 8; ++q) {
    std::vector<double> one_hot(q, 0.0), uniform(q, 1.0 / static_cast<double>(q));
    one_hot[q / 2] = 1.0;
    track(cross_entropy(one_hot, q / 2), 0.0);
    track(entropy_score(uniform), 1.0);
    track(entropy_max_loss(uniform), std::log(static_cast<double>(q)));
    std::vector<double> empty_mass(q + 2, 0.0);
    empty_mass[q] = 0.4;
    empty_mass[q + 1] = 0.6;
    track(extension_loss(empty_mass, q), 0.0);
    std::vector<double> a(q, 0.0), b(q, 0.0);
    a[0] = 1.0;
    b[q - 1] = 1.0;
    track(cluster_loss(a, b, 3.0, 5.0), 0.0);
    track(cluster_loss(uniform, uniform, 0.0, 5.0), 0.0);
  }
  return pass_if(worst <= 1e-9, "max deviation " + fmt("%.3g", worst));
}

// 2. Analytic versus central-difference gradients.
Outcome gradient_checks() {
  std::mt19937_64 rng(2024);
  constexpr double eps = 1e-5;
  double worst = 0.0;
  std::size_t cases = 0;
  auto model_for = [&](std::size_t in, std::size_t out, const Matrix& batch) {
    for (;;) {
      std::uniform_int_distribution<std::size_t> layers(2, 4), width(2, 6);
      std::vector<std::size_t> widths{in};
      const std::size_t n = layers(rng);
      for (std::size_t i = 0; i + 1 < n; ++i) widths.push_back(width(rng));
      widths.push_back(out);
      auto m = make_classifier(widths, rng());
      if (min_relu_margin(m, batch) > 100 * eps) return m;
    }
  };
  const std::size_t q = 2, k = 2, n_in = 3, n_ood = 4;
  for (int t = 0; t < 20; ++t) {
    const Matrix batch = random_matrix(n_in + n_ood, 3, rng);
    const auto model = model_for(3, q + k, batch);
    std::vector<int> y(n_in);
    for (auto& v : y) v = static_cast<int>(rng() % q);
    std::vector<int> y_all(n_in + n_ood);
    for (auto& v : y_all) v = static_cast<int>(rng() % (q + k));
    const auto d = pairwise_euclidean(random_matrix(n_ood, 2, rng));
    const std::vector<std::size_t> ids{0, 1, 2, 3};
    const LossWeights w;
    std::vector<LogitLoss> losses{
        [&](const Matrix& z) { return cross_entropy_batch(z, y_all); },
        [&](const Matrix& z) { return extension_batch(z, q); },
        [&](const Matrix& z) {
          // Cluster loss over the OoD rows; in-distribution rows get no gradient.
          auto c = cluster_batch(slice_rows(z, n_in, n_in + n_ood), ids, d, w.alpha);
          return LossGrad{c.value, stack_rows(Matrix(n_in, z.cols()), c.grad)};
        },
        [&](const Matrix& z) {
          const auto r = total_objective(slice_rows(z, 0, n_in), y,
                                         slice_rows(z, n_in, n_in + n_ood), ids, d, w, q);
          return LossGrad{r.value, stack_rows(r.in_grad, r.ood_grad)};
        },
        [&](const Matrix& z) {
          const auto r = entropy_max_objective(slice_rows(z, 0, n_in), y,
                                               slice_rows(z, n_in, n_in + n_ood), 0.75);
          return LossGrad{r.value, stack_rows(r.in_grad, r.ood_grad)};
        }};
    for (const auto& loss : losses) {
      worst = std::max(worst, finite_difference_check(model, batch, loss, eps));
      ++cases;
    }
  }
  return pass_if(worst < 1e-4, std::to_string(cases) + " cases, max rel error " +
                                   fmt("%.3g", worst));
}

// 3. Singleton segments reduce to the per-sample losses.
Outcome segment_reduction() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t q = 1 + t % 4, k = 1 + t % 3;
    const Matrix pi = softmax_rows(random_matrix(4, q + k, rng, -4, 4));
    const Matrix pj = softmax_rows(random_matrix(4, q + k, rng, -4, 4));
    const std::size_t zi = rng() % 4, zj = rng() % 4;
    const double d = std::uniform_real_distribution<double>(0, 10)(rng);
    worst = std::max(worst, std::abs(segment_extension_loss(pi, Segment{zi}, q) -
                                     extension_loss(pi.row(zi), q)));
    worst = std::max(worst,
                     std::abs(segment_cluster_loss(pi, Segment{zi}, pj, Segment{zj}, d, 3.0, q,
                                                   k) -
                              cluster_loss(pi.row(zi), pj.row(zj), d, 3.0)));
  }
  return pass_if(worst <= 1e-12, "100 cases, max deviation " + fmt("%.3g", worst));
}

// 4. TwoMoons end to end.
Outcome two_moons() {
  const auto cfg = sample_config("two_moons.ini");
  const auto res = run_pipeline(cfg);
  const auto& det = *res.detection_stats;
  const auto& rep = *res.report;
  std::ostringstream os;
  os << "recall " << fmt("%.4f", det.recall) << ", fpr " << fmt("%.4f", det.false_positive_rate)
     << ", novel in empty " << fmt("%.4f", rep.novel_in_empty) << ", purity "
     << fmt("%.4f", rep.purity);
  return pass_if(det.recall >= 0.9 && det.false_positive_rate <= 0.1 &&
                     rep.novel_in_empty >= 0.9 && rep.purity >= 0.9,
                 os.str());
}

// 5. MNIST desk scale.
Outcome mnist() {
  fs::path dir = NOVELTY_MNIST_DIR;
  if (const char* env = std::getenv("NOVELTY_MNIST_DIR")) dir = env;
  const char* files[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  for (const char* f : files)
    if (!fs::exists(dir / f))
      return {Verdict::kSkipped, "IDX files not found in " + dir.string()};
  auto cfg = sample_config("mnist.ini");
  cfg.idx.train_images = (dir / files[0]).string();
  cfg.idx.train_labels = (dir / files[1]).string();
  cfg.idx.test_images = (dir / files[2]).string();
  cfg.idx.test_labels = (dir / files[3]).string();
  const auto res = run_pipeline(cfg);
  const auto& rep = *res.report;
  std::ostringstream os;
  os << "known acc " << fmt("%.4f", rep.acc_known) << " (>= 0.92), novel acc "
     << fmt("%.4f", rep.acc_novel) << " (>= 0.85), detection recall "
     << fmt("%.4f", res.detection_stats->recall) << ", train " << res.data.train.size()
     << ", test " << res.data.test.size();
  return pass_if(rep.acc_known >= 0.92 && rep.acc_novel >= 0.85, os.str());
}

// 6. Ours versus the k-means baseline under injected false positives.
Outcome baseline_ordering() {
  int wins = 0;
  std::ostringstream os;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = sample_config("two_moons.ini");
    cfg.seed = seed;
    cfg.false_positive_rate = 0.1;
    const auto res = run_pipeline(cfg, Stage::kEvaluate, true);
    const double ours = res.report->acc_novel, base = res.baseline->report.acc_novel;
    if (ours >= base) ++wins;
    os << (seed > 1 ? "; " : "") << "seed " << seed << " " << fmt("%.3f", ours) << " vs "
       << fmt("%.3f", base);
  }
  return pass_if(wins >= 4, std::to_string(wins) + "/5 seeds (" + os.str() + ")");
}

// 7. Ablations.
Outcome ablations() {
  const auto base = sample_config("two_moons.ini");
  auto oracle_dist = base;
  oracle_dist.oracle_distance = true;
  auto oracle_det = base;
  oracle_det.oracle_detection = true;
  const auto detected = run_pipeline(base);
  const auto with_oracle_dist = run_pipeline(oracle_dist);
  const auto with_oracle_det = run_pipeline(oracle_det, Stage::kDetect);
  const double p_det = detected.report->purity, p_oracle = with_oracle_dist.report->purity;
  const double recall = with_oracle_det.detection_stats->recall;
  std::ostringstream os;
  os << "purity oracle-distance " << fmt("%.4f", p_oracle) << " vs detected "
     << fmt("%.4f", p_det) << ", oracle-detection recall " << fmt("%.4f", recall);
  return pass_if(p_oracle >= p_det && recall == 1.0, os.str());
}

// 8. Two CLI runs produce byte-identical metrics.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "novelty_acceptance_det";
  fs::remove_all(root);
  const fs::path config = fs::path(NOVELTY_SAMPLES_DIR) / "two_moons.ini";
  std::string metrics[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path out = root / ("run" + std::to_string(i));
    const std::string cmd = std::string("\"") + NOVELTY_CLI_PATH + "\" run --config \"" +
                            config.string() + "\" --out \"" + out.string() +
                            "\" > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return pass_if(false, "CLI run failed: " + cmd);
    std::ifstream is(out / "metrics.json", std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    metrics[i] = ss.str();
  }
  fs::remove_all(root);
  return pass_if(!metrics[0].empty() && metrics[0] == metrics[1],
                 std::to_string(metrics[0].size()) + " bytes compared");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"AC1 loss identities", loss_identities},
      {"AC2 gradient checks", gradient_checks},
      {"AC3 segment reduction", segment_reduction},
      {"AC4 two moons end-to-end", two_moons},
      {"AC5 mnist desk scale", mnist},
      {"AC6 baseline ordering", baseline_ordering},
      {"AC7 ablation monotonicity", ablations},
      {"AC8 cli determinism", determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.verdict == Verdict::kPass   ? "PASS"
                      : o.verdict == Verdict::kFail ? "FAIL"
                                                    : "SKIPPED";
    if (o.verdict == Verdict::kFail) ++failures;
    std::printf("%s %s: %s [%.1f s]\n", tag, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

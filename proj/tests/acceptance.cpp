// Acceptance gate: prints one [PASS]/[FAIL] line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "mvadv/attacks.hpp"
#include "mvadv/harness.hpp"
#include "mvadv/random.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mvadv;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void invariant(bool pass, const std::string& detail) {
  std::printf("[%s] invariant: %s\n", pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (rel == "results.csv" || rel.rfind("noises", 0) == 0) out[rel] = slurp(e.path());
  }
  return out;
}

const MetricsRow* find_row(const ExperimentResult& r, const std::string& attack, double eps, const std::string& split,
                           std::uint64_t seed) {
  for (const auto& row : r.rows) {
    if (row.attack == attack && row.epsilon == eps && row.split == split && row.seed == seed) return &row;
  }
  return nullptr;
}

bool same(const Metrics& a, const Metrics& b) {
  return a.top1 == b.top1 && a.top5 == b.top5 && a.true_prob_mean == b.true_prob_mean &&
         a.true_prob_std == b.true_prob_std;
}

void criterion_gradient() {
  const auto t0 = Clock::now();
  std::size_t accepted = 0, screened = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; accepted < 100 && seed < 1000; ++seed) {
    const Classifier model = Classifier::tiny_cnn(8, 8, 3, 5, seed);
    Rng rng(derive_seed(seed, {0xfd}));
    std::vector<double> px(8 * 8 * 3);
    for (auto& v : px) v = uniform01(rng);
    const Tensor x({1, 8, 8, 3}, px);
    const std::size_t label = seed % 5;
    const auto fd = oracle::fd_gradient(model, x.slice(0), label);
    if (fd.kink_crossed) {
      ++screened;
      continue;
    }
    const Tensor g = model.input_gradient(x, {label});
    const std::vector<double> analytic(g.values().begin(), g.values().end());
    worst = std::max(worst, oracle::max_relative_error(analytic, fd.gradient));
    ++accepted;
  }
  const double t = seconds_since(t0);
  report(1, accepted == 100 && worst < 1e-4 && t < 30.0,
         "max relative FD error " + fmt("%.3g", worst) + " over " + std::to_string(accepted) + " cases (" +
             std::to_string(screened) + " kink-crossing draws skipped), " + fmt("%.1f s", t));
}

void criterion_single_image() {
  const Classifier model = Classifier::tiny_cnn(16, 16, 3, 5, 11);
  const ViewSet set = render_views(default_object(2), 2, {16, 16}, 5);
  const Tensor x = clip(gather(set.images({0}), std::vector<std::size_t>{0}), 0.02, 0.98);
  AttackConfig cfg{0.01, 1, 0.0, 1.0, 99, RegularizerSign::kAdd, 0.01};
  const Perturbation u = universal_perturbation(model, x, {2}, cfg);
  const Tensor d0 = initial_noise(x.slice(0).shape(), cfg.init_range, cfg.seed);
  const Tensor jittered = broadcast_add(x, d0);
  const Tensor step = sub(fgsm(model, jittered, {2}, cfg.epsilon), jittered).slice(0);
  const double err = linf_norm(sub(sub(u.noise, d0), step));
  report(10, err <= 1e-10, "max |(delta_1 - delta_0) - FGSM step at x + delta_0| = " + fmt("%.3g", err));
}

}  // namespace

int main() {
  criterion_gradient();

  const fs::path root = fs::temp_directory_path() / ("mvadv_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);

  ExperimentConfig cfg;
  cfg.save_noises = true;
  cfg.workers = std::max(1u, std::thread::hardware_concurrency());

  const auto train_t0 = Clock::now();
  const Classifier probe = train_for_seed(cfg, cfg.seeds.front());
  const double train_seconds = seconds_since(train_t0);
  (void)probe;

  cfg.out_dir = root / "run_a";
  const auto sweep_t0 = Clock::now();
  const ExperimentResult a = run_experiment(cfg);
  const double sweep_seconds = seconds_since(sweep_t0);

  {
    bool ok = train_seconds < 120.0;
    std::string detail = "clean test top-1 per seed:";
    for (const auto& s : a.seeds) {
      ok = ok && s.clean_test_top1 >= 0.90;
      detail += fmt(" %.2f", s.clean_test_top1);
    }
    report(2, ok, detail + fmt(", training %.1f s", train_seconds));
  }

  {
    bool rows_ok = true;
    for (const auto& s : a.seeds) {
      for (const auto& name : {"fgsm", "bim", "universal"}) {
        const auto* tr = find_row(a, name, 0.0, "train", s.seed);
        const auto* te = find_row(a, name, 0.0, "test", s.seed);
        rows_ok = rows_ok && tr && te && same(tr->metrics, s.direct_train) && same(te->metrics, s.direct_test);
      }
    }
    const Classifier model = Classifier::tiny_cnn(64, 64, 3, 5, 3);
    const ViewSet set = render_views(default_object(0), 10, {64, 64}, 1);
    const Tensor x = set.train_images();
    const LabelBatch y(x.extent(0), 0);
    const Perturbation u = universal_perturbation(model, x, y, cfg.universal);
    const bool exact = fgsm(model, x, y, 0.0) == x && fgsm_targeted(model, x, LabelBatch(y.size(), 1), 0.0) == x &&
                       bim(model, x, y, 0.0, 10) == x && apply_perturbation(x, u, 0.0) == x;
    report(3, rows_ok && exact,
           std::string("epsilon = 0 outputs ") + (exact ? "bit-identical" : "DIFFER") + ", clean rows " +
               (rows_ok ? "equal" : "DIFFER from") + " direct evaluation");
  }

  {
    const std::vector<double> grid = cfg.epsilons;
    bool ok = sweep_seconds < 300.0;
    std::string detail;
    for (const auto& name : {"fgsm", "bim", "universal"}) {
      const double top1 = seed_mean(a, name, "test", grid).back().top1;
      for (const auto& s : a.seeds) ok = ok && find_row(a, name, 0.50, "test", s.seed)->metrics.top1 <= 0.05;
      detail += std::string(name) + fmt(" %.3f  ", top1);
    }
    report(4, ok, "test top-1 at epsilon 0.50: " + detail + fmt("(sweep %.1f s)", sweep_seconds));
  }

  {
    int seeds_ok = 0;
    std::string detail;
    for (const auto& s : a.seeds) {
      bool ok = true;
      for (double eps : {0.005, 0.01}) {
        const double u = find_row(a, "universal", eps, "test", s.seed)->metrics.top1;
        const double b = find_row(a, "bim", eps, "test", s.seed)->metrics.top1;
        ok = ok && u <= b;
        detail += fmt(" %.2f", u) + fmt("/%.2f", b);
      }
      seeds_ok += ok;
    }
    report(5, seeds_ok >= 2,
           std::to_string(seeds_ok) + "/3 seeds with universal <= BIM (universal/BIM top-1 at 0.005, 0.01 per seed:" +
               detail + ")");
  }

  {
    const auto mean_prob = [&](const char* name) {
      double s = 0.0;
      const auto col = seed_mean(a, name, "test", cfg.epsilons);
      for (const auto& m : col) s += m.true_prob_mean;
      return s / static_cast<double>(col.size());
    };
    const double u = mean_prob("universal"), f = mean_prob("fgsm"), b = mean_prob("bim");
    report(6, u <= f + 0.05 && u <= b + 0.05,
           "mean test true-class probability: universal " + fmt("%.3f", u) + ", FGSM " + fmt("%.3f", f) + ", BIM " +
               fmt("%.3f", b));
  }

  report(7, a.bim_max_ball_excess <= 1e-12,
         "max ||x_adv - x||_inf - epsilon over all BIM examples = " + fmt("%.3g", a.bim_max_ball_excess));

  {
    bool one_each = true;
    for (const auto& art : a.artifacts) {
      if (art.attack == "universal") one_each = one_each && art.noises == 1;
    }
    ExperimentConfig audit_cfg = cfg;
    audit_cfg.universal.num_iterations = 1;
    const Classifier model = Classifier::tiny_cnn(64, 64, 3, 5, 3);
    const ViewSet set = render_views(default_object(4), 10, {64, 64}, 1);
    std::size_t fgsm_calls = 0, universal_calls = 0;
    for (const auto& e : audit_object(model, set, audit_cfg)) {
      if (e.attack == "fgsm") fgsm_calls = e.backward_passes;
      if (e.attack == "universal") universal_calls = e.backward_passes;
    }
    report(8, one_each && universal_calls == 1 && fgsm_calls == 5,
           std::string(one_each ? "one" : "NOT one") + " universal noise per object; backward passes universal(N=1) " +
               std::to_string(universal_calls) + " vs FGSM " + std::to_string(fgsm_calls));
  }

  {
    cfg.out_dir = root / "run_b";
    run_experiment(cfg);
    const auto ta = tree_contents(root / "run_a");
    const auto tb = tree_contents(root / "run_b");
    report(9, ta == tb && ta.size() > 1,
           std::to_string(ta.size()) + " CSV and noise files compared, " + (ta == tb ? "byte-identical" : "DIFFERENT"));
  }

  criterion_single_image();

  // Sweep-level invariants checked on the same three-seed run.
  {
    bool ok = true;
    std::string detail;
    for (const auto& name : {"fgsm", "bim", "universal"}) {
      const auto col = seed_mean(a, name, "test", cfg.epsilons);
      int inversions = 0;
      for (std::size_t e = 1; e < col.size(); ++e) inversions += col[e].top1 > col[e - 1].top1;
      ok = ok && inversions <= 1;
      detail += std::string(" ") + name + "=" + std::to_string(inversions);
    }
    invariant(ok, "test top-1 non-increasing in epsilon (inversions:" + detail + ")");
  }
  {
    bool ok = true;
    for (const auto& s : a.seeds) {
      for (const auto& row : a.rows) {
        if (row.seed != s.seed || row.epsilon < 0.10) continue;
        const Metrics& clean = row.split == "train" ? s.direct_train : s.direct_test;
        ok = ok && row.metrics.true_prob_mean <= clean.true_prob_mean + 0.05;
      }
    }
    invariant(ok, "attacked true-class probability <= clean + 0.05 for every row with epsilon >= 0.10");
  }
  {
    std::map<std::string, std::size_t> per_attack;
    bool ok = true;
    for (const auto& art : a.artifacts) {
      ok = ok && art.noises == (art.attack == "universal" ? 1u : 5u);
      ++per_attack[art.attack];
    }
    const std::size_t expected = a.seeds.size() * (cfg.epsilons.size() - 1) * kObjectClassCount;
    for (const auto& [name, n] : per_attack) ok = ok && n == expected;
    invariant(ok, "universal writes one noise per object per epsilon, FGSM and BIM one per train view");
  }

  fs::remove_all(root);
  std::printf("%s: %d check(s) failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}

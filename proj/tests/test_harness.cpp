#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mvadv/harness.hpp"

using namespace mvadv;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.epsilons = {0.0, 0.05, 0.5};
  cfg.resolution = {16, 16};
  cfg.seeds = {1, 2};
  cfg.corpus_views_per_class = 6;
  cfg.train.epochs = 3;
  cfg.universal.num_iterations = 2;
  cfg.bim_iterations = 3;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const MetricsRow& row(const ExperimentResult& r, std::string_view attack, double eps, std::string_view split,
                      std::uint64_t seed) {
  for (const auto& x : r.rows) {
    if (x.attack == attack && x.epsilon == eps && x.split == split && x.seed == seed) return x;
  }
  throw std::runtime_error("row not found");
}

}  // namespace

TEST_CASE("attack names round-trip") {
  for (auto k : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kUniversal}) CHECK(parse_attack(attack_name(k)) == k);
  CHECK_FALSE(parse_attack("pgd").has_value());
}

TEST_CASE("evaluate computes accuracy and true-class probability statistics") {
  const Classifier m = Classifier::linear(2, 2, 1, 5, 3);
  std::vector<double> v(6 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 7) / 7.0;
  const Tensor x({6, 2, 2, 1}, v);
  const LabelBatch y{0, 1, 2, 3, 4, 0};
  const Tensor p = m.forward(x);
  const auto pred = argmax_rows(p);
  double top1 = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    top1 += pred[i] == y[i];
    mean += p.slice_values(i)[y[i]];
  }
  top1 /= 6;
  mean /= 6;
  double var = 0.0;
  for (std::size_t i = 0; i < 6; ++i) var += std::pow(p.slice_values(i)[y[i]] - mean, 2);
  const Metrics m1 = evaluate(m, x, y);
  CHECK(m1.top1 == doctest::Approx(top1));
  CHECK(m1.top5 == 1.0);  // five classes: top-5 always contains the label
  CHECK(m1.true_prob_mean == doctest::Approx(mean));
  CHECK(m1.true_prob_std == doctest::Approx(std::sqrt(var / 6)));
  CHECK_THROWS(evaluate(m, x, {0, 1}));
  CHECK_THROWS(evaluate(m, x, {0, 1, 2, 3, 4, 5}));
}

TEST_CASE("a perfect model scores top-1 1, mean probability 1 and std 0") {
  std::vector<double> w(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1000.0;
  const Classifier m("linear", {2, 2, 1}, 4, {Dense{Tensor({4, 4}, w), Tensor({4}), Activation::kNone}}, 0);
  std::vector<double> x(4 * 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) x[i * 4 + i] = 1.0;
  const Metrics r = evaluate(m, Tensor({4, 2, 2, 1}, x), {0, 1, 2, 3});
  CHECK(r.top1 == 1.0);
  CHECK(r.true_prob_mean == 1.0);
  CHECK(r.true_prob_std == 0.0);
}

TEST_CASE("configuration validation") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.epsilons = {0.1, 0.0};
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.epsilons = {0.01, 0.1};
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.seeds.clear();
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.distractor_classes = 4;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.attacks.clear();
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  const auto j = to_json(ExperimentConfig{});
  CHECK(j["epsilons"].size() == 9);
  CHECK(j["universal"]["eps_step"] == 0.01);
}

TEST_CASE("small experiment: rows, clean baseline, artifacts and audit") {
  const ExperimentConfig cfg = small_config();
  const ExperimentResult r = run_experiment(cfg);
  CHECK(r.rows.size() == 3 * 3 * 2 * 2);
  CHECK(r.seeds.size() == 2);
  for (const auto& s : r.seeds) {
    for (auto name : {"fgsm", "bim", "universal"}) {
      const auto& tr = row(r, name, 0.0, "train", s.seed);
      const auto& te = row(r, name, 0.0, "test", s.seed);
      CHECK(tr.metrics.top1 == s.direct_train.top1);
      CHECK(te.metrics.true_prob_mean == s.direct_test.true_prob_mean);
      CHECK(te.metrics.true_prob_std == s.direct_test.true_prob_std);
    }
  }
  CHECK(r.bim_max_ball_excess <= 1e-12);

  // Two nonzero epsilons x five objects x two seeds per attack.
  std::size_t universal = 0, fgsm = 0;
  for (const auto& a : r.artifacts) {
    if (a.attack == "universal") {
      ++universal;
      CHECK(a.noises == 1);
    }
    if (a.attack == "fgsm") {
      ++fgsm;
      CHECK(a.noises == 5);
    }
  }
  CHECK(universal == 20);
  CHECK(fgsm == 20);

  for (const auto& a : gradient_call_audit(r)) {
    if (a.attack == "fgsm") CHECK(a.per_generation() == 5.0);
    if (a.attack == "bim") CHECK(a.per_generation() == 15.0);
    if (a.attack == "universal") CHECK(a.per_generation() == 2.0);
  }
  const auto f = seed_mean(r, "fgsm", "test", cfg.epsilons);
  CHECK(f.size() == 3);
  CHECK(f[0].top1 == doctest::Approx((r.seeds[0].clean_test_top1 + r.seeds[1].clean_test_top1) / 2));
}

TEST_CASE("attacked probability does not exceed the clean one at large epsilon") {
  ExperimentConfig cfg = small_config();
  cfg.seeds = {3};
  cfg.epsilons = {0.0, 0.1, 0.3};
  cfg.train.epochs = 6;
  cfg.corpus_views_per_class = 12;
  const ExperimentResult r = run_experiment(cfg);
  for (auto name : {"fgsm", "bim", "universal"}) {
    const auto m = seed_mean(r, name, "test", cfg.epsilons);
    for (std::size_t e = 1; e < m.size(); ++e) CHECK(m[e].true_prob_mean <= m[0].true_prob_mean + 0.05);
  }
}

TEST_CASE("outputs are written and identical across runs") {
  ExperimentConfig cfg = small_config();
  cfg.seeds = {1};
  cfg.save_noises = true;
  cfg.save_bitmaps = true;
  cfg.save_model = true;
  cfg.dump_views = true;
  const fs::path root = fs::temp_directory_path() / "mvadv_test_harness";
  fs::remove_all(root);
  cfg.out_dir = root / "a";
  const ExperimentResult a = run_experiment(cfg);
  cfg.out_dir = root / "b";
  cfg.workers = 3;
  const ExperimentResult b = run_experiment(cfg);

  const std::string csv = read_file(root / "a" / "results.csv");
  CHECK(csv.rfind("attack,epsilon,split,top1,top5,true_prob_mean,true_prob_std,seed\n", 0) == 0);
  CHECK(csv == read_file(root / "b" / "results.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 3 * 2);
  CHECK(fs::exists(root / "a" / "model_seed1.bin"));
  CHECK(fs::exists(root / "a" / "views" / "seed1" / "cube_poses.txt"));
  CHECK(fs::exists(root / "a" / "bitmaps"));

  std::size_t noise_files = 0;
  for (const auto& p : a.written_files) {
    if (p.extension() != ".noise") continue;
    ++noise_files;
    const auto rel = fs::relative(p, root / "a");
    CHECK(read_file(p) == read_file(root / "b" / rel));
  }
  // fgsm and bim: 5 per object, universal: 1 per object; 2 epsilons, 5 objects.
  CHECK(noise_files == 2 * 5 * (5 + 5 + 1));
  CHECK(a.written_files.size() == b.written_files.size());

  const auto universal = load_perturbation(root / "a" / "noises" / "seed1" / "universal" / "eps0.5000" /
                                           "sphere.noise");
  CHECK(linf_norm(universal.noise) == doctest::Approx(0.5));

  std::ifstream json(root / "a" / "results.json");
  const auto j = nlohmann::json::parse(json);
  CHECK(j["rows"].size() == 18);
  CHECK(j.contains("reference_accuracy"));
  CHECK(j["gradient_call_audit"].size() == 3);
  fs::remove_all(root);
}

TEST_CASE("cross application keeps the train rows and the clean baseline") {
  ExperimentConfig cfg = small_config();
  cfg.seeds = {2};
  cfg.attacks = {AttackKind::kFgsm};
  const ExperimentResult one = run_experiment(cfg);
  cfg.cross_apply = true;
  const ExperimentResult cross = run_experiment(cfg);
  CHECK(row(one, "fgsm", 0.05, "train", 2).metrics.top1 == row(cross, "fgsm", 0.05, "train", 2).metrics.top1);
  CHECK(row(one, "fgsm", 0.0, "test", 2).metrics.top1 == row(cross, "fgsm", 0.0, "test", 2).metrics.top1);
}

TEST_CASE("distractor classes widen the classifier") {
  ExperimentConfig cfg = small_config();
  cfg.seeds = {1};
  cfg.distractor_classes = 3;
  cfg.attacks = {AttackKind::kUniversal};
  const Classifier m = train_for_seed(cfg, 1);
  CHECK(m.num_classes() == 8);
  const ExperimentResult r = run_experiment(cfg);
  CHECK(r.rows.size() == 3 * 2);
}

TEST_CASE("a loaded model must match the render resolution") {
  const fs::path path = fs::temp_directory_path() / "mvadv_test_wrong_model.bin";
  save_classifier(path, Classifier::tiny_cnn(8, 8, 3, 5, 1));
  ExperimentConfig cfg = small_config();
  cfg.load_model = path;
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
  fs::remove(path);
}

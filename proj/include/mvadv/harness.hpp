#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mvadv/attacks.hpp"
#include "mvadv/classifier.hpp"
#include "mvadv/renderer.hpp"

namespace mvadv {

enum class AttackKind { kFgsm, kBim, kUniversal };

std::string_view attack_name(AttackKind kind);
std::optional<AttackKind> parse_attack(std::string_view name);

struct ExperimentConfig {
  std::vector<double> epsilons{0.0, 0.005, 0.01, 0.03, 0.05, 0.10, 0.15, 0.30, 0.50};
  std::vector<AttackKind> attacks{AttackKind::kFgsm, AttackKind::kBim, AttackKind::kUniversal};
  std::size_t n_angles = 10;
  Resolution resolution{64, 64};
  std::vector<std::uint64_t> seeds{1, 2, 3};

  // Universal noise generation; epsilon is the update step. The norm term is
  // off by default here (see README, "Universal noise defaults").
  AttackConfig universal{0.01, 10, 0.0, 1.0, 0, RegularizerSign::kAdd, 0.01};
  std::size_t bim_iterations = 10;
  BimStep bim_step = BimStep::kDivided;
  bool cross_apply = false;  // every train-view noise on every test view
  SplitRule split = SplitRule::kEvenOdd;
  std::size_t distractor_classes = 0;

  TrainSpec train{0.02, 10, 8, 0};  // seed is replaced per experiment seed
  std::size_t corpus_views_per_class = 32;
  std::optional<std::filesystem::path> load_model;
  bool save_model = false;

  std::filesystem::path out_dir;  // empty: keep results in memory only
  bool save_noises = false;
  bool save_bitmaps = false;
  bool dump_views = false;
  double bitmap_epsilon = 0.15;
  std::size_t workers = 1;
};

/// Throws std::invalid_argument when the grid is unsorted, lacks 0, or
/// any count is zero.
void validate(const ExperimentConfig& cfg);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct Metrics {
  double top1 = 0.0;
  double top5 = 0.0;
  double true_prob_mean = 0.0;
  double true_prob_std = 0.0;  // population standard deviation
};

struct MetricsRow {
  std::string attack;
  double epsilon = 0.0;
  std::string split;  // "train" or "test"
  Metrics metrics;
  std::uint64_t seed = 0;
};

/// Top-1 / top-5 accuracy and true-class probability statistics.
Metrics evaluate(const Classifier& model, const Tensor& x, const LabelBatch& y);

/// Backward passes spent generating noise for one object, per attack.
struct AuditEntry {
  std::string attack;
  std::size_t generations = 0;      // (seed, object[, epsilon]) noise generations
  std::size_t backward_passes = 0;  // total over all generations
  std::size_t views = 0;            // train views per object
  double per_generation() const {
    return generations == 0 ? 0.0 : static_cast<double>(backward_passes) / static_cast<double>(generations);
  }
};

struct ArtifactCount {
  std::string attack;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  std::size_t object_class = 0;
  std::size_t noises = 0;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  double clean_train_top1 = 0.0;
  double clean_test_top1 = 0.0;
  // evaluate() on the unattacked views, computed directly (not through the
  // attack pipeline) for comparison with the epsilon = 0 rows.
  Metrics direct_train;
  Metrics direct_test;
  std::size_t objects = 0;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<AuditEntry> audit;
  std::vector<ArtifactCount> artifacts;
  std::vector<SeedSummary> seeds;
  /// max over every generated BIM example of ||x_adv - x||_inf - epsilon.
  double bim_max_ball_excess = -1.0;
  std::vector<std::filesystem::path> written_files;
};

/// Render, train (or load), attack every object over the epsilon grid, and
/// evaluate. Writes results.csv / results.json (and optional noises,
/// bitmaps, views, models) under cfg.out_dir when it is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(std::string_view)>& log = {});

/// Per-attack backward-pass counts per object generation.
std::vector<AuditEntry> gradient_call_audit(const ExperimentResult& result);

/// Generates each attack's noise once for one object and counts the
/// backward passes each needed.
std::vector<AuditEntry> audit_object(const Classifier& model, const ViewSet& object, const ExperimentConfig& cfg);

/// CSV with header attack,epsilon,split,top1,top5,true_prob_mean,true_prob_std,seed.
std::string to_csv(const std::vector<MetricsRow>& rows);
nlohmann::json to_json(const ExperimentResult& result, const ExperimentConfig& cfg);

/// Mean over seeds of one attack/split column, in grid order.
std::vector<Metrics> seed_mean(const ExperimentResult& result, std::string_view attack, std::string_view split,
                               const std::vector<double>& epsilons);

/// Trains the per-seed classifier exactly as run_experiment does.
Classifier train_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace mvadv

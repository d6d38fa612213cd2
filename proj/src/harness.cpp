#include "mvadv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "mvadv/image_io.hpp"
#include "mvadv/random.hpp"

namespace mvadv {

namespace {

namespace fs = std::filesystem;

constexpr std::array<std::string_view, 3> kAttackNames{"fgsm", "bim", "universal"};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each task writes
// only its own output slot, so results do not depend on scheduling.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string eps_tag(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "eps%.4f", eps);
  return buf;
}

// Rescales a noise tensor to unit L-inf norm so that epsilon is the largest
// per-pixel change it can make, whatever attack produced it.
Tensor unit_direction(const Tensor& noise) {
  const double m = linf_norm(noise);
  return m == 0.0 ? noise : scale(noise, 1.0 / m);
}

// Noise directions generated for one object of one seed.
struct ObjectNoises {
  std::vector<Tensor> fgsm;                  // one per train view
  std::vector<std::vector<Tensor>> bim;      // [epsilon index][train view]
  Tensor universal;                          // unit direction
  Perturbation universal_raw;
  double bim_ball_excess = -1.0;
  GradientCounter fgsm_calls, bim_calls, universal_calls;
  std::size_t bim_generations = 0;
};

struct SeedState {
  MultiViewDataset data;
  std::optional<Classifier> model;
  std::vector<ObjectNoises> noises;
};

std::vector<ObjectSpec> classifier_classes(const ExperimentConfig& cfg) {
  std::vector<ObjectSpec> specs = default_objects();
  for (std::size_t d = 0; d < cfg.distractor_classes; ++d) specs.push_back(default_object(kObjectClassCount + d));
  return specs;
}

std::uint64_t universal_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t class_id) {
  return derive_seed(seed, {cfg.universal.seed, class_id, 0x0415e});
}

ObjectNoises generate_noises(const Classifier& model, const ViewSet& set, const ExperimentConfig& cfg,
                             std::uint64_t seed) {
  ObjectNoises out;
  const Tensor x = set.train_images();
  const LabelBatch y(set.train.size(), set.object.class_id);
  const auto wants = [&](AttackKind k) {
    return std::find(cfg.attacks.begin(), cfg.attacks.end(), k) != cfg.attacks.end();
  };

  if (wants(AttackKind::kFgsm)) {
    // FGSM noise is the gradient sign itself: its unit direction is already
    // the epsilon-free part of clip(x + eps * sign(grad)).
    const Tensor s = gradient_sign(model, x, y, &out.fgsm_calls);
    for (std::size_t i = 0; i < x.extent(0); ++i) out.fgsm.push_back(s.slice(i));
  }

  if (wants(AttackKind::kBim)) {
    out.bim.resize(cfg.epsilons.size());
    for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
      const double eps = cfg.epsilons[e];
      if (eps == 0.0) {
        out.bim[e].assign(x.extent(0), Tensor(Shape(x.shape().begin() + 1, x.shape().end())));
        continue;
      }
      const Tensor adv = bim(model, x, y, eps, cfg.bim_iterations, cfg.bim_step, &out.bim_calls);
      ++out.bim_generations;
      const Tensor delta = sub(adv, x);
      out.bim_ball_excess = std::max(out.bim_ball_excess, linf_norm(delta) - eps);
      for (std::size_t i = 0; i < x.extent(0); ++i) out.bim[e].push_back(scale(delta.slice(i), 1.0 / eps));
    }
  }

  if (wants(AttackKind::kUniversal)) {
    AttackConfig ucfg = cfg.universal;
    ucfg.seed = universal_seed(cfg, seed, set.object.class_id);
    out.universal_raw = universal_perturbation(model, x, y, ucfg, &out.universal_calls);
    out.universal = unit_direction(out.universal_raw.noise);
  }
  return out;
}

const Tensor& train_noise(const ObjectNoises& n, AttackKind kind, std::size_t eps_index, std::size_t view) {
  switch (kind) {
    case AttackKind::kFgsm: return n.fgsm.at(view);
    case AttackKind::kBim: return n.bim.at(eps_index).at(view);
    case AttackKind::kUniversal: return n.universal;
  }
  throw std::logic_error("unknown attack");
}

// Attacked train and test batches for one (attack, epsilon) cell.
std::pair<Dataset, Dataset> attacked_views(const SeedState& st, const ExperimentConfig& cfg, AttackKind kind,
                                           std::size_t eps_index) {
  const double eps = cfg.epsilons[eps_index];
  std::vector<Tensor> train_images, test_images;
  LabelBatch train_labels, test_labels;
  for (std::size_t o = 0; o < st.data.objects.size(); ++o) {
    const auto& set = st.data.objects[o];
    const auto& noises = st.noises[o];
    const std::size_t label = set.object.class_id;
    for (std::size_t j = 0; j < set.train.size(); ++j) {
      train_images.push_back(apply_noise(set.views[set.train[j]].image, train_noise(noises, kind, eps_index, j), eps));
      train_labels.push_back(label);
    }
    for (std::size_t j = 0; j < set.test.size(); ++j) {
      const Tensor& view = set.views[set.test[j]].image;
      if (kind == AttackKind::kUniversal) {
        test_images.push_back(apply_noise(view, noises.universal, eps));
        test_labels.push_back(label);
      } else if (cfg.cross_apply) {
        for (std::size_t k = 0; k < set.train.size(); ++k) {
          test_images.push_back(apply_noise(view, train_noise(noises, kind, eps_index, k), eps));
          test_labels.push_back(label);
        }
      } else {
        // One-to-one: the j-th train view's noise goes on the j-th test view.
        const std::size_t k = j % set.train.size();
        test_images.push_back(apply_noise(view, train_noise(noises, kind, eps_index, k), eps));
        test_labels.push_back(label);
      }
    }
  }
  return {{stack(train_images), std::move(train_labels)}, {stack(test_images), std::move(test_labels)}};
}

std::string noise_file(const ViewSet& set, std::optional<std::size_t> view) {
  std::string name = std::string(shape_name(set.object.class_id));
  if (view) name += "_view" + std::to_string(*view);
  return name + ".noise";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

double sq(double v) { return v * v; }

}  // namespace

std::string_view attack_name(AttackKind kind) { return kAttackNames[static_cast<std::size_t>(kind)]; }

std::optional<AttackKind> parse_attack(std::string_view name) {
  for (std::size_t i = 0; i < kAttackNames.size(); ++i) {
    if (name == kAttackNames[i]) return static_cast<AttackKind>(i);
  }
  return std::nullopt;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.epsilons.empty() || !std::is_sorted(cfg.epsilons.begin(), cfg.epsilons.end()) ||
      std::adjacent_find(cfg.epsilons.begin(), cfg.epsilons.end()) != cfg.epsilons.end()) {
    throw std::invalid_argument("experiment: epsilon grid must be strictly ascending");
  }
  if (cfg.epsilons.front() != 0.0) throw std::invalid_argument("experiment: epsilon grid must start at 0");
  if (cfg.attacks.empty()) throw std::invalid_argument("experiment: no attacks selected");
  if (cfg.seeds.empty()) throw std::invalid_argument("experiment: no seeds");
  if (cfg.n_angles < 2) throw std::invalid_argument("experiment: need at least two angles");
  if (cfg.bim_iterations == 0) throw std::invalid_argument("experiment: BIM needs at least one iteration");
  if (cfg.distractor_classes > kMaxDistractorClasses) {
    throw std::invalid_argument("experiment: at most " + std::to_string(kMaxDistractorClasses) +
                                " distractor classes");
  }
  if (cfg.corpus_views_per_class == 0) throw std::invalid_argument("experiment: empty training corpus");
  validate(cfg.universal);
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json attacks = nlohmann::json::array();
  for (auto a : cfg.attacks) attacks.push_back(attack_name(a));
  return {
      {"epsilons", cfg.epsilons},
      {"attacks", attacks},
      {"n_angles", cfg.n_angles},
      {"resolution", {cfg.resolution.height, cfg.resolution.width}},
      {"seeds", cfg.seeds},
      {"universal",
       {{"eps_step", cfg.universal.epsilon},
        {"iterations", cfg.universal.num_iterations},
        {"regularization", cfg.universal.regularization},
        {"reg_sign", cfg.universal.reg_sign == RegularizerSign::kAdd ? "add" : "subtract"},
        {"clip_value", cfg.universal.clip_value},
        {"init_range", cfg.universal.init_range},
        {"seed", cfg.universal.seed}}},
      {"bim", {{"iterations", cfg.bim_iterations}, {"step", cfg.bim_step == BimStep::kRaw ? "raw" : "divided"}}},
      {"cross_apply", cfg.cross_apply},
      {"split", cfg.split == SplitRule::kEvenOdd ? "even-odd" : "seeded-random"},
      {"distractor_classes", cfg.distractor_classes},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"corpus_views_per_class", cfg.corpus_views_per_class}}},
      {"load_model", cfg.load_model ? cfg.load_model->string() : ""},
      {"save_model", cfg.save_model},
      {"out_dir", cfg.out_dir.string()},
      {"save_noises", cfg.save_noises},
      {"save_bitmaps", cfg.save_bitmaps},
      {"dump_views", cfg.dump_views},
      {"bitmap_epsilon", cfg.bitmap_epsilon},
      {"workers", cfg.workers},
  };
}

Metrics evaluate(const Classifier& model, const Tensor& x, const LabelBatch& y) {
  if (y.empty()) throw std::invalid_argument("evaluate: empty batch");
  if (x.rank() != 4 || x.extent(0) != y.size()) throw std::invalid_argument("evaluate: batch/label mismatch");
  const Tensor p = model.forward(x);
  const auto top1 = argmax_rows(p);
  const auto top5 = top_k_rows(p, 5);
  Metrics m;
  std::vector<double> true_prob(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] >= model.num_classes()) throw std::out_of_range("evaluate: label out of range");
    m.top1 += top1[i] == y[i];
    m.top5 += std::find(top5[i].begin(), top5[i].end(), y[i]) != top5[i].end();
    true_prob[i] = p.slice_values(i)[y[i]];
    m.true_prob_mean += true_prob[i];
  }
  const double n = static_cast<double>(y.size());
  m.top1 /= n;
  m.top5 /= n;
  m.true_prob_mean /= n;
  double var = 0.0;
  for (double v : true_prob) var += sq(v - m.true_prob_mean);
  m.true_prob_std = std::sqrt(var / n);
  return m;
}

Classifier train_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto classes = classifier_classes(cfg);
  const Dataset corpus =
      render_training_corpus(classes, cfg.corpus_views_per_class, cfg.resolution, derive_seed(seed, {0xc0}));
  TrainSpec spec = cfg.train;
  spec.seed = seed;
  return train(corpus, spec, classes.size());
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::function<void(std::string_view)>& log) {
  validate(cfg);
  const auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  const bool writes = !cfg.out_dir.empty();
  if (writes) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec || !fs::is_directory(cfg.out_dir)) {
      throw std::runtime_error("output directory " + cfg.out_dir.string() + " is not writable");
    }
  }
  std::optional<Classifier> shared_model;
  if (cfg.load_model) shared_model = load_classifier(*cfg.load_model);

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<SeedState> states(n_seeds);

  // Phase 1: views and a classifier per seed.
  parallel_for(n_seeds, cfg.workers, [&](std::size_t s) {
    const auto seed = cfg.seeds[s];
    auto& st = states[s];
    st.data = build_dataset(default_objects(), cfg.n_angles, cfg.resolution, seed, cfg.split);
    if (shared_model) {
      st.model = *shared_model;
    } else {
      say("seed " + std::to_string(seed) + ": training classifier");
      st.model = train_for_seed(cfg, seed);
    }
  });
  for (const auto& st : states) {
    if (st.model->input_shape() != Shape{cfg.resolution.height, cfg.resolution.width, 3}) {
      throw std::invalid_argument("experiment: model input shape does not match the render resolution");
    }
  }

  // Phase 2: noise generation per (seed, object).
  const std::size_t n_objects = kObjectClassCount;
  for (auto& st : states) st.noises.resize(n_objects);
  say("generating adversarial noise");
  parallel_for(n_seeds * n_objects, cfg.workers, [&](std::size_t task) {
    const std::size_t s = task / n_objects, o = task % n_objects;
    auto& st = states[s];
    st.noises[o] = generate_noises(*st.model, st.data.objects[o], cfg, cfg.seeds[s]);
  });

  // Phase 3: evaluation per (seed, attack, epsilon).
  const std::size_t n_attacks = cfg.attacks.size(), n_eps = cfg.epsilons.size();
  std::vector<std::array<Metrics, 2>> cells(n_seeds * n_attacks * n_eps);
  say("evaluating");
  parallel_for(cells.size(), cfg.workers, [&](std::size_t task) {
    const std::size_t s = task / (n_attacks * n_eps);
    const std::size_t a = (task / n_eps) % n_attacks;
    const std::size_t e = task % n_eps;
    const auto& st = states[s];
    const auto [tr, te] = attacked_views(st, cfg, cfg.attacks[a], e);
    cells[task] = {evaluate(*st.model, tr.images, tr.labels), evaluate(*st.model, te.images, te.labels)};
  });

  ExperimentResult result;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto& st = states[s];
    SeedSummary summary;
    summary.seed = cfg.seeds[s];
    summary.objects = st.data.objects.size();
    const Dataset tr = st.data.train(), te = st.data.test();
    summary.direct_train = evaluate(*st.model, tr.images, tr.labels);
    summary.direct_test = evaluate(*st.model, te.images, te.labels);
    summary.clean_train_top1 = summary.direct_train.top1;
    summary.clean_test_top1 = summary.direct_test.top1;
    result.seeds.push_back(summary);
    for (std::size_t a = 0; a < n_attacks; ++a) {
      for (std::size_t e = 0; e < n_eps; ++e) {
        const auto& cell = cells[(s * n_attacks + a) * n_eps + e];
        const std::string name(attack_name(cfg.attacks[a]));
        result.rows.push_back({name, cfg.epsilons[e], "train", cell[0], cfg.seeds[s]});
        result.rows.push_back({name, cfg.epsilons[e], "test", cell[1], cfg.seeds[s]});
      }
    }
  }

  // Audit and artifact bookkeeping.
  for (auto kind : cfg.attacks) {
    AuditEntry entry{std::string(attack_name(kind)), 0, 0, 0};
    for (const auto& st : states) {
      for (std::size_t o = 0; o < n_objects; ++o) {
        const auto& n = st.noises[o];
        entry.views = st.data.objects[o].train.size();
        switch (kind) {
          case AttackKind::kFgsm:
            entry.generations += 1;
            entry.backward_passes += n.fgsm_calls.backward_passes;
            break;
          case AttackKind::kBim:
            entry.generations += n.bim_generations;
            entry.backward_passes += n.bim_calls.backward_passes;
            result.bim_max_ball_excess = std::max(result.bim_max_ball_excess, n.bim_ball_excess);
            break;
          case AttackKind::kUniversal:
            entry.generations += 1;
            entry.backward_passes += n.universal_calls.backward_passes;
            break;
        }
      }
    }
    result.audit.push_back(entry);
  }

  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto& st = states[s];
    for (auto kind : cfg.attacks) {
      for (std::size_t e = 0; e < n_eps; ++e) {
        const double eps = cfg.epsilons[e];
        if (eps == 0.0) continue;  // the clean baseline carries no noise
        for (std::size_t o = 0; o < n_objects; ++o) {
          const auto& set = st.data.objects[o];
          const std::size_t count = kind == AttackKind::kUniversal ? 1 : set.train.size();
          result.artifacts.push_back({std::string(attack_name(kind)), cfg.seeds[s], eps, set.object.class_id, count});
          if (!writes || !cfg.save_noises) continue;
          const fs::path dir = cfg.out_dir / "noises" / ("seed" + std::to_string(cfg.seeds[s])) /
                               std::string(attack_name(kind)) / eps_tag(eps);
          fs::create_directories(dir);
          for (std::size_t j = 0; j < count; ++j) {
            Perturbation p;
            p.noise = scale(train_noise(st.noises[o], kind, e, j), eps);
            p.meta.attack = std::string(attack_name(kind));
            p.meta.epsilon = eps;
            p.meta.seed = cfg.seeds[s];
            p.meta.views = kind == AttackKind::kUniversal ? set.train.size() : 1;
            p.meta.iterations = kind == AttackKind::kFgsm  ? 1
                                : kind == AttackKind::kBim ? cfg.bim_iterations
                                                           : cfg.universal.num_iterations;
            if (kind == AttackKind::kUniversal) {
              p.meta.regularization = st.noises[o].universal_raw.meta.regularization;
              p.meta.clip_value = st.noises[o].universal_raw.meta.clip_value;
            }
            const auto path = dir / noise_file(set, kind == AttackKind::kUniversal
                                                              ? std::nullopt
                                                              : std::optional<std::size_t>(j));
            save_perturbation(path, p);
            result.written_files.push_back(path);
          }
        }
      }
    }
  }

  if (writes) {
    const auto csv = cfg.out_dir / "results.csv";
    write_text(csv, to_csv(result.rows));
    result.written_files.push_back(csv);
    const auto json = cfg.out_dir / "results.json";
    write_text(json, to_json(result, cfg).dump(2) + "\n");
    result.written_files.push_back(json);

    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& st = states[s];
      const std::string seed_tag = "seed" + std::to_string(cfg.seeds[s]);
      if (cfg.save_model && !shared_model) {
        const auto path = cfg.out_dir / ("model_" + seed_tag + ".bin");
        save_classifier(path, *st.model);
        result.written_files.push_back(path);
      }
      if (cfg.dump_views) {
        for (const auto& set : st.data.objects) {
          mvadv::dump_views(set, cfg.out_dir / "views" / seed_tag, std::string(shape_name(set.object.class_id)));
        }
      }
    }
    if (cfg.save_bitmaps) {
      // Clean | noise x10 around mid-gray | adversarial, on the first test view.
      const auto& st = states.front();
      const auto e_it = std::lower_bound(cfg.epsilons.begin(), cfg.epsilons.end(), cfg.bitmap_epsilon);
      const std::size_t e = e_it == cfg.epsilons.end() ? n_eps - 1 : static_cast<std::size_t>(e_it - cfg.epsilons.begin());
      const double eps = cfg.epsilons[e];
      const fs::path dir = cfg.out_dir / "bitmaps";
      fs::create_directories(dir);
      for (std::size_t o = 0; o < n_objects; ++o) {
        const auto& set = st.data.objects[o];
        const Tensor& clean = set.views[set.test.front()].image;
        for (auto kind : cfg.attacks) {
          const Tensor noise = scale(train_noise(st.noises[o], kind, e, 0), eps);
          const Tensor adv = apply_noise(clean, noise, 1.0);
          const auto path = dir / (std::string(shape_name(set.object.class_id)) + "_" +
                                   std::string(attack_name(kind)) + "_" + eps_tag(eps) + ".ppm");
          write_ppm(path, hconcat({clean, visualize_noise(noise, 10.0), adv}));
          result.written_files.push_back(path);
        }
      }
    }
  }
  return result;
}

std::vector<AuditEntry> gradient_call_audit(const ExperimentResult& result) { return result.audit; }

std::vector<AuditEntry> audit_object(const Classifier& model, const ViewSet& object, const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentConfig one = cfg;
  // A single nonzero epsilon gives exactly one BIM generation.
  one.epsilons = {0.0, cfg.epsilons.back() > 0.0 ? cfg.epsilons.back() : 0.1};
  const ObjectNoises n = generate_noises(model, object, one, cfg.seeds.front());
  std::vector<AuditEntry> out;
  for (auto kind : cfg.attacks) {
    const std::size_t views = object.train.size();
    switch (kind) {
      case AttackKind::kFgsm: out.push_back({"fgsm", 1, n.fgsm_calls.backward_passes, views}); break;
      case AttackKind::kBim: out.push_back({"bim", n.bim_generations, n.bim_calls.backward_passes, views}); break;
      case AttackKind::kUniversal:
        out.push_back({"universal", 1, n.universal_calls.backward_passes, views});
        break;
    }
  }
  return out;
}

std::string to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "attack,epsilon,split,top1,top5,true_prob_mean,true_prob_std,seed\n";
  for (const auto& r : rows) {
    out += r.attack + ',' + fixed6(r.epsilon) + ',' + r.split + ',' + fixed6(r.metrics.top1) + ',' +
           fixed6(r.metrics.top5) + ',' + fixed6(r.metrics.true_prob_mean) + ',' + fixed6(r.metrics.true_prob_std) +
           ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

nlohmann::json to_json(const ExperimentResult& result, const ExperimentConfig& cfg) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"attack", r.attack},
                    {"epsilon", r.epsilon},
                    {"split", r.split},
                    {"top1", r.metrics.top1},
                    {"top5", r.metrics.top5},
                    {"true_prob_mean", r.metrics.true_prob_mean},
                    {"true_prob_std", r.metrics.true_prob_std},
                    {"seed", r.seed}});
  }
  nlohmann::json audit = nlohmann::json::array();
  for (const auto& a : result.audit) {
    audit.push_back({{"attack", a.attack},
                     {"generations", a.generations},
                     {"backward_passes", a.backward_passes},
                     {"backward_passes_per_object", a.per_generation()},
                     {"train_views_per_object", a.views}});
  }
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : result.seeds) {
    seeds.push_back({{"seed", s.seed}, {"clean_train_top1", s.clean_train_top1}, {"clean_test_top1", s.clean_test_top1}});
  }
  // Published top-1 accuracies of a large ImageNet classifier on renders of
  // real objects over the same grid. Only the trends compare with the rows.
  const nlohmann::json reference = {
      {"epsilon", {0.0, 0.005, 0.01, 0.03, 0.05, 0.10, 0.15, 0.30, 0.50}},
      {"train",
       {{"fgsm", {0.70, 0.13, 0.11, 0.18, 0.19, 0.21, 0.08, 0.00, 0.00}},
        {"bim", {0.70, 0.65, 0.62, 0.62, 0.57, 0.39, 0.35, 0.06, 0.00}},
        {"universal", {0.70, 0.30, 0.27, 0.35, 0.34, 0.28, 0.09, 0.00, 0.00}}}},
      {"test",
       {{"fgsm", {0.65, 0.56, 0.62, 0.52, 0.36, 0.19, 0.04, 0.00, 0.00}},
        {"bim", {0.65, 0.57, 0.56, 0.61, 0.56, 0.43, 0.32, 0.02, 0.00}},
        {"universal", {0.65, 0.47, 0.51, 0.49, 0.38, 0.31, 0.09, 0.00, 0.00}}}},
  };
  return {{"config", to_json(cfg)},
          {"rows", rows},
          {"gradient_call_audit", audit},
          {"seeds", seeds},
          {"bim_max_ball_excess", result.bim_max_ball_excess},
          {"reference_accuracy", reference}};
}

std::vector<Metrics> seed_mean(const ExperimentResult& result, std::string_view attack, std::string_view split,
                               const std::vector<double>& epsilons) {
  std::vector<Metrics> out(epsilons.size());
  std::vector<std::size_t> counts(epsilons.size(), 0);
  for (const auto& r : result.rows) {
    if (r.attack != attack || r.split != split) continue;
    const auto it = std::find(epsilons.begin(), epsilons.end(), r.epsilon);
    if (it == epsilons.end()) continue;
    const auto e = static_cast<std::size_t>(it - epsilons.begin());
    out[e].top1 += r.metrics.top1;
    out[e].top5 += r.metrics.top5;
    out[e].true_prob_mean += r.metrics.true_prob_mean;
    out[e].true_prob_std += r.metrics.true_prob_std;
    ++counts[e];
  }
  for (std::size_t e = 0; e < out.size(); ++e) {
    if (counts[e] == 0) continue;
    const double n = static_cast<double>(counts[e]);
    out[e].top1 /= n;
    out[e].top5 /= n;
    out[e].true_prob_mean /= n;
    out[e].true_prob_std /= n;
  }
  return out;
}

}  // namespace mvadv

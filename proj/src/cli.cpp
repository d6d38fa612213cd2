#include "mvadv/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mvadv/attacks.hpp"
#include "mvadv/harness.hpp"
#include "mvadv/image_io.hpp"
#include "mvadv/renderer.hpp"

namespace mvadv {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kOutDirEnv = "MVADV_OUT_DIR";

// Flag values that parse but do not form a usable configuration.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string out_dir;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> eps;
  std::vector<double> paper_eps;
  std::string method = "universal";
  std::string object;
  std::string target;
  double eps_step = 0.01;
  std::optional<std::size_t> iters;
  std::optional<double> reg;
  std::string reg_sign = "add";
  double clip_value = 1.0;
  double init_range = 0.01;
  std::uint64_t seed = 1;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t n_angles = 10;
  std::size_t resolution = 64;
  std::size_t bim_iters = 10;
  bool bim_raw_step = false;
  bool cross_apply = false;
  bool random_split = false;
  std::size_t distractors = 0;
  bool dump_views = false;
  bool save_model = false;
  std::string load_model;
  bool save_noises = false;
  bool bitmaps = false;
  double lr = 0.02;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  std::size_t corpus = 32;
  std::vector<std::string> methods{"fgsm", "bim", "universal"};
};

std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env && *env ? env : "mvadv-out";
}

void add_output(CLI::App* app, Options& o) {
  app->add_option("--out-dir", o.out_dir, std::string("output directory (default $") + kOutDirEnv + " or ./mvadv-out)");
}

void add_scene(CLI::App* app, Options& o) {
  app->add_option("--n-angles", o.n_angles, "views rendered per object")->check(CLI::Range(2, 1000));
  app->add_option("--resolution", o.resolution, "square render size in pixels")->check(CLI::Range(8, 512));
  app->add_flag("--random-split", o.random_split, "seeded random train/test split instead of even/odd");
  app->add_flag("--dump-views", o.dump_views, "write rendered views as PPM files");
}

void add_model(CLI::App* app, Options& o) {
  app->add_option("--distractors", o.distractors, "extra classifier-only classes")->check(CLI::Range(0, 3));
  app->add_option("--lr", o.lr, "training learning rate")->check(CLI::PositiveNumber);
  app->add_option("--epochs", o.epochs, "training epochs")->check(CLI::Range(1, 1000));
  app->add_option("--batch", o.batch, "training batch size")->check(CLI::Range(1, 4096));
  app->add_option("--corpus", o.corpus, "training views per class")->check(CLI::Range(1, 100000));
  app->add_flag("--save-model", o.save_model, "write trained weights under the output directory");
  app->add_option("--load-model", o.load_model, "use saved weights instead of training")->check(CLI::ExistingFile);
}

void add_universal(CLI::App* app, Options& o) {
  app->add_option("--eps-step", o.eps_step, "universal noise update step")->check(CLI::NonNegativeNumber);
  app->add_option("--iters", o.iters, "universal noise iterations");
  app->add_option("--reg", o.reg, "norm regulariser weight")->check(CLI::NonNegativeNumber);
  app->add_option("--reg-sign", o.reg_sign, "add or subtract the regulariser")
      ->check(CLI::IsMember({"add", "subtract"}));
  app->add_option("--clip-value", o.clip_value, "gradient and noise clip bound")->check(CLI::PositiveNumber);
  app->add_option("--init-range", o.init_range, "half-width of the uniform initial noise")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--bim-iters", o.bim_iters, "BIM iterations")->check(CLI::Range(1, 10000));
  app->add_flag("--bim-raw-step", o.bim_raw_step, "BIM steps by the full epsilon each iteration");
}

void add_epsilons(CLI::App* app, Options& o) {
  auto* e = app->add_option("--eps", o.eps, "epsilon values, fraction of the pixel range")->delimiter(',');
  auto* p = app->add_option("--paper-eps", o.paper_eps, "epsilon values on a 0-100 scale")->delimiter(',');
  e->excludes(p);
}

std::vector<double> epsilons(const Options& o) {
  if (!o.paper_eps.empty()) {
    std::vector<double> out;
    for (double v : o.paper_eps) out.push_back(v / 100.0);
    return out;
  }
  return o.eps;
}

// `single` selects the stand-alone AttackConfig defaults for the universal
// noise instead of the experiment-level ones.
ExperimentConfig make_config(const Options& o, bool single = false) {
  ExperimentConfig cfg;
  if (single) cfg.universal = AttackConfig{};
  if (auto e = epsilons(o); !e.empty() && !single) cfg.epsilons = e;
  cfg.attacks.clear();
  for (const auto& m : o.methods) {
    auto kind = parse_attack(m);
    if (!kind) throw UsageError("unknown attack '" + m + "'");
    cfg.attacks.push_back(*kind);
  }
  cfg.n_angles = o.n_angles;
  cfg.resolution = {o.resolution, o.resolution};
  cfg.seeds = o.seeds;
  cfg.universal.epsilon = o.eps_step;
  if (o.iters) cfg.universal.num_iterations = *o.iters;
  if (o.reg) cfg.universal.regularization = *o.reg;
  cfg.universal.reg_sign = o.reg_sign == "subtract" ? RegularizerSign::kSubtract : RegularizerSign::kAdd;
  cfg.universal.clip_value = o.clip_value;
  cfg.universal.init_range = o.init_range;
  cfg.universal.seed = o.seed;
  cfg.bim_iterations = o.bim_iters;
  cfg.bim_step = o.bim_raw_step ? BimStep::kRaw : BimStep::kDivided;
  cfg.cross_apply = o.cross_apply;
  cfg.split = o.random_split ? SplitRule::kSeededRandom : SplitRule::kEvenOdd;
  cfg.distractor_classes = o.distractors;
  cfg.train = {o.lr, o.epochs, o.batch, 0};
  cfg.corpus_views_per_class = o.corpus;
  if (!o.load_model.empty()) cfg.load_model = o.load_model;
  cfg.save_model = o.save_model;
  cfg.out_dir = o.out_dir.empty() ? default_out_dir() : o.out_dir;
  cfg.save_noises = o.save_noises;
  cfg.save_bitmaps = o.bitmaps;
  cfg.dump_views = o.dump_views;
  cfg.workers = o.workers;
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::size_t object_id(const std::string& name) {
  const auto id = parse_object_name(name);
  if (!id || *id >= kObjectClassCount) throw UsageError("unknown object '" + name + "'");
  return *id;
}

json metrics_json(const Metrics& m) {
  return {{"top1", m.top1}, {"top5", m.top5}, {"true_prob_mean", m.true_prob_mean}, {"true_prob_std", m.true_prob_std}};
}

std::string num(double v, const char* fmt = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

Classifier obtain_model(const ExperimentConfig& cfg, std::uint64_t seed, std::ostream& err) {
  if (cfg.load_model) return load_classifier(*cfg.load_model);
  err << "training classifier (seed " << seed << ")\n";
  Classifier model = train_for_seed(cfg, seed);
  if (cfg.save_model) {
    fs::create_directories(cfg.out_dir);
    const auto path = cfg.out_dir / ("model_seed" + std::to_string(seed) + ".bin");
    save_classifier(path, model);
    err << "wrote " << path.string() << '\n';
  }
  return model;
}

int cmd_render(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = make_config(o);
  std::vector<std::size_t> ids;
  if (o.object.empty()) {
    for (std::size_t i = 0; i < kObjectClassCount; ++i) ids.push_back(i);
  } else {
    ids.push_back(object_id(o.object));
  }
  json resolved = {{"subcommand", "render"}, {"seed", o.seed}, {"n_angles", cfg.n_angles},
                   {"resolution", o.resolution}, {"split", o.random_split ? "seeded-random" : "even-odd"},
                   {"out_dir", cfg.out_dir.string()}};
  out << resolved.dump(2) << '\n';
  const fs::path dir = cfg.out_dir / "views";
  for (auto id : ids) {
    const ViewSet set = render_views(default_object(id), cfg.n_angles, cfg.resolution, o.seed, cfg.split);
    dump_views(set, dir, std::string(shape_name(id)));
    err << "wrote " << set.views.size() << " views of " << shape_name(id) << " to " << dir.string() << '\n';
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = make_config(o);
  cfg.save_model = true;
  cfg.load_model.reset();
  json resolved = to_json(cfg);
  resolved["subcommand"] = "train";
  resolved["seed"] = o.seed;
  out << resolved.dump(2) << '\n';
  const Classifier model = obtain_model(cfg, o.seed, err);
  const MultiViewDataset data = build_dataset(default_objects(), cfg.n_angles, cfg.resolution, o.seed, cfg.split);
  const Dataset tr = data.train(), te = data.test();
  json report = {{"clean_train", metrics_json(evaluate(model, tr.images, tr.labels))},
                 {"clean_test", metrics_json(evaluate(model, te.images, te.labels))}};
  out << report.dump(2) << '\n';
  return 0;
}

int cmd_attack(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = make_config(o, true);
  const std::size_t id = object_id(o.object.empty() ? "sphere" : o.object);
  const bool targeted = o.method == "fgsm-targeted";
  std::optional<std::size_t> target;
  if (targeted) {
    if (o.target.empty()) throw UsageError("fgsm-targeted needs --target");
    target = object_id(o.target);
  }
  const auto eps = epsilons(o);
  const std::vector<double> apply_eps = eps.empty() ? std::vector<double>{0.03} : eps;

  json resolved = to_json(cfg);
  resolved.erase("epsilons");
  resolved.erase("attacks");
  resolved["subcommand"] = "attack";
  resolved["method"] = o.method;
  resolved["object"] = shape_name(id);
  resolved["seed"] = o.seed;
  resolved["apply_epsilons"] = apply_eps;
  if (target) resolved["target"] = shape_name(*target);
  out << resolved.dump(2) << '\n';

  const Classifier model = obtain_model(cfg, o.seed, err);
  const ViewSet set = render_views(default_object(id), cfg.n_angles, cfg.resolution, o.seed, cfg.split);
  if (cfg.dump_views) dump_views(set, cfg.out_dir / "views", std::string(shape_name(id)));
  const Tensor x_train = set.train_images(), x_test = set.test_images();
  const LabelBatch y_train(set.train.size(), id), y_test(set.test.size(), id);
  const fs::path dir = cfg.out_dir / "noises";
  fs::create_directories(dir);
  const std::string stem = std::string(shape_name(id)) + "_" + o.method;

  json report = {{"clean_train", metrics_json(evaluate(model, x_train, y_train))},
                 {"clean_test", metrics_json(evaluate(model, x_test, y_test))}};
  GradientCounter counter;
  json cells = json::array();

  if (o.method == "universal") {
    AttackConfig ucfg = cfg.universal;
    const Perturbation p = universal_perturbation(model, x_train, y_train, ucfg, &counter);
    const auto path = dir / (stem + ".noise");
    save_perturbation(path, p);
    err << "wrote " << path.string() << '\n';
    const double peak = linf_norm(p.noise);
    const Tensor direction = peak > 0.0 ? scale(p.noise, 1.0 / peak) : p.noise;
    report["noise_linf"] = peak;
    for (double e : apply_eps) {
      cells.push_back({{"epsilon", e},
                       {"train", metrics_json(evaluate(model, apply_noise(x_train, direction, e), y_train))},
                       {"test", metrics_json(evaluate(model, apply_noise(x_test, direction, e), y_test))}});
      if (o.bitmaps) {
        const Tensor n = scale(direction, e);
        const Tensor clean = set.views[set.test.front()].image;
        const auto bmp = dir / (stem + "_eps" + num(e, "%.4f") + ".ppm");
        write_ppm(bmp, hconcat({clean, visualize_noise(n, 10.0), apply_noise(clean, n, 1.0)}));
      }
    }
  } else if (o.method == "fgsm" || o.method == "bim" || targeted) {
    for (double e : apply_eps) {
      const LabelBatch y_gen = targeted ? LabelBatch(y_train.size(), *target) : y_train;
      Tensor adv;
      if (o.method == "bim") {
        adv = bim(model, x_train, y_gen, e, cfg.bim_iterations, cfg.bim_step, &counter);
      } else if (targeted) {
        adv = fgsm_targeted(model, x_train, y_gen, e, &counter);
      } else {
        adv = fgsm(model, x_train, y_gen, e, &counter);
      }
      const Tensor delta = sub(adv, x_train);
      std::vector<Tensor> test_adv;
      for (std::size_t j = 0; j < set.test.size(); ++j) {
        const Tensor nj = delta.slice(j % set.train.size());
        test_adv.push_back(apply_noise(x_test.slice(j), nj, 1.0));
        Perturbation p{nj, {o.method, e, o.method == "bim" ? cfg.bim_iterations : 1, o.seed, 0.0, 0.0, 1}};
        save_perturbation(dir / (stem + "_eps" + num(e, "%.4f") + "_view" + std::to_string(j) + ".noise"), p);
      }
      json cell = {{"epsilon", e},
                   {"train", metrics_json(evaluate(model, adv, y_train))},
                   {"test", metrics_json(evaluate(model, stack(test_adv), y_test))}};
      if (target) {
        const auto pred = argmax_rows(model.forward(adv));
        double hits = 0.0;
        for (auto p : pred) hits += p == *target;
        cell["target_hit_rate"] = hits / static_cast<double>(pred.size());
      }
      cells.push_back(cell);
      if (o.bitmaps) {
        const Tensor clean = x_train.slice(0);
        const auto bmp = dir / (stem + "_eps" + num(e, "%.4f") + ".ppm");
        write_ppm(bmp, hconcat({clean, visualize_noise(delta.slice(0), 10.0), adv.slice(0)}));
      }
    }
    err << "wrote noises to " << dir.string() << '\n';
  } else {
    throw UsageError("unknown method '" + o.method + "'");
  }
  report["attacked"] = cells;
  report["backward_passes"] = counter.backward_passes;
  out << report.dump(2) << '\n';
  return 0;
}

int cmd_experiment(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = make_config(o);
  json resolved = to_json(cfg);
  resolved["subcommand"] = "experiment";
  out << resolved.dump(2) << '\n';
  const ExperimentResult result = run_experiment(cfg, [&](std::string_view msg) { err << msg << '\n'; });

  for (const auto& s : result.seeds) {
    out << "seed " << s.seed << ": clean train top-1 " << num(s.clean_train_top1) << ", clean test top-1 "
        << num(s.clean_test_top1) << '\n';
  }
  out << "mean top-1 over seeds (train / test)\n";
  out << "epsilon ";
  for (auto a : cfg.attacks) out << "  " << attack_name(a) << "         ";
  out << '\n';
  std::vector<std::vector<Metrics>> train_cols, test_cols;
  for (auto a : cfg.attacks) {
    train_cols.push_back(seed_mean(result, attack_name(a), "train", cfg.epsilons));
    test_cols.push_back(seed_mean(result, attack_name(a), "test", cfg.epsilons));
  }
  for (std::size_t e = 0; e < cfg.epsilons.size(); ++e) {
    out << num(cfg.epsilons[e]) << "   ";
    for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
      out << "  " << num(train_cols[a][e].top1) << " / " << num(test_cols[a][e].top1);
    }
    out << '\n';
  }
  out << "backward passes per noise generation:";
  for (const auto& a : gradient_call_audit(result)) out << ' ' << a.attack << '=' << num(a.per_generation(), "%.1f");
  out << "\nresults in " << (cfg.out_dir / "results.csv").string() << '\n';
  return 0;
}

int cmd_audit(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = make_config(o, true);
  const std::size_t id = object_id(o.object.empty() ? "sphere" : o.object);
  cfg.seeds = {o.seed};
  json resolved = to_json(cfg);
  resolved["subcommand"] = "audit";
  resolved["object"] = shape_name(id);
  out << resolved.dump(2) << '\n';
  const Classifier model = obtain_model(cfg, o.seed, err);
  const ViewSet set = render_views(default_object(id), cfg.n_angles, cfg.resolution, o.seed, cfg.split);
  json rows = json::array();
  for (const auto& a : audit_object(model, set, cfg)) {
    rows.push_back({{"attack", a.attack},
                    {"train_views", a.views},
                    {"generations", a.generations},
                    {"backward_passes", a.backward_passes}});
  }
  out << json{{"gradient_call_audit", rows}}.dump(2) << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multi-view adversarial perturbation toolkit", "mvadv"};
  app.require_subcommand(1);

  auto* render = app.add_subcommand("render", "render object views to PPM files");
  add_output(render, o);
  add_scene(render, o);
  render->add_option("--object", o.object, "object name or alias (default: all five)");
  render->add_option("--seed", o.seed, "view jitter seed");

  auto* train_cmd = app.add_subcommand("train", "train a classifier and save its weights");
  add_output(train_cmd, o);
  add_scene(train_cmd, o);
  add_model(train_cmd, o);
  train_cmd->add_option("--seed", o.seed, "training and view seed");

  auto* attack = app.add_subcommand("attack", "attack one object and write its noise files");
  add_output(attack, o);
  add_scene(attack, o);
  add_model(attack, o);
  add_universal(attack, o);
  add_epsilons(attack, o);
  attack->add_option("--method", o.method, "fgsm, fgsm-targeted, bim or universal")
      ->check(CLI::IsMember({"fgsm", "fgsm-targeted", "bim", "universal"}));
  attack->add_option("--object", o.object, "object name or alias")->required();
  attack->add_option("--target", o.target, "target object for fgsm-targeted");
  attack->add_option("--seed", o.seed, "model, view and noise seed");
  attack->add_flag("--bitmaps", o.bitmaps, "write clean | noise | adversarial bitmaps");

  auto* experiment = app.add_subcommand("experiment", "run the full multi-view evaluation protocol");
  add_output(experiment, o);
  add_scene(experiment, o);
  add_model(experiment, o);
  add_universal(experiment, o);
  add_epsilons(experiment, o);
  experiment->add_option("--seeds", o.seeds, "experiment seeds")->delimiter(',');
  experiment->add_option("--methods", o.methods, "attacks to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"fgsm", "bim", "universal"}));
  experiment->add_option("--seed", o.seed, "extra salt for the universal noise initialisation");
  experiment->add_option("--workers", o.workers, "worker threads")->check(CLI::Range(1, 256));
  experiment->add_flag("--cross-apply", o.cross_apply, "apply every train-view noise to every test view");
  experiment->add_flag("--save-noises", o.save_noises, "write every applied noise tensor");
  experiment->add_flag("--bitmaps", o.bitmaps, "write clean | noise | adversarial bitmaps");

  auto* audit = app.add_subcommand("audit", "count backward passes per attack for one object");
  add_output(audit, o);
  add_scene(audit, o);
  add_model(audit, o);
  add_universal(audit, o);
  audit->add_option("--object", o.object, "object name or alias (default sphere)");
  audit->add_option("--seed", o.seed, "model and view seed");

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*render) return cmd_render(o, out, err);
    if (*train_cmd) return cmd_train(o, out, err);
    if (*attack) return cmd_attack(o, out, err);
    if (*experiment) return cmd_experiment(o, out, err);
    if (*audit) return cmd_audit(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mvadv

#include "mvadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mvadv/image_io.hpp"
#include "mvadv/random.hpp"

namespace mvadv {

namespace {

constexpr const char* kPerturbationTag = "mvadv-perturbation 1";

void check_pixels(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0 || v > 1.0) throw std::invalid_argument("attack: input pixels must lie in [0, 1]");
  }
}

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack: epsilon must be >= 0");
}

void check_batch(const Tensor& x, const LabelBatch& y) {
  if (x.rank() != 4) throw std::invalid_argument("attack: expected an N x H x W x C batch");
  if (x.extent(0) != y.size()) throw std::invalid_argument("attack: label count does not match batch size");
}

// Signed FGSM step: clip(x + direction * epsilon * sign(grad), 0, 1).
Tensor signed_step(const Classifier& model, const Tensor& x, const LabelBatch& y, double epsilon, double direction,
                   GradientCounter* counter) {
  check_batch(x, y);
  check_epsilon(epsilon);
  check_pixels(x);
  const Tensor s = gradient_sign(model, x, y, counter);
  return clip(axpy(x, direction * epsilon, s), 0.0, 1.0);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void validate(const AttackConfig& cfg) {
  check_epsilon(cfg.epsilon);
  if (!(cfg.regularization >= 0.0)) throw std::invalid_argument("attack config: regularization must be >= 0");
  if (!(cfg.clip_value > 0.0)) throw std::invalid_argument("attack config: clip_value must be > 0");
  if (!(cfg.init_range >= 0.0)) throw std::invalid_argument("attack config: init_range must be >= 0");
}

Tensor gradient_sign(const Classifier& model, const Tensor& x, const LabelBatch& y, GradientCounter* counter) {
  check_batch(x, y);
  std::vector<double> out(x.size());
  const std::size_t per_image = x.slice_size();
  for (std::size_t i = 0; i < x.extent(0); ++i) {
    const Tensor xi = gather(x, std::vector<std::size_t>{i});
    const Tensor g = sign(model.input_gradient(xi, {y[i]}));
    if (counter) ++counter->backward_passes;
    std::copy(g.values().begin(), g.values().end(), out.begin() + static_cast<std::ptrdiff_t>(i * per_image));
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor fgsm(const Classifier& model, const Tensor& x, const LabelBatch& y, double epsilon, GradientCounter* counter) {
  return signed_step(model, x, y, epsilon, +1.0, counter);
}

Tensor fgsm_targeted(const Classifier& model, const Tensor& x, const LabelBatch& y_target, double epsilon,
                     GradientCounter* counter) {
  return signed_step(model, x, y_target, epsilon, -1.0, counter);
}

Tensor bim(const Classifier& model, const Tensor& x, const LabelBatch& y, double epsilon,
           std::size_t num_iterations, BimStep step, GradientCounter* counter) {
  check_batch(x, y);
  check_epsilon(epsilon);
  check_pixels(x);
  if (num_iterations == 0) throw std::invalid_argument("bim: num_iterations must be >= 1");
  const double alpha = step == BimStep::kRaw ? epsilon : epsilon / static_cast<double>(num_iterations);

  // Feasible set: the epsilon ball around x intersected with [0, 1].
  const Tensor lo = clip(axpy(x, -1.0, Tensor(x.shape(), epsilon)), 0.0, 1.0);
  const Tensor hi = clip(axpy(x, 1.0, Tensor(x.shape(), epsilon)), 0.0, 1.0);

  Tensor adv = x;
  for (std::size_t it = 0; it < num_iterations; ++it) {
    const Tensor s = gradient_sign(model, adv, y, counter);
    adv = clip(axpy(adv, alpha, s), lo, hi);
  }
  return adv;
}

Tensor noise_gradient(const Classifier& model, const Tensor& x, const LabelBatch& y, const Tensor& delta,
                      double regularization, RegularizerSign reg_sign) {
  check_batch(x, y);
  const Tensor adv = broadcast_add(x, delta);
  // d/d(delta) of J(x_i + delta) is the input gradient of view i, so the
  // shared-noise gradient is their sum over the batch.
  Tensor g = sum_batch(model.input_gradient(adv, y));
  const double norm = l2_norm(delta);
  if (regularization > 0.0 && norm > 0.0) {
    const double s = reg_sign == RegularizerSign::kAdd ? 1.0 : -1.0;
    g = axpy(g, s * regularization / norm, delta);
  }
  return g;
}

Tensor initial_noise(const Shape& image_shape, double range, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x0153}));
  std::vector<double> data(shape_volume(image_shape));
  for (auto& v : data) v = uniform(rng, -range, range);
  return Tensor(image_shape, std::move(data));
}

Perturbation universal_perturbation(const Classifier& model, const Tensor& x_train, const LabelBatch& y,
                                    const AttackConfig& cfg, GradientCounter* counter) {
  validate(cfg);
  check_batch(x_train, y);
  if (x_train.extent(0) == 0) throw std::invalid_argument("universal_perturbation: empty batch");

  const Shape image_shape(x_train.shape().begin() + 1, x_train.shape().end());
  Tensor delta = initial_noise(image_shape, cfg.init_range, cfg.seed);
  for (std::size_t it = 0; it < cfg.num_iterations; ++it) {
    Tensor g = noise_gradient(model, x_train, y, delta, cfg.regularization, cfg.reg_sign);
    if (counter) ++counter->backward_passes;
    g = clip(g, -cfg.clip_value, cfg.clip_value);
    delta = axpy(delta, cfg.epsilon, sign(g));
    delta = clip(delta, -cfg.clip_value, cfg.clip_value);
  }
  return {std::move(delta),
          {"universal", cfg.epsilon, cfg.num_iterations, cfg.seed, cfg.regularization, cfg.clip_value,
           x_train.extent(0)}};
}

Tensor apply_noise(const Tensor& x, const Tensor& noise, double epsilon) {
  check_epsilon(epsilon);
  if (x.rank() == noise.rank()) {
    if (x.shape() != noise.shape()) throw std::invalid_argument("apply: noise shape does not match the image");
    return clip(axpy(x, epsilon, noise), 0.0, 1.0);
  }
  return clip(broadcast_add(x, scale(noise, epsilon)), 0.0, 1.0);
}

Tensor apply_perturbation(const Tensor& x, const Perturbation& p, double epsilon) {
  return apply_noise(x, p.noise, epsilon);
}

void save_perturbation(const std::filesystem::path& path, const Perturbation& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << kPerturbationTag << '\n'
      << "attack " << p.meta.attack << '\n'
      << "epsilon " << format_double(p.meta.epsilon) << '\n'
      << "iterations " << p.meta.iterations << '\n'
      << "seed " << p.meta.seed << '\n'
      << "regularization " << format_double(p.meta.regularization) << '\n'
      << "clip_value " << format_double(p.meta.clip_value) << '\n'
      << "views " << p.meta.views << '\n'
      << "end\n";
  write_tensor(out, p.noise);
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPerturbationTag) {
    throw std::runtime_error("noise file: unrecognised format tag");
  }
  Perturbation p;
  while (std::getline(in, line) && line != "end") {
    std::istringstream kv(line);
    std::string key;
    kv >> key;
    if (key == "attack") kv >> p.meta.attack;
    else if (key == "epsilon") kv >> p.meta.epsilon;
    else if (key == "iterations") kv >> p.meta.iterations;
    else if (key == "seed") kv >> p.meta.seed;
    else if (key == "regularization") kv >> p.meta.regularization;
    else if (key == "clip_value") kv >> p.meta.clip_value;
    else if (key == "views") kv >> p.meta.views;
    else throw std::runtime_error("noise file: unknown key '" + key + "'");
  }
  if (line != "end") throw std::runtime_error("noise file: missing header terminator");
  p.noise = read_tensor(in);
  return p;
}

void export_noise_bitmap(const std::filesystem::path& path, const Tensor& noise, double gain) {
  write_ppm(path, visualize_noise(noise, gain));
}

}  // namespace mvadv

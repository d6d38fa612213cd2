#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mvadv/classifier.hpp"
#include "mvadv/tensor.hpp"

namespace mvadv {

/// Counts backward passes issued by an attack. A batched gradient call over
/// several views counts once; per-view calls count once per view.
struct GradientCounter {
  std::size_t backward_passes = 0;
};

/// Direction in which the norm regulariser enters the ascended loss.
/// kAdd ascends loss + lambda * ||delta||; kSubtract ascends
/// loss - lambda * ||delta|| (a conventional penalty).
enum class RegularizerSign { kAdd, kSubtract };

/// BIM step size: epsilon / iterations, or the full epsilon every step.
enum class BimStep { kDivided, kRaw };

struct AttackConfig {
  double epsilon = 0.01;  // step size of the noise update, fraction of range
  std::size_t num_iterations = 1;
  double regularization = 1.0;
  double clip_value = 1.0;
  std::uint64_t seed = 0;
  RegularizerSign reg_sign = RegularizerSign::kAdd;
  double init_range = 0.01;  // delta_0 ~ U(-init_range, init_range)
};

void validate(const AttackConfig& cfg);

struct PerturbationMeta {
  std::string attack;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  double regularization = 0.0;
  double clip_value = 0.0;
  std::size_t views = 0;
};

/// One noise tensor shaped like a single image (H x W x C).
struct Perturbation {
  Tensor noise;
  PerturbationMeta meta;
};

/// sign(grad_x J(x_i, y_i)) for every image, one backward pass per image.
Tensor gradient_sign(const Classifier& model, const Tensor& x, const LabelBatch& y,
                     GradientCounter* counter = nullptr);

/// clip(x + epsilon * sign(grad_x J(x, y)), 0, 1), independently per image.
Tensor fgsm(const Classifier& model, const Tensor& x, const LabelBatch& y, double epsilon,
            GradientCounter* counter = nullptr);

/// clip(x - epsilon * sign(grad_x J(x, y_target)), 0, 1): descends the loss
/// of the target label.
Tensor fgsm_targeted(const Classifier& model, const Tensor& x, const LabelBatch& y_target, double epsilon,
                     GradientCounter* counter = nullptr);

/// Iterated FGSM; after every step the image is clamped to the L-inf ball of
/// radius epsilon around x and to [0, 1].
Tensor bim(const Classifier& model, const Tensor& x, const LabelBatch& y, double epsilon,
           std::size_t num_iterations, BimStep step = BimStep::kDivided, GradientCounter* counter = nullptr);

/// Gradient of J(x + delta, y) +/- lambda * ||delta||_2 with respect to the
/// shared noise delta: the per-view input gradients summed over the batch
/// plus lambda * delta / ||delta|| (zero when delta is zero).
Tensor noise_gradient(const Classifier& model, const Tensor& x, const LabelBatch& y, const Tensor& delta,
                      double regularization, RegularizerSign reg_sign);

/// Seeded initial noise, uniform in [-range, range], shaped like one image.
Tensor initial_noise(const Shape& image_shape, double range, std::uint64_t seed);

/// Single noise tensor shared by every view in x_train. Starting from seeded
/// uniform noise, each iteration ascends the regularised cross-entropy of
/// x_train + delta with a clipped sign step, then clips delta to
/// [-clip_value, clip_value]. num_iterations == 0 returns the initial noise.
Perturbation universal_perturbation(const Classifier& model, const Tensor& x_train, const LabelBatch& y,
                                    const AttackConfig& cfg, GradientCounter* counter = nullptr);

/// clip(x + epsilon * noise, 0, 1) with the same noise on every image.
Tensor apply_perturbation(const Tensor& x, const Perturbation& p, double epsilon);
Tensor apply_noise(const Tensor& x, const Tensor& noise, double epsilon);

// Noise file: text header "mvadv-perturbation 1", key/value lines, "end",
// then the noise as a binary tensor dump.
void save_perturbation(const std::filesystem::path& path, const Perturbation& p);
Perturbation load_perturbation(const std::filesystem::path& path);

/// Amplified view of the noise (0.5 + gain * noise) as a PPM bitmap.
void export_noise_bitmap(const std::filesystem::path& path, const Tensor& noise, double gain = 10.0);

}  // namespace mvadv

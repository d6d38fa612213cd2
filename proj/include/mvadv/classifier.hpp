#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mvadv/tensor.hpp"

namespace mvadv {

using LabelBatch = std::vector<std::size_t>;

enum class Activation { kNone, kRelu };

/// 3x3 convolution, stride 1, zero "same" padding. Weight is
/// (3, 3, in_channels, out_channels); bias is (out_channels).
struct Conv3x3 {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::kRelu;

  friend bool operator==(const Conv3x3&, const Conv3x3&) = default;
};

/// 2x2 average pooling with stride 2 (extents must be even).
struct AvgPool2 {
  friend bool operator==(const AvgPool2&, const AvgPool2&) = default;
};

/// Fully connected layer over the flattened input. Weight is
/// (in_features, out_features); bias is (out_features).
struct Dense {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::kNone;

  friend bool operator==(const Dense&, const Dense&) = default;
};

using Layer = std::variant<Conv3x3, AvgPool2, Dense>;

/// Images with their class labels, one label per image.
struct Dataset {
  Tensor images;  // N x H x W x C
  LabelBatch labels;
};

struct TrainSpec {
  double learning_rate = 0.05;
  std::size_t epochs = 12;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
};

/// Small feed-forward image classifier with softmax output and analytic
/// reverse-mode gradients of the mean cross-entropy with respect to its
/// input. Instances are immutable once built, so forward and gradient calls
/// may run concurrently from several threads.
class Classifier {
 public:
  Classifier(std::string architecture, Shape input_shape, std::size_t num_classes,
             std::vector<Layer> layers, std::uint64_t seed);

  /// conv3x3(8, relu) -> avgpool2 -> conv3x3(16, relu) -> avgpool2 -> dense(K),
  /// He-uniform initialised from `seed`. Height and width must be divisible by 4.
  static Classifier tiny_cnn(std::size_t height, std::size_t width, std::size_t channels,
                             std::size_t num_classes, std::uint64_t seed);
  /// Single dense layer on the flattened image (softmax regression).
  static Classifier linear(std::size_t height, std::size_t width, std::size_t channels,
                           std::size_t num_classes, std::uint64_t seed);

  const std::string& architecture() const { return architecture_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// N x K matrix of raw class scores.
  Tensor logits(const Tensor& x) const;
  /// N x K matrix of softmax probabilities.
  Tensor forward(const Tensor& x) const;
  /// Mean cross-entropy over the batch.
  double loss(const Tensor& x, const LabelBatch& y) const;
  /// Gradient of loss(x, y) with respect to every pixel of x. Because the
  /// loss is a batch mean, image i's slice is its own gradient divided by N.
  Tensor input_gradient(const Tensor& x, const LabelBatch& y) const;

  friend bool operator==(const Classifier&, const Classifier&) = default;

 private:
  friend Classifier train(const Dataset&, const TrainSpec&, Classifier);

  std::string architecture_;
  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<Layer> layers_;
  std::uint64_t seed_;
};

/// Max-shifted softmax of one row of scores.
std::vector<double> softmax(std::span<const double> scores);

/// Minibatch SGD (no momentum) on mean cross-entropy starting from `init`.
/// The result is a deterministic function of (dataset, spec, init).
Classifier train(const Dataset& dataset, const TrainSpec& spec, Classifier init);

/// Builds a tiny_cnn seeded from spec.seed sized for the dataset, then trains it.
Classifier train(const Dataset& dataset, const TrainSpec& spec, std::size_t num_classes);

// Model file: a text header (format tag, architecture, input shape, class
// count, seed, layer list) terminated by "end\n", then each layer's weight
// and bias as binary tensor dumps.
void save_classifier(const std::filesystem::path& path, const Classifier& model);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace mvadv

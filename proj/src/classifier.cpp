#include "mvadv/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mvadv/random.hpp"

namespace mvadv {

namespace {

constexpr double kLogFloor = 1e-12;
constexpr const char* kModelTag = "mvadv-model 1";

struct Dims {
  std::size_t h = 0, w = 0, c = 0;
  std::size_t volume() const { return h * w * c; }
};

// Per-layer parameter gradients (empty for pooling layers).
struct ParamGrad {
  std::vector<double> weight;
  std::vector<double> bias;
};

Dims output_dims(const Layer& layer, Dims in) {
  return std::visit(
      [&](const auto& l) -> Dims {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv3x3>) {
          return {in.h, in.w, l.weight.extent(3)};
        } else if constexpr (std::is_same_v<T, AvgPool2>) {
          return {in.h / 2, in.w / 2, in.c};
        } else {
          return {1, 1, l.weight.extent(1)};
        }
      },
      layer);
}

void conv_forward(std::span<const double> in, Dims d, const Conv3x3& layer, std::span<double> out) {
  const std::size_t ci = d.c;
  const std::size_t co = layer.weight.extent(3);
  auto w = layer.weight.values();
  auto b = layer.bias.values();
  for (std::size_t oy = 0; oy < d.h; ++oy) {
    for (std::size_t ox = 0; ox < d.w; ++ox) {
      double* o = &out[(oy * d.w + ox) * co];
      std::copy(b.begin(), b.end(), o);
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if (oy + ky < 1 || oy + ky - 1 >= d.h) continue;
        const std::size_t iy = oy + ky - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if (ox + kx < 1 || ox + kx - 1 >= d.w) continue;
          const std::size_t ix = ox + kx - 1;
          const double* ip = &in[(iy * d.w + ix) * ci];
          const double* wp = &w[(ky * 3 + kx) * ci * co];
          for (std::size_t c = 0; c < ci; ++c) {
            const double v = ip[c];
            const double* wc = wp + c * co;
            for (std::size_t k = 0; k < co; ++k) o[k] += v * wc[k];
          }
        }
      }
    }
  }
}

void conv_backward(std::span<const double> in, Dims d, const Conv3x3& layer,
                   std::span<const double> grad_out, std::span<double> grad_in, ParamGrad* pg) {
  const std::size_t ci = d.c;
  const std::size_t co = layer.weight.extent(3);
  auto w = layer.weight.values();
  for (std::size_t oy = 0; oy < d.h; ++oy) {
    for (std::size_t ox = 0; ox < d.w; ++ox) {
      const double* go = &grad_out[(oy * d.w + ox) * co];
      if (pg) {
        for (std::size_t k = 0; k < co; ++k) pg->bias[k] += go[k];
      }
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if (oy + ky < 1 || oy + ky - 1 >= d.h) continue;
        const std::size_t iy = oy + ky - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if (ox + kx < 1 || ox + kx - 1 >= d.w) continue;
          const std::size_t ix = ox + kx - 1;
          const std::size_t in_off = (iy * d.w + ix) * ci;
          const std::size_t w_off = (ky * 3 + kx) * ci * co;
          for (std::size_t c = 0; c < ci; ++c) {
            const double* wc = &w[w_off + c * co];
            if (!grad_in.empty()) {
              double acc = 0.0;
              for (std::size_t k = 0; k < co; ++k) acc += wc[k] * go[k];
              grad_in[in_off + c] += acc;
            }
            if (pg) {
              const double v = in[in_off + c];
              double* dw = &pg->weight[w_off + c * co];
              for (std::size_t k = 0; k < co; ++k) dw[k] += v * go[k];
            }
          }
        }
      }
    }
  }
}

void pool_forward(std::span<const double> in, Dims d, std::span<double> out) {
  const std::size_t h2 = d.h / 2, w2 = d.w / 2;
  for (std::size_t y = 0; y < h2; ++y) {
    for (std::size_t x = 0; x < w2; ++x) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const auto at = [&](std::size_t yy, std::size_t xx) { return in[(yy * d.w + xx) * d.c + c]; };
        out[(y * w2 + x) * d.c + c] =
            0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
      }
    }
  }
}

void pool_backward(Dims d, std::span<const double> grad_out, std::span<double> grad_in) {
  const std::size_t w2 = d.w / 2;
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t x = 0; x < d.w; ++x) {
      for (std::size_t c = 0; c < d.c; ++c) {
        grad_in[(y * d.w + x) * d.c + c] += 0.25 * grad_out[((y / 2) * w2 + x / 2) * d.c + c];
      }
    }
  }
}

void dense_forward(std::span<const double> in, const Dense& layer, std::span<double> out) {
  const std::size_t co = layer.weight.extent(1);
  auto w = layer.weight.values();
  auto b = layer.bias.values();
  std::copy(b.begin(), b.end(), out.begin());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (v == 0.0) continue;
    const double* wr = &w[i * co];
    for (std::size_t k = 0; k < co; ++k) out[k] += v * wr[k];
  }
}

void dense_backward(std::span<const double> in, const Dense& layer, std::span<const double> grad_out,
                    std::span<double> grad_in, ParamGrad* pg) {
  const std::size_t co = layer.weight.extent(1);
  auto w = layer.weight.values();
  if (pg) {
    for (std::size_t k = 0; k < co; ++k) pg->bias[k] += grad_out[k];
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double* wr = &w[i * co];
    if (!grad_in.empty()) {
      double acc = 0.0;
      for (std::size_t k = 0; k < co; ++k) acc += wr[k] * grad_out[k];
      grad_in[i] += acc;
    }
    if (pg) {
      double* dw = &pg->weight[i * co];
      for (std::size_t k = 0; k < co; ++k) dw[k] += in[i] * grad_out[k];
    }
  }
}

Activation activation_of(const Layer& layer) {
  if (const auto* c = std::get_if<Conv3x3>(&layer)) return c->activation;
  if (const auto* d = std::get_if<Dense>(&layer)) return d->activation;
  return Activation::kNone;
}

// Single-image forward/backward engine. acts[0] is the input, acts[l + 1]
// the (post-activation) output of layer l.
class Engine {
 public:
  Engine(const std::vector<Layer>& layers, Dims input) : layers_(layers) {
    dims_.push_back(input);
    for (const auto& l : layers) dims_.push_back(output_dims(l, dims_.back()));
    acts_.resize(dims_.size());
    grads_.resize(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      acts_[i].resize(dims_[i].volume());
      grads_[i].resize(dims_[i].volume());
    }
  }

  std::span<const double> forward(std::span<const double> image) {
    std::copy(image.begin(), image.end(), acts_[0].begin());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::span<const double> in = acts_[l];
      std::span<double> out = acts_[l + 1];
      std::visit(
          [&](const auto& layer) {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, Conv3x3>) {
              conv_forward(in, dims_[l], layer, out);
            } else if constexpr (std::is_same_v<T, AvgPool2>) {
              pool_forward(in, dims_[l], out);
            } else {
              dense_forward(in, layer, out);
            }
          },
          layers_[l]);
      if (activation_of(layers_[l]) == Activation::kRelu) {
        for (double& v : out) v = std::max(v, 0.0);
      }
    }
    return acts_.back();
  }

  // Backpropagates grad_logits through the last forward() call. Returns the
  // gradient with respect to the input image; accumulates into `params` when
  // given (one entry per layer).
  std::span<const double> backward(std::span<const double> grad_logits, std::vector<ParamGrad>* params,
                                   bool need_input_grad = true) {
    std::copy(grad_logits.begin(), grad_logits.end(), grads_.back().begin());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      std::span<double> g_out = grads_[l + 1];
      if (activation_of(layers_[l]) == Activation::kRelu) {
        const auto& out = acts_[l + 1];
        for (std::size_t i = 0; i < g_out.size(); ++i) {
          if (out[i] <= 0.0) g_out[i] = 0.0;
        }
      }
      const bool want_in = need_input_grad || l > 0;
      std::span<double> g_in = want_in ? std::span<double>(grads_[l]) : std::span<double>();
      std::fill(g_in.begin(), g_in.end(), 0.0);
      ParamGrad* pg = params ? &(*params)[l] : nullptr;
      std::visit(
          [&](const auto& layer) {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, Conv3x3>) {
              conv_backward(acts_[l], dims_[l], layer, g_out, g_in, pg);
            } else if constexpr (std::is_same_v<T, AvgPool2>) {
              if (!g_in.empty()) pool_backward(dims_[l], g_out, g_in);
            } else {
              dense_backward(acts_[l], layer, g_out, g_in, pg);
            }
          },
          layers_[l]);
    }
    return grads_[0];
  }

 private:
  const std::vector<Layer>& layers_;
  std::vector<Dims> dims_;
  std::vector<std::vector<double>> acts_;
  std::vector<std::vector<double>> grads_;
};

Dims image_dims(const Shape& s) { return {s.at(0), s.at(1), s.at(2)}; }

void check_batch(const Classifier& model, const Tensor& x) {
  if (x.rank() != 4 || !std::equal(model.input_shape().begin(), model.input_shape().end(), x.shape().begin() + 1)) {
    throw std::invalid_argument("classifier: input batch shape does not match the model input shape");
  }
}

void check_labels(const Classifier& model, const Tensor& x, const LabelBatch& y) {
  if (y.size() != x.extent(0)) throw std::invalid_argument("classifier: label count does not match batch size");
  for (auto label : y) {
    if (label >= model.num_classes()) throw std::out_of_range("classifier: label out of range");
  }
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_volume(shape));
  for (auto& v : data) v = uniform(rng, -limit, limit);
  return Tensor(std::move(shape), std::move(data));
}

// Gradient of the mean cross-entropy with respect to one image's scores:
// (softmax - onehot) / N. Below the log floor the loss is flat, but the
// unfloored gradient is kept so saturated inputs still have a direction.
std::vector<double> logit_gradient(std::span<const double> scores, std::size_t label, std::size_t batch) {
  auto g = softmax(scores);
  g[label] -= 1.0;
  const double inv = 1.0 / static_cast<double>(batch);
  for (auto& v : g) v *= inv;
  return g;
}

const char* activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "none"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "none") return Activation::kNone;
  throw std::runtime_error("model file: unknown activation '" + s + "'");
}

}  // namespace

std::vector<double> softmax(std::span<const double> scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    p[k] = std::exp(scores[k] - m);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

Classifier::Classifier(std::string architecture, Shape input_shape, std::size_t num_classes,
                       std::vector<Layer> layers, std::uint64_t seed)
    : architecture_(std::move(architecture)),
      input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      layers_(std::move(layers)),
      seed_(seed) {
  if (input_shape_.size() != 3 || shape_volume(input_shape_) == 0) {
    throw std::invalid_argument("classifier: input shape must be a non-empty H x W x C");
  }
  if (num_classes_ < 2) throw std::invalid_argument("classifier: need at least two classes");
  Dims d = image_dims(input_shape_);
  for (const auto& layer : layers_) {
    if (const auto* c = std::get_if<Conv3x3>(&layer)) {
      const auto& s = c->weight.shape();
      if (s.size() != 4 || s[0] != 3 || s[1] != 3 || s[2] != d.c || c->bias.shape() != Shape{s[3]}) {
        throw std::invalid_argument("classifier: conv3x3 parameter shapes do not chain");
      }
    } else if (std::holds_alternative<AvgPool2>(layer)) {
      if (d.h % 2 != 0 || d.w % 2 != 0) throw std::invalid_argument("classifier: avgpool2 needs even extents");
    } else {
      const auto& dense = std::get<Dense>(layer);
      const auto& s = dense.weight.shape();
      if (s.size() != 2 || s[0] != d.volume() || dense.bias.shape() != Shape{s[1]}) {
        throw std::invalid_argument("classifier: dense parameter shapes do not chain");
      }
    }
    d = output_dims(layer, d);
  }
  if (d.volume() != num_classes_) throw std::invalid_argument("classifier: output width differs from class count");
}

Classifier Classifier::tiny_cnn(std::size_t height, std::size_t width, std::size_t channels,
                                std::size_t num_classes, std::uint64_t seed) {
  if (height % 4 != 0 || width % 4 != 0) throw std::invalid_argument("tiny_cnn: extents must be divisible by 4");
  Rng rng(derive_seed(seed, {0x1417}));
  constexpr std::size_t kFilters1 = 8, kFilters2 = 16;
  std::vector<Layer> layers;
  layers.emplace_back(Conv3x3{he_uniform({3, 3, channels, kFilters1}, 9 * channels, rng), Tensor({kFilters1}),
                              Activation::kRelu});
  layers.emplace_back(AvgPool2{});
  layers.emplace_back(Conv3x3{he_uniform({3, 3, kFilters1, kFilters2}, 9 * kFilters1, rng), Tensor({kFilters2}),
                              Activation::kRelu});
  layers.emplace_back(AvgPool2{});
  const std::size_t features = (height / 4) * (width / 4) * kFilters2;
  layers.emplace_back(Dense{he_uniform({features, num_classes}, features, rng), Tensor({num_classes}),
                            Activation::kNone});
  return Classifier("tiny-cnn", {height, width, channels}, num_classes, std::move(layers), seed);
}

Classifier Classifier::linear(std::size_t height, std::size_t width, std::size_t channels,
                              std::size_t num_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x11ea}));
  const std::size_t features = height * width * channels;
  std::vector<Layer> layers;
  layers.emplace_back(Dense{he_uniform({features, num_classes}, features, rng), Tensor({num_classes}),
                            Activation::kNone});
  return Classifier("linear", {height, width, channels}, num_classes, std::move(layers), seed);
}

Tensor Classifier::logits(const Tensor& x) const {
  check_batch(*this, x);
  const std::size_t n = x.extent(0);
  Engine engine(layers_, image_dims(input_shape_));
  std::vector<double> out(n * num_classes_);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = engine.forward(x.slice_values(i));
    std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(i * num_classes_));
  }
  return Tensor({n, num_classes_}, std::move(out));
}

Tensor Classifier::forward(const Tensor& x) const {
  Tensor z = logits(x);
  std::vector<double> out;
  out.reserve(z.size());
  for (std::size_t i = 0; i < z.extent(0); ++i) {
    auto p = softmax(z.slice_values(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  return Tensor(z.shape(), std::move(out));
}

double Classifier::loss(const Tensor& x, const LabelBatch& y) const {
  check_batch(*this, x);
  check_labels(*this, x, y);
  if (y.empty()) throw std::invalid_argument("classifier: empty batch");
  const Tensor p = forward(x);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    total -= std::log(std::max(p.slice_values(i)[y[i]], kLogFloor));
  }
  return total / static_cast<double>(y.size());
}

Tensor Classifier::input_gradient(const Tensor& x, const LabelBatch& y) const {
  check_batch(*this, x);
  check_labels(*this, x, y);
  if (y.empty()) throw std::invalid_argument("classifier: empty batch");
  const std::size_t n = x.extent(0);
  Engine engine(layers_, image_dims(input_shape_));
  std::vector<double> out(x.size());
  const std::size_t per_image = x.slice_size();
  for (std::size_t i = 0; i < n; ++i) {
    auto z = engine.forward(x.slice_values(i));
    const auto g = logit_gradient(z, y[i], n);
    auto gx = engine.backward(g, nullptr);
    std::copy(gx.begin(), gx.end(), out.begin() + static_cast<std::ptrdiff_t>(i * per_image));
  }
  return Tensor(x.shape(), std::move(out));
}

Classifier train(const Dataset& dataset, const TrainSpec& spec, Classifier init) {
  check_batch(init, dataset.images);
  check_labels(init, dataset.images, dataset.labels);
  if (dataset.labels.empty()) throw std::invalid_argument("train: empty dataset");
  if (spec.learning_rate <= 0.0 || spec.epochs == 0 || spec.batch_size == 0) {
    throw std::invalid_argument("train: learning rate, epochs and batch size must be positive");
  }

  Classifier model = std::move(init);
  const std::size_t n = dataset.labels.size();
  Engine engine(model.layers_, image_dims(model.input_shape_));
  std::vector<ParamGrad> grads(model.layers_.size());
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    if (const auto* c = std::get_if<Conv3x3>(&model.layers_[l])) {
      grads[l] = {std::vector<double>(c->weight.size()), std::vector<double>(c->bias.size())};
    } else if (const auto* d = std::get_if<Dense>(&model.layers_[l])) {
      grads[l] = {std::vector<double>(d->weight.size()), std::vector<double>(d->bias.size())};
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(spec.seed, {0x5eed, 0x7a1}));

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += spec.batch_size) {
      const std::size_t stop = std::min(n, start + spec.batch_size);
      for (auto& g : grads) {
        std::fill(g.weight.begin(), g.weight.end(), 0.0);
        std::fill(g.bias.begin(), g.bias.end(), 0.0);
      }
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t idx = order[j];
        auto z = engine.forward(dataset.images.slice_values(idx));
        const auto g = logit_gradient(z, dataset.labels[idx], stop - start);
        engine.backward(g, &grads, false);
      }
      for (std::size_t l = 0; l < model.layers_.size(); ++l) {
        const auto step = [&](Tensor& param, const std::vector<double>& grad) {
          auto v = param.values();
          for (std::size_t i = 0; i < v.size(); ++i) v[i] -= spec.learning_rate * grad[i];
        };
        if (auto* c = std::get_if<Conv3x3>(&model.layers_[l])) {
          step(c->weight, grads[l].weight);
          step(c->bias, grads[l].bias);
        } else if (auto* d = std::get_if<Dense>(&model.layers_[l])) {
          step(d->weight, grads[l].weight);
          step(d->bias, grads[l].bias);
        }
      }
    }
  }

  for (const auto& layer : model.layers_) {
    if (const auto* c = std::get_if<Conv3x3>(&layer)) {
      require_finite(c->weight.values(), "train: diverged");
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      require_finite(d->weight.values(), "train: diverged");
    }
  }
  return model;
}

Classifier train(const Dataset& dataset, const TrainSpec& spec, std::size_t num_classes) {
  const auto& s = dataset.images.shape();
  if (s.size() != 4) throw std::invalid_argument("train: dataset images must be N x H x W x C");
  return train(dataset, spec, Classifier::tiny_cnn(s[1], s[2], s[3], num_classes, spec.seed));
}

void save_classifier(const std::filesystem::path& path, const Classifier& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto& s = model.input_shape();
  out << kModelTag << '\n'
      << "architecture " << model.architecture() << '\n'
      << "input " << s[0] << ' ' << s[1] << ' ' << s[2] << '\n'
      << "classes " << model.num_classes() << '\n'
      << "seed " << model.seed() << '\n'
      << "layers " << model.layers().size() << '\n';
  for (const auto& layer : model.layers()) {
    if (const auto* c = std::get_if<Conv3x3>(&layer)) {
      out << "conv3x3 " << activation_name(c->activation) << '\n';
    } else if (std::holds_alternative<AvgPool2>(layer)) {
      out << "avgpool2\n";
    } else {
      out << "dense " << activation_name(std::get<Dense>(layer).activation) << '\n';
    }
  }
  out << "end\n";
  for (const auto& layer : model.layers()) {
    if (const auto* c = std::get_if<Conv3x3>(&layer)) {
      write_tensor(out, c->weight);
      write_tensor(out, c->bias);
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      write_tensor(out, d->weight);
      write_tensor(out, d->bias);
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Classifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto next_line = [&]() {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("model file: truncated header");
    return line;
  };
  if (next_line() != kModelTag) throw std::runtime_error("model file: unrecognised format tag");

  std::string key, architecture, tag;
  Shape input(3);
  std::size_t classes = 0, layer_count = 0;
  std::uint64_t seed = 0;
  std::istringstream(next_line()) >> key >> architecture;
  std::istringstream(next_line()) >> key >> input[0] >> input[1] >> input[2];
  std::istringstream(next_line()) >> key >> classes;
  std::istringstream(next_line()) >> key >> seed;
  std::istringstream(next_line()) >> key >> layer_count;

  std::vector<std::pair<std::string, Activation>> kinds;
  for (std::size_t i = 0; i < layer_count; ++i) {
    std::istringstream line(next_line());
    std::string kind, act = "none";
    line >> kind >> act;
    kinds.emplace_back(kind, parse_activation(act));
  }
  if (next_line() != "end") throw std::runtime_error("model file: missing header terminator");

  std::vector<Layer> layers;
  for (const auto& [kind, act] : kinds) {
    if (kind == "conv3x3") {
      Tensor w = read_tensor(in);
      Tensor b = read_tensor(in);
      layers.emplace_back(Conv3x3{std::move(w), std::move(b), act});
    } else if (kind == "avgpool2") {
      layers.emplace_back(AvgPool2{});
    } else if (kind == "dense") {
      Tensor w = read_tensor(in);
      Tensor b = read_tensor(in);
      layers.emplace_back(Dense{std::move(w), std::move(b), act});
    } else {
      throw std::runtime_error("model file: unknown layer '" + kind + "'");
    }
  }
  return Classifier(architecture, input, classes, std::move(layers), seed);
}

}  // namespace mvadv

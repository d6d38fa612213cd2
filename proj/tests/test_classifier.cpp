#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mvadv/classifier.hpp"
#include "mvadv/random.hpp"
#include "mvadv/renderer.hpp"
#include "oracles.hpp"

using namespace mvadv;

namespace {

Tensor random_images(std::size_t n, std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * h * w * c);
  for (auto& x : v) x = uniform01(rng);
  return Tensor({n, h, w, c}, v);
}

Classifier zero_linear(std::size_t k) {
  return Classifier("linear", {2, 2, 1}, k, {Dense{Tensor({4, k}), Tensor({k}), Activation::kNone}}, 0);
}

}  // namespace

TEST_CASE("softmax rows sum to one for extreme logits") {
  for (const std::vector<double>& z : {std::vector<double>{1000, -1000, 999.5, 0},
                                       std::vector<double>{-745, -746, -800},
                                       std::vector<double>{1e300, 1e300}}) {
    const auto p = softmax(z);
    double s = 0.0;
    for (double v : p) {
      CHECK(std::isfinite(v));
      s += v;
    }
    CHECK(std::fabs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("loss: uniform prediction over five classes is ln 5") {
  const Classifier m = zero_linear(5);
  const Tensor x = random_images(3, 2, 2, 1, 1);
  CHECK(m.loss(x, {0, 3, 4}) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("loss: near one-hot prediction gives near zero loss") {
  Tensor bias({3}, std::vector<double>{100, 0, 0});
  const Classifier m("linear", {2, 2, 1}, 3, {Dense{Tensor({4, 3}), bias, Activation::kNone}}, 0);
  CHECK(m.loss(random_images(2, 2, 2, 1, 2), {0, 0}) < 1e-40);
  // p[1] = e^-100 underflows the 1e-12 floor inside the log.
  CHECK(m.loss(random_images(1, 2, 2, 1, 2), {1}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("loss matches a recomputation from forward probabilities") {
  const Classifier m = Classifier::tiny_cnn(8, 8, 3, 5, 4);
  const Tensor x = random_images(4, 8, 8, 3, 9);
  const LabelBatch y{0, 1, 2, 4};
  const Tensor p = m.forward(x);
  double brute = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) brute -= std::log(p.slice_values(i)[y[i]]);
  brute /= static_cast<double>(y.size());
  CHECK(std::fabs(m.loss(x, y) - brute) <= 1e-12);
  CHECK_THROWS_AS(m.loss(x, {0, 1, 2, 5}), std::out_of_range);
}

TEST_CASE("forward agrees with the long-double reference network") {
  const Classifier m = Classifier::tiny_cnn(8, 8, 3, 5, 21);
  const Tensor x = random_images(2, 8, 8, 3, 22);
  const Tensor z = m.logits(x);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto ref = oracle::logits(m, oracle::to_real(x.slice(i)));
    for (std::size_t k = 0; k < 5; ++k) CHECK(z.slice_values(i)[k] == doctest::Approx(double(ref[k])).epsilon(1e-12));
  }
}

TEST_CASE("linear-softmax input gradient matches the closed form") {
  const Classifier m = Classifier::linear(2, 2, 1, 3, 17);
  const auto& dense = std::get<Dense>(m.layers().front());
  const Tensor x = random_images(1, 2, 2, 1, 5);
  for (std::size_t y = 0; y < 3; ++y) {
    const Tensor g = m.input_gradient(x, {y});
    const auto ref = oracle::linear_softmax_gradient(dense.weight, dense.bias, x.slice(0), y);
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("tiny CNN input gradient matches central finite differences") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 100; checked < 5; ++seed) {
    const Classifier m = Classifier::tiny_cnn(8, 8, 3, 5, seed);
    const Tensor x = random_images(1, 8, 8, 3, seed + 7);
    const auto fd = oracle::fd_gradient(m, x.slice(0), seed % 5);
    if (fd.kink_crossed) continue;
    const Tensor g = m.input_gradient(x, {seed % 5});
    CHECK(oracle::max_relative_error({g.values().begin(), g.values().end()}, fd.gradient) < 1e-4);
    ++checked;
  }
}

TEST_CASE("batch gradient is the per-image gradients scaled by 1/N") {
  const Classifier m = Classifier::tiny_cnn(8, 8, 3, 5, 2);
  const Tensor x = random_images(3, 8, 8, 3, 3);
  const LabelBatch y{1, 2, 3};
  const Tensor g = m.input_gradient(x, y);
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor gi = m.input_gradient(gather(x, std::vector<std::size_t>{i}), {y[i]});
    for (std::size_t j = 0; j < gi.size(); ++j) {
      CHECK(g.slice_values(i)[j] == doctest::Approx(gi.values()[j] / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("training is deterministic and reduces loss over the first epoch") {
  const Dataset d = render_training_corpus(default_objects(), 6, {16, 16}, 3);
  const TrainSpec one{0.02, 1, 8, 5};
  const Classifier init = Classifier::tiny_cnn(16, 16, 3, 5, one.seed);
  const Classifier a = train(d, one, init);
  const Classifier b = train(d, one, 5);
  CHECK(a == b);
  CHECK(a.loss(d.images, d.labels) < init.loss(d.images, d.labels));
  CHECK_FALSE(a == init);
}

TEST_CASE("a single sample is memorised") {
  const ViewSet v = render_views(default_object(3), 2, {16, 16}, 8);
  const Dataset d{v.images({0}), {3}};
  const Classifier m = train(d, {0.05, 200, 1, 2}, 5);
  const Tensor p = m.forward(d.images);
  CHECK(argmax_rows(p)[0] == 3);
  CHECK(p.values()[3] > 0.99);
}

TEST_CASE("training rejects bad input") {
  CHECK_THROWS_AS(train(Dataset{Tensor({0, 8, 8, 3}), {}}, TrainSpec{}, 5), std::invalid_argument);
  const Dataset d{random_images(2, 8, 8, 3, 1), {0, 7}};
  CHECK_THROWS(train(d, TrainSpec{}, 5));
  CHECK_THROWS_AS(train(Dataset{random_images(1, 8, 8, 3, 1), {0}}, TrainSpec{0.0, 1, 1, 1}, 5),
                  std::invalid_argument);
}

TEST_CASE("model files round-trip exactly") {
  const auto path = std::filesystem::temp_directory_path() / "mvadv_test_model.bin";
  const Classifier m = Classifier::tiny_cnn(8, 12, 3, 6, 31);
  save_classifier(path, m);
  const Classifier back = load_classifier(path);
  CHECK(back == m);
  CHECK(back.architecture() == "tiny-cnn");
  CHECK(back.num_classes() == 6);
  std::filesystem::remove(path);
  CHECK_THROWS(load_classifier(path));
}

TEST_CASE("constructor rejects layers that do not chain") {
  CHECK_THROWS_AS(Classifier("linear", {2, 2, 1}, 3, {Dense{Tensor({5, 3}), Tensor({3}), Activation::kNone}}, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(Classifier::tiny_cnn(10, 8, 3, 5, 1), std::invalid_argument);
}

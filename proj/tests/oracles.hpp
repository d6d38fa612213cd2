#pragma once

// Reference implementations used as test oracles. They are written from the
// layer definitions with plain loops and long double arithmetic and share no
// code with the library's forward/backward engine.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "mvadv/classifier.hpp"
#include "mvadv/tensor.hpp"

namespace oracle {

using Real = long double;

struct Activations {
  std::vector<Real> values;
  std::size_t h = 0, w = 0, c = 0;
};

// Sign pattern of every ReLU pre-activation seen during a forward pass.
using ReluPattern = std::vector<bool>;

inline Activations conv3x3(const Activations& in, const mvadv::Conv3x3& layer, ReluPattern* pattern,
                           Real* min_margin) {
  const std::size_t co = layer.weight.extent(3);
  Activations out{std::vector<Real>(in.h * in.w * co), in.h, in.w, co};
  const auto w = layer.weight.values();
  const auto b = layer.bias.values();
  for (std::size_t y = 0; y < in.h; ++y) {
    for (std::size_t x = 0; x < in.w; ++x) {
      for (std::size_t k = 0; k < co; ++k) {
        Real acc = b[k];
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.h) || xx >= static_cast<long>(in.w)) continue;
            for (std::size_t c = 0; c < in.c; ++c) {
              const std::size_t widx = ((static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)) *
                                            in.c + c) * co + k;
              acc += static_cast<Real>(w[widx]) *
                     in.values[(static_cast<std::size_t>(yy) * in.w + static_cast<std::size_t>(xx)) * in.c + c];
            }
          }
        }
        if (layer.activation == mvadv::Activation::kRelu) {
          if (pattern) pattern->push_back(acc > 0);
          if (min_margin) *min_margin = std::min(*min_margin, std::fabs(acc));
          acc = acc > 0 ? acc : 0;
        }
        out.values[(y * in.w + x) * co + k] = acc;
      }
    }
  }
  return out;
}

inline Activations avgpool2(const Activations& in) {
  Activations out{std::vector<Real>((in.h / 2) * (in.w / 2) * in.c), in.h / 2, in.w / 2, in.c};
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      for (std::size_t c = 0; c < in.c; ++c) {
        Real s = 0;
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t b = 0; b < 2; ++b) s += in.values[((2 * y + a) * in.w + 2 * x + b) * in.c + c];
        }
        out.values[(y * out.w + x) * in.c + c] = s / 4;
      }
    }
  }
  return out;
}

inline Activations dense(const Activations& in, const mvadv::Dense& layer, ReluPattern* pattern, Real* min_margin) {
  const std::size_t n_in = in.values.size(), n_out = layer.weight.extent(1);
  Activations out{std::vector<Real>(n_out), 1, 1, n_out};
  const auto w = layer.weight.values();
  const auto b = layer.bias.values();
  for (std::size_t k = 0; k < n_out; ++k) {
    Real acc = b[k];
    for (std::size_t i = 0; i < n_in; ++i) acc += in.values[i] * static_cast<Real>(w[i * n_out + k]);
    if (layer.activation == mvadv::Activation::kRelu) {
      if (pattern) pattern->push_back(acc > 0);
      if (min_margin) *min_margin = std::min(*min_margin, std::fabs(acc));
      acc = acc > 0 ? acc : 0;
    }
    out.values[k] = acc;
  }
  return out;
}

// Logits of a single H x W x C image given as long doubles.
inline std::vector<Real> logits(const mvadv::Classifier& model, const std::vector<Real>& image,
                                ReluPattern* pattern = nullptr, Real* min_margin = nullptr) {
  const auto& s = model.input_shape();
  Activations a{image, s[0], s[1], s[2]};
  for (const auto& layer : model.layers()) {
    if (const auto* c = std::get_if<mvadv::Conv3x3>(&layer)) {
      a = conv3x3(a, *c, pattern, min_margin);
    } else if (std::holds_alternative<mvadv::AvgPool2>(layer)) {
      a = avgpool2(a);
    } else {
      a = dense(a, std::get<mvadv::Dense>(layer), pattern, min_margin);
    }
  }
  return a.values;
}

inline std::vector<Real> softmax(const std::vector<Real>& z) {
  Real m = z[0];
  for (Real v : z) m = std::max(m, v);
  std::vector<Real> p(z.size());
  Real s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - m);
  for (auto& v : p) v /= s;
  return p;
}

// Cross-entropy of one image: log-sum-exp minus the true logit.
inline Real loss(const mvadv::Classifier& model, const std::vector<Real>& image, std::size_t label,
                 ReluPattern* pattern = nullptr, Real* min_margin = nullptr) {
  const auto z = logits(model, image, pattern, min_margin);
  Real m = z[0];
  for (Real v : z) m = std::max(m, v);
  Real s = 0;
  for (Real v : z) s += std::exp(v - m);
  return m + std::log(s) - z[label];
}

inline std::vector<Real> to_real(const mvadv::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

struct FdResult {
  std::vector<double> gradient;
  bool kink_crossed = false;  // some perturbation flipped a ReLU
};

// Central finite differences of one image's loss, every coordinate.
inline FdResult fd_gradient(const mvadv::Classifier& model, const mvadv::Tensor& image, std::size_t label,
                            Real h = 1e-5L) {
  const auto x = to_real(image);
  ReluPattern base;
  loss(model, x, label, &base);
  FdResult r;
  r.gradient.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    ReluPattern pp, pm;
    const Real lp = loss(model, xp, label, &pp);
    const Real lm = loss(model, xm, label, &pm);
    if (pp != base || pm != base) r.kink_crossed = true;
    r.gradient[i] = static_cast<double>((lp - lm) / (2 * h));
  }
  return r;
}

// Closed-form input gradient of softmax regression for one flattened image:
// (softmax(W^T x + b) - onehot(y))^T W^T.
inline std::vector<double> linear_softmax_gradient(const mvadv::Tensor& weight, const mvadv::Tensor& bias,
                                                   const mvadv::Tensor& image, std::size_t label) {
  const std::size_t n_in = weight.extent(0), k = weight.extent(1);
  std::vector<Real> z(k);
  for (std::size_t j = 0; j < k; ++j) {
    z[j] = bias.values()[j];
    for (std::size_t i = 0; i < n_in; ++i) z[j] += static_cast<Real>(weight.values()[i * k + j]) * image.values()[i];
  }
  auto p = softmax(z);
  p[label] -= 1;
  std::vector<double> g(n_in);
  for (std::size_t i = 0; i < n_in; ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += static_cast<Real>(weight.values()[i * k + j]) * p[j];
    g[i] = static_cast<double>(acc);
  }
  return g;
}

// Largest |a - b| / max(|a|, |b|) over coordinates where |a| > floor.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::fabs(a[i]) <= floor) continue;
    worst = std::max(worst, std::fabs(a[i] - b[i]) / std::max(std::fabs(a[i]), std::fabs(b[i])));
  }
  return worst;
}

}  // namespace oracle

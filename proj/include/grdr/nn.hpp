#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grdr/common.hpp"

namespace grdr {

/// Two-layer feed-forward map y = W2 tanh(W1 x + b1 [+ extra]) + b2.
/// Instantiated with float for parameters and double for gradients.
template <class T>
struct Mlp {
  std::size_t in = 0, hidden = 0, out = 0;
  std::vector<T> w1, b1, w2, b2;  // w1: hidden x in, w2: out x hidden (row-major)

  Mlp() = default;
  Mlp(std::size_t in_, std::size_t hidden_, std::size_t out_)
      : in(in_), hidden(hidden_), out(out_), w1(hidden_ * in_), b1(hidden_), w2(out_ * hidden_), b2(out_) {}

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
};

template <class T, class U, class F>
void zip_visit(Mlp<T>& a, Mlp<U>& b, const std::string& prefix, F&& f) {
  f(prefix + ".w1", a.w1, b.w1);
  f(prefix + ".b1", a.b1, b.b1);
  f(prefix + ".w2", a.w2, b.w2);
  f(prefix + ".b2", a.b2, b.b2);
}

inline void init_mlp(Mlp<float>& m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(m.in));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(m.hidden));
  for (auto& w : m.w1) w = static_cast<float>(g(rng) * s1);
  for (auto& w : m.w2) w = static_cast<float>(g(rng) * s2);
  std::fill(m.b1.begin(), m.b1.end(), 0.0f);
  std::fill(m.b2.begin(), m.b2.end(), 0.0f);
}

struct MlpCache {
  std::vector<double> x;    // input
  std::vector<double> act;  // tanh(hidden pre-activation)
  std::vector<double> y;    // output
};

/// `extra` is an optional additive bias on the hidden pre-activation (used
/// for the retriever's per-step position embedding).
inline void mlp_forward(const Mlp<float>& p, std::span<const double> x, MlpCache& c,
                        std::span<const float> extra = {}) {
  c.x.assign(x.begin(), x.end());
  c.act.resize(p.hidden);
  c.y.resize(p.out);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const float* w = p.w1.data() + h * p.in;
    double s = p.b1[h];
    for (std::size_t i = 0; i < p.in; ++i) s += static_cast<double>(w[i]) * x[i];
    if (!extra.empty()) s += extra[h];
    c.act[h] = std::tanh(s);
  }
  for (std::size_t o = 0; o < p.out; ++o) {
    const float* w = p.w2.data() + o * p.hidden;
    double s = p.b2[o];
    for (std::size_t h = 0; h < p.hidden; ++h) s += static_cast<double>(w[h]) * c.act[h];
    c.y[o] = s;
  }
}

/// Accumulates parameter gradients into `g`; writes the input gradient into
/// `dx` and the extra-bias gradient into `dextra` when those are non-empty.
inline void mlp_backward(const Mlp<float>& p, const MlpCache& c, std::span<const double> dy, Mlp<double>& g,
                         std::span<double> dx = {}, std::span<double> dextra = {}) {
  std::vector<double> da(p.hidden, 0.0);
  for (std::size_t o = 0; o < p.out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    g.b2[o] += d;
    const float* w = p.w2.data() + o * p.hidden;
    double* gw = g.w2.data() + o * p.hidden;
    for (std::size_t h = 0; h < p.hidden; ++h) {
      gw[h] += d * c.act[h];
      da[h] += d * w[h];
    }
  }
  for (std::size_t h = 0; h < p.hidden; ++h) da[h] *= 1.0 - c.act[h] * c.act[h];
  if (!dextra.empty())
    for (std::size_t h = 0; h < p.hidden; ++h) dextra[h] += da[h];
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double d = da[h];
    if (d == 0.0) continue;
    g.b1[h] += d;
    const float* w = p.w1.data() + h * p.in;
    double* gw = g.w1.data() + h * p.in;
    for (std::size_t i = 0; i < p.in; ++i) gw[i] += d * c.x[i];
    if (!dx.empty())
      for (std::size_t i = 0; i < p.in; ++i) dx[i] += d * w[i];
  }
}

/// Affine map y = W x + b.
template <class T>
struct Linear {
  std::size_t in = 0, out = 0;
  std::vector<T> w, b;  // w: out x in

  Linear() = default;
  Linear(std::size_t in_, std::size_t out_) : in(in_), out(out_), w(out_ * in_), b(out_) {}
};

inline void init_linear(Linear<float>& l, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const double s = 1.0 / std::sqrt(static_cast<double>(l.in));
  for (auto& w : l.w) w = static_cast<float>(g(rng) * s);
  std::fill(l.b.begin(), l.b.end(), 0.0f);
}

template <class X>
void linear_forward(const Linear<float>& p, std::span<const X> x, std::span<double> y) {
  for (std::size_t o = 0; o < p.out; ++o) {
    const float* w = p.w.data() + o * p.in;
    double s = p.b[o];
    for (std::size_t i = 0; i < p.in; ++i) s += static_cast<double>(w[i]) * static_cast<double>(x[i]);
    y[o] = s;
  }
}

template <class X>
void linear_backward(const Linear<float>& /*p*/, std::span<const X> x, std::span<const double> dy, Linear<double>& g) {
  for (std::size_t o = 0; o < g.out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    g.b[o] += d;
    double* gw = g.w.data() + o * g.in;
    for (std::size_t i = 0; i < g.in; ++i) gw[i] += d * static_cast<double>(x[i]);
  }
}

}  // namespace grdr

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grdr/model.hpp"

namespace grdr {

/// AdamW with per-group step counters. A group whose gradient is entirely
/// zero in a step is left untouched (no moment decay, no weight decay), so
/// frozen or unused parameters stay bit-identical.
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamW() = default;
  explicit AdamW(const ModelParams<float>& shape)
      : m_(shape.zeros_like<float>()), v_(shape.zeros_like<float>()) {
    std::size_t groups = 0;
    for_each_group(shape, [&](const std::string&, const auto&) { ++groups; });
    steps_.assign(groups, 0);
  }

  /// Applies one update to every group accepted by `trainable`. Returns the
  /// number of groups that changed.
  std::size_t step(ModelParams<float>& params, ModelParams<double>& grads, double lr, double weight_decay,
                   const std::function<bool(const std::string&)>& trainable) {
    std::size_t index = 0, updated = 0;
    auto& m = m_;
    auto& v = v_;
    zip_groups(params, grads, [&](const std::string& name, std::vector<float>& p, std::vector<double>& g) {
      const std::size_t gi = index++;
      if (!trainable(name)) return;
      bool any = false;
      for (double x : g) any |= x != 0.0;
      if (!any) return;
      auto& mv = group(m, gi);
      auto& vv = group(v, gi);
      const std::uint64_t t = ++steps_[gi];
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      const double wd = decays(name) ? weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi_ = g[i];
        const double mi = beta1 * mv[i] + (1.0 - beta1) * gi_;
        const double vi = beta2 * vv[i] + (1.0 - beta2) * gi_ * gi_;
        mv[i] = static_cast<float>(mi);
        vv[i] = static_cast<float>(vi);
        const double upd = (mi / bc1) / (std::sqrt(vi / bc2) + eps) + wd * p[i];
        p[i] = static_cast<float>(p[i] - lr * upd);
      }
      ++updated;
    });
    return updated;
  }

  ModelParams<float>& first_moment() { return m_; }
  ModelParams<float>& second_moment() { return v_; }
  const ModelParams<float>& first_moment() const { return m_; }
  const ModelParams<float>& second_moment() const { return v_; }
  std::vector<std::uint64_t>& steps() { return steps_; }
  const std::vector<std::uint64_t>& steps() const { return steps_; }

  /// Decoupled weight decay applies to dense weight matrices only.
  static bool decays(const std::string& name) {
    auto ends = [&](const char* s) {
      const std::string suf(s);
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    return ends(".w1") || ends(".w2") || ends(".w");
  }

 private:
  static std::vector<float>& group(ModelParams<float>& p, std::size_t index) {
    std::vector<float>* out = nullptr;
    std::size_t i = 0;
    for_each_group(p, [&](const std::string&, std::vector<float>& g) {
      if (i++ == index) out = &g;
    });
    return *out;
  }

  ModelParams<float> m_, v_;
  std::vector<std::uint64_t> steps_;
};

}  // namespace grdr

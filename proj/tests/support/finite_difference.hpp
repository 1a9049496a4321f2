#pragma once

// Central finite differences used as the independent gradient oracle.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace grdr::testing {

/// d loss / d v[i] by central differences. The denominator is the step that
/// was actually representable in float. Returns NaN if either evaluation is
/// NaN (the closure uses NaN to signal a discrete decision changed).
inline double central_difference(std::vector<float>& v, std::size_t i, const std::function<double()>& loss,
                                 float step = 1e-4f) {
  const float orig = v[i];
  const float h = step * std::max(1.0f, std::abs(orig));
  const float up = orig + h, dn = orig - h;
  v[i] = up;
  const double lu = loss();
  v[i] = dn;
  const double ld = loss();
  v[i] = orig;
  return (lu - ld) / (static_cast<double>(up) - static_cast<double>(dn));
}

inline double central_difference(std::vector<double>& v, std::size_t i, const std::function<double()>& loss,
                                 double step = 1e-5) {
  const double orig = v[i];
  const double h = step * std::max(1.0, std::abs(orig));
  v[i] = orig + h;
  const double lu = loss();
  v[i] = orig - h;
  const double ld = loss();
  v[i] = orig;
  return (lu - ld) / (2.0 * h);
}

/// Relative agreement at `rel` with an absolute floor for gradients that are
/// numerically zero.
inline bool gradients_agree(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff <= rel * std::max(std::abs(analytic), std::abs(numeric)) || diff <= abs_floor;
}

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinate whose perturbation flipped a discrete choice
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string first_failure;
};

template <class V>
void check_group(const std::string& name, V& values, const std::vector<double>& analytic,
                 const std::function<double()>& loss, GradCheckStats& stats, std::size_t max_coords = 64) {
  const std::size_t n = values.size();
  const std::size_t stride = n > max_coords ? n / max_coords : 1;
  for (std::size_t i = 0; i < n; i += stride) {
    const double num = central_difference(values, i, loss);
    if (std::isnan(num)) {
      ++stats.skipped;
      continue;
    }
    ++stats.checked;
    const double a = analytic[i];
    const double diff = std::abs(a - num);
    const double scale = std::max(std::abs(a), std::abs(num));
    if (scale > 1e-7) stats.worst_rel = std::max(stats.worst_rel, diff / scale);
    if (!gradients_agree(a, num)) {
      if (stats.failed++ == 0)
        stats.first_failure = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                              " numeric=" + std::to_string(num);
    }
  }
}

}  // namespace grdr::testing

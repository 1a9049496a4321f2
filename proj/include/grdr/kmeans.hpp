#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "grdr/common.hpp"

namespace grdr {

struct KMeansResult {
  std::vector<double> centroids;          // k x dim
  std::vector<std::uint32_t> assignment;  // per point
  std::size_t iterations = 0;
  double inertia = 0.0;  // sum of squared distances to assigned centroids
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. `points` is n x dim row-major.
/// Ties in assignment go to the lower centroid index; an empty cluster is
/// re-seeded with the point farthest from its own centroid. Runs at most
/// `iters` Lloyd iterations and stops early at a fixed point.
inline KMeansResult kmeans(const std::vector<double>& points, std::size_t dim, std::size_t k, std::uint64_t seed,
                           std::size_t iters) {
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  if (n == 0) throw invalid_argument("kmeans: empty input");
  if (k == 0) throw invalid_argument("kmeans: k must be positive");
  if (k > n) throw invalid_argument("kmeans: fewer points than clusters");
  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.centroids.resize(k * dim);

  // k-means++ seeding.
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(points.begin() + first * dim, dim, r.centroids.begin());
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = r.centroids.data() + (c - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], detail::sq_dist(points.data() + i * dim, prev, dim));
      total += closest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < closest[i]) {
          pick = i;
          break;
        }
        u -= closest[i];
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    std::copy_n(points.begin() + pick * dim, dim, r.centroids.begin() + c * dim);
  }

  r.assignment.assign(n, std::numeric_limits<std::uint32_t>::max());
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = points.data() + i * dim;
      std::uint32_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::sq_dist(x, r.centroids.data() + c * dim, dim);
        if (d < bd) {
          bd = d;
          best = static_cast<std::uint32_t>(c);
        }
      }
      dist[i] = bd;
      if (r.assignment[i] != best) {
        r.assignment[i] = best;
        changed = true;
      }
    }
    r.iterations = it + 1;
    if (!changed && it > 0) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = r.assignment[i];
      ++counts[c];
      const double* x = points.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += x[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (dist[i] > dist[far]) far = i;
        std::copy_n(points.begin() + far * dim, dim, r.centroids.begin() + c * dim);
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j)
        r.centroids[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
  }
  // Final assignment and inertia against the final centroids.
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = points.data() + i * dim;
    std::uint32_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = detail::sq_dist(x, r.centroids.data() + c * dim, dim);
      if (d < bd) {
        bd = d;
        best = static_cast<std::uint32_t>(c);
      }
    }
    r.assignment[i] = best;
    r.inertia += bd;
  }
  return r;
}

}  // namespace grdr

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/feature_store.hpp"
#include "grdr/model.hpp"

namespace grdr {

/// Polysemous corpus generator. Facet f of every video lives mostly in
/// coordinate block f and leans towards a shared family direction, so a
/// facet's queries look alike across videos while each video's facets stay
/// far apart.
struct SynthConfig {
  std::uint32_t n_videos = 1000;
  std::uint32_t facets_per_video = 4;  // F
  std::uint32_t dim = 64;              // d_f
  double facet_noise = 0.5;            // sigma_q, norm of the query perturbation
  std::uint32_t queries_per_facet = 8;
  double angle_floor_deg = 60.0;       // minimum pairwise angle between a video's facets
  double family_strength = 0.6;        // weight of the shared family direction
  double facet_leak = 0.1;             // weight of an unrestricted random direction
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_videos < 1 || facets_per_video < 1 || dim < 1 || queries_per_facet < 1)
      throw config_error("synth: all counts must be >= 1");
    if (dim < facets_per_video) throw config_error("synth: dim must be >= facets_per_video");
    if (!(facet_noise >= 0.0)) throw config_error("synth: facet_noise must be >= 0");
    if (!(angle_floor_deg >= 0.0 && angle_floor_deg <= 180.0))
      throw config_error("synth: angle_floor_deg must be in [0, 180]");
    if (!(family_strength >= 0.0) || !(facet_leak >= 0.0))
      throw config_error("synth: family_strength and facet_leak must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw config_error("synth: train_fraction must be in (0, 1)");
  }
};

#define GRDR_SYNTH_CONFIG_FIELDS(X)                                                                   \
  X(n_videos) X(facets_per_video) X(dim) X(facet_noise) X(queries_per_facet) X(angle_floor_deg)      \
  X(family_strength) X(facet_leak) X(train_fraction) X(seed)

inline json to_json(const SynthConfig& c) {
  json j = json::object();
#define GRDR_PUT(f) j[#f] = c.f;
  GRDR_SYNTH_CONFIG_FIELDS(GRDR_PUT)
#undef GRDR_PUT
  return j;
}

inline SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw config_error("synth config must be a JSON object");
  static const std::set<std::string> known = {
#define GRDR_NAME(f) #f,
      GRDR_SYNTH_CONFIG_FIELDS(GRDR_NAME)
#undef GRDR_NAME
  };
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw config_error("unknown synth config key: " + k);
  SynthConfig c;
  try {
#define GRDR_GET(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    GRDR_SYNTH_CONFIG_FIELDS(GRDR_GET)
#undef GRDR_GET
  } catch (const json::exception& e) {
    throw config_error(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

struct SynthCorpus {
  FeatureStore videos{StoreKind::video, 1};
  FeatureStore queries{StoreKind::query, 1};
  std::uint32_t facets_per_video = 0;
  std::vector<std::uint32_t> query_facet;  // facet label per query row (diagnostics only)
  std::vector<std::vector<float>> facets;  // video row * F + f (diagnostics only)
};

namespace detail {

inline void normalize_in_place(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

inline std::vector<double> gaussian_direction(std::size_t dim, std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(dim, 0.0);
  for (std::size_t i = lo; i < hi; ++i) v[i] = g(rng);
  normalize_in_place(v);
  return v;
}

inline std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace detail

inline SynthCorpus generate(const SynthConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  const std::size_t d = c.dim, nf = c.facets_per_video;
  auto block = [&](std::size_t f) { return std::pair<std::size_t, std::size_t>{f * d / nf, (f + 1) * d / nf}; };
  std::vector<std::vector<double>> family(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto [lo, hi] = block(f);
    family[f] = detail::gaussian_direction(d, lo, hi, rng);
  }
  const double min_cos = std::cos(c.angle_floor_deg * M_PI / 180.0);

  SynthCorpus out;
  out.facets_per_video = c.facets_per_video;
  out.videos = FeatureStore(StoreKind::video, c.dim);
  out.queries = FeatureStore(StoreKind::query, c.dim);
  std::normal_distribution<double> g;
  std::uint64_t qid = 0;
  for (std::uint32_t v = 0; v < c.n_videos; ++v) {
    std::vector<std::vector<double>> facets;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000)
        throw config_error("synth: angle floor of " + std::to_string(c.angle_floor_deg) + " degrees is infeasible");
      facets.assign(nf, {});
      for (std::size_t f = 0; f < nf; ++f) {
        const auto [lo, hi] = block(f);
        const auto own = detail::gaussian_direction(d, lo, hi, rng);
        const auto leak = detail::gaussian_direction(d, 0, d, rng);
        facets[f].resize(d);
        for (std::size_t i = 0; i < d; ++i)
          facets[f][i] = c.family_strength * family[f][i] + own[i] + c.facet_leak * leak[i];
        detail::normalize_in_place(facets[f]);
      }
      bool ok = true;
      for (std::size_t a = 0; a < nf && ok; ++a)
        for (std::size_t b = a + 1; b < nf && ok; ++b) ok = dot(facets[a], facets[b]) <= min_cos + 1e-12;
      if (ok) break;
    }
    std::vector<double> pooled(d, 0.0);
    for (const auto& f : facets)
      for (std::size_t i = 0; i < d; ++i) pooled[i] += f[i];
    for (double& x : pooled) x /= static_cast<double>(nf);
    detail::normalize_in_place(pooled);
    out.videos.add_video(v, detail::to_float(pooled));
    for (const auto& f : facets) out.facets.push_back(detail::to_float(f));

    for (std::size_t f = 0; f < nf; ++f)
      for (std::uint32_t k = 0; k < c.queries_per_facet; ++k) {
        std::vector<double> q = facets[f];
        if (c.facet_noise > 0.0) {
          const double s = c.facet_noise / std::sqrt(static_cast<double>(d));
          for (double& x : q) x += s * g(rng);
        }
        detail::normalize_in_place(q);
        out.queries.add_query(qid++, v, "v" + std::to_string(v) + "/f" + std::to_string(f), detail::to_float(q));
        out.query_facet.push_back(static_cast<std::uint32_t>(f));
      }
  }
  return out;
}

struct SynthSplit {
  SynthCorpus train, test;
};

/// Disjoint video split; queries follow their target video.
inline SynthSplit split(const SynthCorpus& c, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw config_error("split fraction must be in (0, 1)");
  const std::size_t n = c.videos.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n)
    throw config_error("split of " + std::to_string(n) + " videos at " + std::to_string(fraction) +
                       " leaves one side empty");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

  SynthSplit s;
  for (auto* part : {&s.train, &s.test}) {
    part->videos = FeatureStore(StoreKind::video, c.videos.dimension());
    part->queries = FeatureStore(StoreKind::query, c.queries.dimension());
    part->facets_per_video = c.facets_per_video;
  }
  const std::uint32_t nf = c.facets_per_video;
  for (std::size_t i = 0; i < n; ++i) {
    auto& part = is_train[i] ? s.train : s.test;
    part.videos.add_video(c.videos.id(i), c.videos.row(i));
    for (std::uint32_t f = 0; f < nf && !c.facets.empty(); ++f) part.facets.push_back(c.facets[i * nf + f]);
  }
  for (std::size_t q = 0; q < c.queries.size(); ++q) {
    auto& part = is_train[c.videos.index_of(c.queries.target(q))] ? s.train : s.test;
    part.queries.add_query(c.queries.id(q), c.queries.target(q), c.queries.text(q), c.queries.row(q));
    part.query_facet.push_back(c.query_facet[q]);
  }
  return s;
}

/// Sidecar lines: one per video (its global facet indices), then one per
/// query (target video and facet label).
inline std::string diagnostics_jsonl(const SynthCorpus& c) {
  std::string out;
  const std::uint32_t nf = c.facets_per_video;
  for (std::size_t v = 0; v < c.videos.size(); ++v) {
    json facets = json::array();
    for (std::uint32_t f = 0; f < nf; ++f) facets.push_back(c.videos.id(v) * nf + f);
    out += json{{"video_id", c.videos.id(v)}, {"facets", facets}}.dump() + '\n';
  }
  for (std::size_t q = 0; q < c.queries.size(); ++q)
    out += json{{"query_id", c.queries.id(q)}, {"video_id", c.queries.target(q)}, {"facet", c.query_facet[q]}}.dump() +
           '\n';
  return out;
}

}  // namespace grdr

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/search.hpp"
#include "grdr/trie_index.hpp"

namespace grdr {

/// Percentage of queries whose target appears in the first k of its ranking.
inline double recall_at_k(const std::vector<std::vector<std::uint64_t>>& rankings,
                          const std::vector<std::uint64_t>& targets, std::size_t k) {
  if (rankings.size() != targets.size())
    throw invalid_argument("recall_at_k: " + std::to_string(rankings.size()) + " rankings for " +
                           std::to_string(targets.size()) + " ground-truth targets");
  if (rankings.empty()) throw invalid_argument("recall_at_k: no queries");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    const std::size_t n = std::min(k, r.size());
    if (std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(n), targets[i]) != r.begin() + n) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

enum class EvalSetting { inductive, full_corpus };

inline const char* setting_name(EvalSetting s) { return s == EvalSetting::inductive ? "inductive" : "full_corpus"; }

inline EvalSetting setting_from_name(const std::string& s) {
  if (s == "inductive") return EvalSetting::inductive;
  if (s == "full_corpus") return EvalSetting::full_corpus;
  throw config_error("unknown eval setting '" + s + "' (expected inductive or full_corpus)");
}

struct LatencyStats {
  double mean = 0.0, median = 0.0, p95 = 0.0;
  std::size_t samples = 0;
};

inline LatencyStats latency_stats(std::vector<double> v) {
  LatencyStats s;
  s.samples = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.p95 = v[std::min(n - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1)];
  return s;
}

struct EvalOptions {
  EvalSetting setting = EvalSetting::full_corpus;
  std::size_t beam_size = 100;
  std::vector<std::size_t> ks = {1, 5, 10};
  std::size_t warmup = 10;
  std::size_t min_latency_samples = 100;
  std::size_t feature_dim = 0;  // for the storage report; store dimension when 0
  std::size_t frames = 12;      // frame-level storage assumption
};

struct EvalReport {
  EvalSetting setting = EvalSetting::full_corpus;
  std::size_t queries = 0, pool = 0, beam_size = 0;
  std::vector<std::pair<std::size_t, double>> recall;  // (k, R@k)
  double mean_candidates = 0.0;
  std::size_t min_candidates = 0, max_candidates = 0;
  LatencyStats recall_ms, rerank_ms, latency_ms;
  StorageReport storage;

  double at(std::size_t k) const {
    for (const auto& [kk, v] : recall)
      if (kk == k) return v;
    throw invalid_argument("R@" + std::to_string(k) + " was not computed");
  }
};

/// Retrieves every query once for the metrics. Latency is measured on
/// separate sequential passes after `warmup` discarded queries, cycling the
/// query set until `min_latency_samples` are collected.
inline EvalReport run_eval(const Engine& e, const FeatureStore& queries, const EvalOptions& o) {
  if (queries.empty()) throw invalid_argument("run_eval: no queries");
  for (std::size_t q = 0; q < queries.size(); ++q)
    if (!e.videos->contains(queries.target(q)))
      throw invalid_argument("run_eval: query " + std::to_string(queries.id(q)) + " targets video " +
                             std::to_string(queries.target(q)) + " outside the search pool");
  EvalReport r;
  r.setting = o.setting;
  r.queries = queries.size();
  r.pool = e.videos->size();
  r.beam_size = o.beam_size;
  const std::size_t max_k = o.ks.empty() ? 0 : *std::max_element(o.ks.begin(), o.ks.end());
  std::vector<std::vector<std::uint64_t>> rankings(queries.size());
  std::vector<std::uint64_t> targets(queries.size());
  double cand_sum = 0.0;
  r.min_candidates = SIZE_MAX;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto res = retrieve(queries.row(q), e, o.beam_size, max_k);
    for (const auto& c : res.ranked) rankings[q].push_back(c.video_id);
    targets[q] = queries.target(q);
    cand_sum += static_cast<double>(res.candidate_count);
    r.min_candidates = std::min(r.min_candidates, res.candidate_count);
    r.max_candidates = std::max(r.max_candidates, res.candidate_count);
  }
  r.mean_candidates = cand_sum / static_cast<double>(queries.size());
  for (std::size_t k : o.ks) r.recall.emplace_back(k, recall_at_k(rankings, targets, k));

  for (std::size_t i = 0; i < o.warmup; ++i) retrieve(queries.row(i % queries.size()), e, o.beam_size, max_k);
  const std::size_t samples = std::max(queries.size(), o.min_latency_samples);
  std::vector<double> rec, rer, lat;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto res = retrieve(queries.row(i % queries.size()), e, o.beam_size, max_k);
    rec.push_back(res.t_recall_ms);
    rer.push_back(res.t_rerank_ms);
    lat.push_back(res.t_latency_ms);
  }
  r.recall_ms = latency_stats(rec);
  r.rerank_ms = latency_stats(rer);
  r.latency_ms = latency_stats(lat);
  r.storage = storage_report(*e.trie, o.feature_dim ? o.feature_dim : e.videos->dimension(), o.frames);
  return r;
}

inline json to_json(const LatencyStats& s) {
  return json{{"mean", s.mean}, {"median", s.median}, {"p95", s.p95}, {"samples", s.samples}};
}

/// Deterministic part of a report (everything but wall-clock timings).
inline json metrics_json(const EvalReport& r) {
  json recall = json::object();
  for (const auto& [k, v] : r.recall) recall["R@" + std::to_string(k)] = v;
  return json{{"setting", setting_name(r.setting)},
              {"queries", r.queries},
              {"pool", r.pool},
              {"beam_size", r.beam_size},
              {"recall", recall},
              {"candidates", {{"mean", r.mean_candidates}, {"min", r.min_candidates}, {"max", r.max_candidates}}},
              {"storage", to_json(r.storage)}};
}

inline json to_json(const EvalReport& r) {
  json j = metrics_json(r);
  j["latency_ms"] = {{"recall", to_json(r.recall_ms)}, {"rerank", to_json(r.rerank_ms)}, {"total", to_json(r.latency_ms)}};
  return j;
}

inline std::string report_text(const EvalReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "setting %s  queries %zu  pool %zu  beam %zu\n", setting_name(r.setting), r.queries,
                r.pool, r.beam_size);
  out += buf;
  for (const auto& [k, v] : r.recall) {
    std::snprintf(buf, sizeof buf, "  R@%-4zu %8.2f\n", k, v);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  candidates  mean %.1f  min %zu  max %zu\n", r.mean_candidates, r.min_candidates,
                r.max_candidates);
  out += buf;
  out += "  latency ms      mean    median       p95\n";
  for (const auto& [name, s] : {std::pair<const char*, const LatencyStats*>{"recall", &r.recall_ms},
                                {"rerank", &r.rerank_ms},
                                {"total", &r.latency_ms}}) {
    std::snprintf(buf, sizeof buf, "  %-10s %9.3f %9.3f %9.3f\n", name, s->mean, s->median, s->p95);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  storage  dense %zu B  ids %zu B  index %zu B  ratio %s (ids) %s (index)\n",
                r.storage.dense_video_bytes, r.storage.id_payload_bytes, r.storage.index_bytes,
                format_ratio(r.storage.video_ratio_payload).c_str(), format_ratio(r.storage.video_ratio_index).c_str());
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// Scaling benchmark
// ---------------------------------------------------------------------------

struct ScalingRow {
  std::size_t n = 0;
  double t_recall_ms = 0.0;      // beam search + dedup, mean per query
  double t_dense_scan_ms = 0.0;  // exhaustive cosine scan, mean per query
  double decode_steps = 0.0;     // mean per query
};

struct LinearFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw invalid_argument("linear_fit needs at least two matched points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx == 0.0 ? 0.0 : sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

/// Everything the benchmark needs at one corpus size.
struct BenchSetup {
  Engine engine;
  const FeatureStore* queries = nullptr;
};

struct ScalingOptions {
  std::size_t beam_size = 100;
  std::size_t top_k = 10;
  std::size_t warmup = 10;
  std::size_t queries = 100;
  std::size_t repeats = 3;  // per-query timings are the minimum over repeats
};

/// Times generative recall and the dense scan at each size. `factory` must
/// keep the returned setup's referents alive until the next call.
inline std::vector<ScalingRow> scaling_bench(const std::vector<std::size_t>& sizes,
                                             const std::function<BenchSetup(std::size_t)>& factory,
                                             const ScalingOptions& o) {
  std::vector<ScalingRow> rows;
  for (std::size_t n : sizes) {
    if (n == 0) throw invalid_argument("scaling_bench: corpus size 0");
    const auto setup = factory(n);
    const auto& e = setup.engine;
    const auto& qs = *setup.queries;
    if (qs.empty()) throw invalid_argument("scaling_bench: no queries");
    const std::size_t nq = std::min(o.queries, qs.size());
    for (std::size_t i = 0; i < o.warmup; ++i) {
      beam_search(*e.params, *e.trie, qs.row(i % qs.size()), o.beam_size);
      dense_scan(qs.row(i % qs.size()), *e.videos, o.top_k);
    }
    ScalingRow row;
    row.n = n;
    for (std::size_t q = 0; q < nq; ++q) {
      double best_r = INFINITY, best_d = INFINITY;
      for (std::size_t rep = 0; rep < std::max<std::size_t>(1, o.repeats); ++rep) {
        BeamStats st;
        const auto t0 = std::chrono::steady_clock::now();
        const auto beams = beam_search(*e.params, *e.trie, qs.row(q), o.beam_size, &st);
        const auto cands = dedup_candidates(beams, *e.trie);
        const auto t1 = std::chrono::steady_clock::now();
        const auto top = dense_scan(qs.row(q), *e.videos, o.top_k);
        const auto t2 = std::chrono::steady_clock::now();
        best_r = std::min(best_r, elapsed_ms(t0, t1));
        best_d = std::min(best_d, elapsed_ms(t1, t2));
        if (rep == 0) row.decode_steps += static_cast<double>(st.decode_steps);
        (void)cands;
        (void)top;
      }
      row.t_recall_ms += best_r;
      row.t_dense_scan_ms += best_d;
    }
    row.t_recall_ms /= static_cast<double>(nq);
    row.t_dense_scan_ms /= static_cast<double>(nq);
    row.decode_steps /= static_cast<double>(nq);
    rows.push_back(row);
  }
  return rows;
}

inline std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::string out = "n,t_recall_ms,t_dense_scan_ms,decode_steps\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.1f\n", r.n, r.t_recall_ms, r.t_dense_scan_ms, r.decode_steps);
    out += buf;
  }
  return out;
}

}  // namespace grdr

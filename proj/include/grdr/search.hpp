#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_set>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/feature_store.hpp"
#include "grdr/retriever.hpp"
#include "grdr/trie_index.hpp"

namespace grdr {

struct BeamResult {
  SemanticId id;
  double log_prob = 0.0;
  std::uint32_t node = 0;  // trie leaf
};

struct BeamStats {
  std::size_t decode_steps = 0;  // decoder evaluations across all steps
};

namespace detail {

struct Hyp {
  std::vector<Code> prefix;
  double log_prob;
  std::uint32_t node;
};

/// Higher log-prob first; equal scores ordered by the lexicographically
/// smaller code sequence.
inline bool better(const Hyp& a, const Hyp& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.prefix < b.prefix;
}

}  // namespace detail

/// Trie-constrained beam search of exactly M steps. Each step scores every
/// allowed child of every live hypothesis by the full-softmax log-prob of its
/// code and keeps the best B.
inline std::vector<BeamResult> beam_search(const ModelParams<float>& p, const TrieIndex& trie,
                                           std::span<const float> query, std::size_t beam_size,
                                           BeamStats* stats = nullptr) {
  if (beam_size == 0) throw invalid_argument("beam size must be >= 1");
  if (trie.empty()) throw invalid_argument("beam search over an empty index");
  if (trie.num_layers() != p.num_layers || trie.codebook_size() != p.codebook_size)
    throw invalid_argument("index shape (M=" + std::to_string(trie.num_layers()) + ", K=" +
                           std::to_string(trie.codebook_size()) + ") does not match the model");
  const CodebookView cb(p);
  const auto ctx = query_context(p, query);
  const double tau = p.tau[0];
  std::vector<detail::Hyp> beams{{{}, 0.0, TrieIndex::kRoot}};
  std::vector<detail::Hyp> next;
  for (std::size_t m = 0; m < p.num_layers; ++m) {
    next.clear();
    for (const auto& b : beams) {
      const auto codes = trie.child_codes(b.node);
      if (codes.empty()) continue;
      const auto h = decode_step(p, ctx, b.prefix);
      if (stats) ++stats->decode_steps;
      const auto d = code_probs(std::span<const double>(h), cb, m, tau);
      const auto kids = trie.children(b.node);
      for (std::size_t i = 0; i < codes.size(); ++i) {
        detail::Hyp hyp{b.prefix, b.log_prob + clamped_log(d.probs[codes[i]]), kids[i]};
        hyp.prefix.push_back(codes[i]);
        next.push_back(std::move(hyp));
      }
    }
    if (next.size() > beam_size) {
      std::nth_element(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(beam_size), next.end(),
                       detail::better);
      next.resize(beam_size);
    }
    std::sort(next.begin(), next.end(), detail::better);
    beams.swap(next);
  }
  std::vector<BeamResult> out;
  out.reserve(beams.size());
  for (auto& b : beams) out.push_back({SemanticId{std::move(b.prefix)}, b.log_prob, b.node});
  return out;
}

/// Exact joint log-prob of one full id (the sum the beam accumulates).
inline double joint_log_prob(const ModelParams<float>& p, std::span<const float> query, const SemanticId& id) {
  const CodebookView cb(p);
  const auto ctx = query_context(p, query);
  double lp = 0.0;
  for (std::size_t m = 0; m < id.codes.size(); ++m) {
    const auto h = decode_step(p, ctx, std::span<const Code>(id.codes).subspan(0, m));
    const auto d = code_probs(std::span<const double>(h), cb, m, p.tau[0]);
    lp = lp + clamped_log(d.probs[id.codes[m]]);
  }
  return lp;
}

struct Candidate {
  std::uint64_t video_id = 0;
  SemanticId id;        // first id that surfaced the video
  std::uint8_t view = 0;
  double log_prob = 0.0;
  double score = 0.0;   // rerank score
};

/// Flattens postings in beam order and keeps each video's first occurrence.
inline std::vector<Candidate> dedup_candidates(const std::vector<BeamResult>& ranked, const TrieIndex& trie) {
  std::vector<Candidate> out;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& r : ranked)
    for (const auto& p : trie.postings(r.node))
      if (seen.insert(p.video_id).second) out.push_back({p.video_id, r.id, p.view_id, r.log_prob, 0.0});
  return out;
}

/// Pluggable rerank scorer; the default is cosine over stored video vectors.
using RerankScorer = std::function<double(std::span<const float> query, std::uint64_t video_id)>;

inline RerankScorer cosine_scorer(const FeatureStore& videos) {
  return [&videos](std::span<const float> q, std::uint64_t vid) {
    if (!videos.contains(vid)) throw invalid_argument("rerank: candidate video " + std::to_string(vid) + " not in store");
    return cosine(q, videos.row(videos.index_of(vid)));
  };
}

/// Orders candidates by descending score, ties by ascending video id, and
/// keeps the first `top_k` (all when 0).
inline std::vector<Candidate> rerank(std::span<const float> query, std::vector<Candidate> candidates,
                                     const RerankScorer& scorer, std::size_t top_k) {
  for (auto& c : candidates) c.score = scorer(query, c.video_id);
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.video_id < b.video_id;
  });
  if (top_k && candidates.size() > top_k) candidates.resize(top_k);
  return candidates;
}

struct Engine {
  const ModelParams<float>* params = nullptr;
  const TrieIndex* trie = nullptr;
  const FeatureStore* videos = nullptr;
  RerankScorer scorer;  // cosine over `videos` when empty
  std::size_t max_candidates = 0;  // rerank budget: first N deduped videos in beam order; 0 keeps all
};

struct RetrievalResult {
  std::vector<Candidate> ranked;
  std::size_t candidate_count = 0;
  std::size_t decode_steps = 0;
  double t_recall_ms = 0.0, t_rerank_ms = 0.0, t_latency_ms = 0.0;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

/// Generative recall (beam search + dedup) followed by dense rerank.
inline RetrievalResult retrieve(std::span<const float> query, const Engine& e, std::size_t beam_size,
                                std::size_t top_k) {
  RetrievalResult r;
  const auto t0 = std::chrono::steady_clock::now();
  BeamStats stats;
  const auto beams = beam_search(*e.params, *e.trie, query, beam_size, &stats);
  auto candidates = dedup_candidates(beams, *e.trie);
  if (e.max_candidates && candidates.size() > e.max_candidates) candidates.resize(e.max_candidates);
  const auto t1 = std::chrono::steady_clock::now();
  r.candidate_count = candidates.size();
  r.decode_steps = stats.decode_steps;
  r.ranked = rerank(query, std::move(candidates), e.scorer ? e.scorer : cosine_scorer(*e.videos), top_k);
  const auto t2 = std::chrono::steady_clock::now();
  r.t_recall_ms = elapsed_ms(t0, t1);
  r.t_rerank_ms = elapsed_ms(t1, t2);
  r.t_latency_ms = r.t_recall_ms + r.t_rerank_ms;
  return r;
}

inline json result_json(std::uint64_t query_id, const RetrievalResult& r) {
  json ids = json::array(), scores = json::array();
  for (const auto& c : r.ranked) {
    ids.push_back(c.video_id);
    scores.push_back(c.score);
  }
  return json{{"query_id", query_id},       {"ranked", ids},
              {"scores", scores},           {"candidate_count", r.candidate_count},
              {"t_recall_ms", r.t_recall_ms}, {"t_rerank_ms", r.t_rerank_ms},
              {"t_latency_ms", r.t_latency_ms}};
}

/// Exhaustive cosine scan over the whole store, top-k by the rerank order.
inline std::vector<std::pair<double, std::uint64_t>> dense_scan(std::span<const float> query, const FeatureStore& videos,
                                                                std::size_t top_k) {
  std::vector<std::pair<double, std::uint64_t>> all(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) all[i] = {cosine(query, videos.row(i)), videos.id(i)};
  auto cmp = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  const std::size_t k = std::min(top_k ? top_k : all.size(), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), cmp);
  all.resize(k);
  return all;
}

}  // namespace grdr

#include <gtest/gtest.h>

#include <random>

#include "grdr/search.hpp"
#include "oracles.hpp"

using namespace grdr;
using grdr::testing::exhaustive_ranking;

namespace {

TrainConfig tiny(std::uint32_t layers = 3, std::uint32_t k = 8) {
  TrainConfig c;
  c.num_views = 2;
  c.num_layers = layers;
  c.codebook_size = k;
  c.latent_dim = 5;
  c.hidden_dim = 7;
  return c;
}

std::vector<float> random_query(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::map<std::uint64_t, SemanticIdSet> random_ids(std::size_t videos, std::size_t views, std::size_t m, std::size_t k,
                                                  std::mt19937_64& rng) {
  std::uniform_int_distribution<int> code(0, static_cast<int>(k) - 1);
  std::map<std::uint64_t, SemanticIdSet> out;
  for (std::size_t v = 0; v < videos; ++v) {
    SemanticIdSet set(views);
    for (auto& id : set)
      for (std::size_t l = 0; l < m; ++l) id.codes.push_back(static_cast<Code>(code(rng)));
    out[v] = set;
  }
  return out;
}

FeatureStore random_videos(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  FeatureStore s(StoreKind::video, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < n; ++i) s.add_video(i, random_query(d, rng));
  return s;
}

}  // namespace

TEST(BeamSearch, WidthOneIsGreedyWhenTheTrieIsComplete) {
  std::mt19937_64 rng(1);
  auto p = init_model(4, tiny(2, 3), rng);
  std::map<std::uint64_t, SemanticIdSet> ids;
  std::uint64_t vid = 0;
  for (Code a = 0; a < 3; ++a)
    for (Code b = 0; b < 3; ++b) ids[vid++] = {SemanticId{{a, b}}};
  const auto t = build_trie(ids, 2, 3);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_query(4, rng);
    const auto r = beam_search(p, t, q, 1);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].id, greedy_decode(p, q));
  }
}

TEST(BeamSearch, WideBeamEqualsTheExhaustiveOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = init_model(4, tiny(), rng);
    const auto t = build_trie(random_ids(40, 2, 3, 8, rng), 3, 8);
    const auto q = random_query(4, rng);
    const auto oracle = exhaustive_ranking(p, t, q);
    BeamStats stats;
    const auto r = beam_search(p, t, q, t.leaf_count() + 3, &stats);
    ASSERT_EQ(r.size(), oracle.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(r[i].id, oracle[i].id) << "trial " << trial << " rank " << i;
      EXPECT_EQ(r[i].log_prob, oracle[i].log_prob);
    }
  }
}

TEST(BeamSearch, EveryResultResolvesToPostings) {
  std::mt19937_64 rng(3);
  auto p = init_model(4, tiny(3, 16), rng);
  const auto t = build_trie(random_ids(300, 4, 3, 16, rng), 3, 16);
  for (std::size_t beam : {1u, 5u, 40u}) {
    const auto q = random_query(4, rng);
    const auto r = beam_search(p, t, q, beam);
    EXPECT_LE(r.size(), beam);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_FALSE(t.resolve(r[i].id).empty());
      EXPECT_EQ(&t.postings(r[i].node), &t.resolve(r[i].id));
      if (i) EXPECT_GE(r[i - 1].log_prob, r[i].log_prob);
    }
  }
}

TEST(BeamSearch, SingleVideoCorpusAlwaysReturnsIt) {
  std::mt19937_64 rng(4);
  auto p = init_model(4, tiny(), rng);
  const SemanticId only{{7, 0, 3}};
  const auto t = build_trie({{42, {only}}}, 3, 8);
  for (int i = 0; i < 10; ++i) {
    const auto r = beam_search(p, t, random_query(4, rng), 10);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].id, only);
  }
}

TEST(BeamSearch, Guards) {
  std::mt19937_64 rng(5);
  auto p = init_model(4, tiny(), rng);
  const auto q = random_query(4, rng);
  const auto t = build_trie(random_ids(5, 1, 3, 8, rng), 3, 8);
  EXPECT_THROW(beam_search(p, t, q, 0), Error);
  EXPECT_THROW(beam_search(p, build_trie({}, 3, 8), q, 4), Error);
  EXPECT_THROW(beam_search(p, build_trie(random_ids(5, 1, 2, 8, rng), 2, 8), q, 4), Error);
}

TEST(Dedup, KeepsFirstOccurrenceInBeamOrder) {
  const SemanticId a{{0, 0}}, b{{0, 1}}, c{{1, 1}};
  const auto t = build_trie({{1, {a, b}}, {2, {b, c}}, {3, {c, a}}}, 2, 2);
  std::vector<BeamResult> ranked;
  for (const auto& id : {b, a, c}) ranked.push_back({id, -static_cast<double>(ranked.size()), *t.find(id.codes)});
  const auto out = dedup_candidates(ranked, t);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].video_id, 1u);
  EXPECT_EQ(out[0].view, 1);
  EXPECT_EQ(out[1].video_id, 2u);
  EXPECT_EQ(out[1].id, b);
  EXPECT_EQ(out[2].video_id, 3u);
  EXPECT_EQ(out[2].id, a);
}

TEST(Dedup, MatchesAQuadraticOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto ids = random_ids(1 + rng() % 20, 1 + rng() % 4, 2, 3, rng);
    const auto t = build_trie(ids, 2, 3);
    std::vector<BeamResult> ranked;
    for (const auto& [id, list] : t.leaves())
      if (rng() % 3) ranked.push_back({id, 0.0, *t.find(id.codes)});
    std::shuffle(ranked.begin(), ranked.end(), rng);
    std::vector<std::uint64_t> expect;
    for (const auto& r : ranked)
      for (const auto& p : t.postings(r.node))
        if (std::find(expect.begin(), expect.end(), p.video_id) == expect.end()) expect.push_back(p.video_id);
    const auto out = dedup_candidates(ranked, t);
    ASSERT_EQ(out.size(), expect.size());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].video_id, expect[i]);
  }
}

TEST(Rerank, OrdersByScoreThenId) {
  const std::map<std::uint64_t, double> score = {{1, 0.9}, {2, 0.1}, {3, 0.5}, {4, 0.5}};
  RerankScorer s = [&](std::span<const float>, std::uint64_t v) { return score.at(v); };
  std::vector<Candidate> c;
  for (std::uint64_t v : {4, 2, 3, 1}) c.push_back({v, {}, 0, 0.0, 0.0});
  const std::vector<float> q = {1.0f};
  const auto all = rerank(q, c, s, 0);
  std::vector<std::uint64_t> order;
  for (const auto& x : all) order.push_back(x.video_id);
  EXPECT_EQ(order, (std::vector<std::uint64_t>{1, 3, 4, 2}));
  EXPECT_EQ(rerank(q, c, s, 2).size(), 2u);
}

TEST(Rerank, CosineOverAllCandidatesMatchesDenseScan) {
  std::mt19937_64 rng(7);
  const auto videos = random_videos(200, 6, rng);
  for (int i = 0; i < 20; ++i) {
    const auto q = random_query(6, rng);
    std::vector<Candidate> c;
    for (std::size_t v = 0; v < videos.size(); ++v) c.push_back({videos.id(v), {}, 0, 0.0, 0.0});
    const auto got = rerank(q, c, cosine_scorer(videos), 10);
    const auto want = dense_scan(q, videos, 10);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(got[k].video_id, want[k].second);
  }
  std::vector<Candidate> missing{{999, {}, 0, 0.0, 0.0}};
  EXPECT_THROW(rerank(random_query(6, rng), missing, cosine_scorer(videos), 1), Error);
}

TEST(Retrieve, BudgetLatencyAndDecodeSteps) {
  std::mt19937_64 rng(8);
  auto p = init_model(6, tiny(3, 8), rng);
  const auto videos = random_videos(300, 6, rng);
  std::map<std::uint64_t, SemanticIdSet> ids;
  const auto raw = random_ids(300, 2, 3, 8, rng);
  for (std::size_t v = 0; v < 300; ++v) ids[videos.id(v)] = raw.at(v);
  const auto t = build_trie(ids, 3, 8);
  Engine e{&p, &t, &videos, {}, 0};
  const auto q = random_query(6, rng);
  const std::size_t beam = 20;
  const auto r = retrieve(q, e, beam, 10);
  EXPECT_EQ(r.ranked.size(), 10u);
  EXPECT_EQ(r.t_latency_ms, r.t_recall_ms + r.t_rerank_ms);
  // Root fans out to all 8 codes, so every later step expands B live beams.
  EXPECT_EQ(r.decode_steps, 1u + 8u + beam);
  for (std::size_t i = 1; i < r.ranked.size(); ++i) EXPECT_GE(r.ranked[i - 1].score, r.ranked[i].score);
  e.max_candidates = 5;
  const auto capped = retrieve(q, e, beam, 10);
  EXPECT_EQ(capped.candidate_count, 5u);
  EXPECT_EQ(capped.ranked.size(), 5u);
  const auto j = result_json(3, capped);
  EXPECT_EQ(j.at("ranked").size(), 5u);
}

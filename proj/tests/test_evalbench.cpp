#include <gtest/gtest.h>

#include <random>

#include "grdr/evalbench.hpp"

using namespace grdr;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.num_views = 2;
  c.num_layers = 2;
  c.codebook_size = 6;
  c.latent_dim = 4;
  c.hidden_dim = 6;
  return c;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

/// Random model, random ids and noisy copies of videos as queries.
struct World {
  ModelParams<float> params;
  FeatureStore videos{StoreKind::video, 5}, queries{StoreKind::query, 5};
  TrieIndex trie{2, 6};
  Engine engine() const { return Engine{&params, &trie, &videos, {}, 0}; }
};

World make_world(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  World w;
  w.params = init_model(5, tiny(), rng);
  std::map<std::uint64_t, SemanticIdSet> ids;
  std::uniform_int_distribution<int> code(0, 5);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  for (std::size_t v = 0; v < n; ++v) {
    auto f = random_vec(5, rng);
    w.videos.add_video(10 + v, f);
    SemanticIdSet set(2);
    for (auto& id : set) id.codes = {static_cast<Code>(code(rng)), static_cast<Code>(code(rng))};
    ids[10 + v] = set;
    for (auto& x : f) x += noise(rng);
    w.queries.add_query(v, 10 + v, "", f);
  }
  w.trie = build_trie(ids, 2, 6);
  return w;
}

}  // namespace

TEST(Recall, TrivialCases) {
  EXPECT_EQ(recall_at_k({{1, 2, 3}, {4, 5}}, {1, 5}, 1), 50.0);
  EXPECT_EQ(recall_at_k({{1, 2, 3}, {4, 5}}, {1, 5}, 2), 100.0);
  EXPECT_EQ(recall_at_k({{}, {7}}, {3, 7}, 10), 50.0);
  EXPECT_THROW(recall_at_k({{1}}, {1, 2}, 1), Error);
  EXPECT_THROW(recall_at_k({}, {}, 1), Error);
}

TEST(Recall, RandomRankingsStayWithinThreeSigmaOfChance) {
  std::mt19937_64 rng(1);
  const std::size_t pool = 50, n = 10000;
  std::vector<std::uint64_t> base(pool);
  for (std::size_t i = 0; i < pool; ++i) base[i] = i;
  std::vector<std::vector<std::uint64_t>> rankings;
  std::vector<std::uint64_t> targets;
  for (std::size_t q = 0; q < n; ++q) {
    auto r = base;
    std::shuffle(r.begin(), r.end(), rng);
    rankings.push_back(r);
    targets.push_back(rng() % pool);
  }
  for (std::size_t k : {1u, 5u, 10u}) {
    const double p = static_cast<double>(k) / pool;
    const double sigma = 100.0 * std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(recall_at_k(rankings, targets, k), 100.0 * p, 3 * sigma) << "k=" << k;
  }
}

TEST(Latency, Statistics) {
  const auto s = latency_stats({5, 1, 3, 2, 4});
  EXPECT_EQ(s.samples, 5u);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  EXPECT_DOUBLE_EQ(s.p95, 5.0);
  std::vector<double> hundred;
  for (int i = 1; i <= 100; ++i) hundred.push_back(i);
  EXPECT_DOUBLE_EQ(latency_stats(hundred).p95, 95.0);
  EXPECT_DOUBLE_EQ(latency_stats(hundred).median, 50.5);
  EXPECT_EQ(latency_stats({}).samples, 0u);
}

TEST(LinearFit, ExactLineAndNoise) {
  const auto f = linear_fit({1, 2, 3, 4}, {3, 5, 7, 9});
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.intercept, 1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_LT(linear_fit({1, 2, 3, 4}, {1, 4, 1, 4}).r2, 0.5);
  EXPECT_THROW(linear_fit({1}, {1}), Error);
}

TEST(RunEval, MonotoneDeterministicAndGuarded) {
  const auto w = make_world(120, 2);
  EvalOptions o;
  o.beam_size = 8;
  o.min_latency_samples = 20;
  o.warmup = 2;
  const auto a = run_eval(w.engine(), w.queries, o);
  const auto b = run_eval(w.engine(), w.queries, o);
  EXPECT_LE(a.at(1), a.at(5));
  EXPECT_LE(a.at(5), a.at(10));
  EXPECT_EQ(metrics_json(a), metrics_json(b));
  EXPECT_EQ(a.pool, 120u);
  EXPECT_EQ(a.latency_ms.samples, 120u);
  EXPECT_LE(a.min_candidates, a.max_candidates);
  EXPECT_THROW(a.at(3), Error);
  EXPECT_EQ(to_json(a).at("latency_ms").at("total").at("samples"), 120u);
  EXPECT_FALSE(report_text(a).empty());

  FeatureStore stray(StoreKind::query, 5);
  stray.add_query(0, 99999, "", std::vector<float>(5, 1.0f));
  EXPECT_THROW(run_eval(w.engine(), stray, o), Error);
}

TEST(RunEval, WideBeamCoversThePool) {
  // 36 leaves at most, so a beam of 36 surfaces every video and the rerank
  // reduces to the dense scan.
  const auto w = make_world(60, 3);
  EvalOptions o;
  o.beam_size = 36;
  o.min_latency_samples = 0;
  o.warmup = 0;
  const auto r = run_eval(w.engine(), w.queries, o);
  EXPECT_EQ(r.min_candidates, 60u);
  std::vector<std::vector<std::uint64_t>> dense;
  std::vector<std::uint64_t> targets;
  for (std::size_t q = 0; q < w.queries.size(); ++q) {
    dense.emplace_back();
    for (const auto& [s, id] : dense_scan(w.queries.row(q), w.videos, 10)) dense.back().push_back(id);
    targets.push_back(w.queries.target(q));
  }
  EXPECT_EQ(r.at(10), recall_at_k(dense, targets, 10));
}

TEST(Setting, NamesRoundTrip) {
  EXPECT_EQ(setting_from_name(setting_name(EvalSetting::inductive)), EvalSetting::inductive);
  EXPECT_EQ(setting_from_name("full_corpus"), EvalSetting::full_corpus);
  EXPECT_THROW(setting_from_name("all"), Error);
}

TEST(ScalingBench, OneRowPerSizeAndGuards) {
  std::map<std::size_t, World> worlds;
  auto factory = [&](std::size_t n) {
    auto [it, _] = worlds.emplace(n, make_world(n, n));
    return BenchSetup{it->second.engine(), &it->second.queries};
  };
  ScalingOptions o;
  o.beam_size = 4;
  o.queries = 5;
  o.warmup = 1;
  o.repeats = 1;
  const auto rows = scaling_bench({20, 40}, factory, o);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].n, 40u);
  EXPECT_GT(rows[0].decode_steps, 0.0);
  const auto csv = scaling_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,t_recall_ms,t_dense_scan_ms,decode_steps");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_THROW(scaling_bench({0}, factory, o), Error);
}

#include <gtest/gtest.h>

#include <random>

#include "finite_difference.hpp"
#include "grdr/retriever.hpp"

using namespace grdr;
using grdr::testing::check_group;
using grdr::testing::GradCheckStats;

namespace {

TrainConfig tiny(std::uint32_t layers = 3, std::uint32_t k = 6, std::uint32_t dz = 5) {
  TrainConfig c;
  c.num_views = 2;
  c.num_layers = layers;
  c.codebook_size = k;
  c.latent_dim = dz;
  c.hidden_dim = 7;
  return c;
}

std::vector<float> random_query(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

void check_all_groups(ModelParams<float>& p, ModelParams<double>& g, const std::function<double()>& loss,
                      GradCheckStats& stats) {
  zip_groups(p, g, [&](const std::string& name, std::vector<float>& pv, std::vector<double>& gv) {
    check_group(name, pv, gv, loss, stats, 24);
  });
}

}  // namespace

TEST(DecodeStep, BaseCaseAndPrefixSensitivity) {
  std::mt19937_64 rng(1);
  auto p = init_model(4, tiny(), rng);
  auto q = random_query(4, rng);
  const auto ctx = query_context(p, q);
  const auto h1 = decode_step(p, ctx, {});
  EXPECT_EQ(h1.size(), 5u);
  const Code a[] = {1}, b[] = {4};
  EXPECT_NE(decode_step(p, ctx, a), decode_step(p, ctx, b));
}

TEST(DecodeStep, CausalInTheConsumedPrefix) {
  std::mt19937_64 rng(2);
  auto p = init_model(4, tiny(), rng);
  auto q = random_query(4, rng);
  const auto ctx = query_context(p, q);
  std::vector<Code> id = {2, 3, 0};
  const auto h = decode_step(p, ctx, std::span<const Code>(id).subspan(0, 2));
  id[2] = 5;  // a slot the step has not consumed
  EXPECT_EQ(decode_step(p, ctx, std::span<const Code>(id).subspan(0, 2)), h);
}

TEST(DecodeStep, RejectsBadPrefixes) {
  std::mt19937_64 rng(3);
  auto p = init_model(4, tiny(), rng);
  const auto ctx = query_context(p, random_query(4, rng));
  const Code too_long[] = {0, 0, 0};
  const Code out_of_range[] = {6};
  EXPECT_THROW(decode_step(p, ctx, too_long), Error);
  EXPECT_THROW(decode_step(p, ctx, out_of_range), Error);
}

TEST(CodeProbs, AnalyticTwoCodeCase) {
  std::vector<std::vector<float>> layers = {{1, 0, -1, 0}};
  CodebookView cb(layers, 2, 2);
  const double h[] = {2.0, 0.0};
  auto d = code_probs(std::span<const double>(h), cb, 0, 1.0);
  const double e = std::exp(1.0), ei = std::exp(-1.0);
  EXPECT_NEAR(d.probs[0], e / (e + ei), 1e-12);
  EXPECT_NEAR(d.probs[1], ei / (e + ei), 1e-12);
  EXPECT_NEAR(d.probs[0], 0.8808, 1e-4);
}

TEST(CodeProbs, NormalizationScaleInvarianceAndHighTemperature) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = trial % 2 == 0 ? 2 : 16;
    std::vector<std::vector<float>> layers = {std::vector<float>(k * 3)};
    for (auto& v : layers[0]) v = g(rng);
    CodebookView cb(layers, k, 3);
    auto h = random_vec(3, rng);
    const double tau = trial % 2 == 0 ? 10.0 : 0.07;
    auto d = code_probs(std::span<const double>(h), cb, 0, tau);
    double sum = 0;
    for (double pr : d.probs) {
      EXPECT_GT(pr, 0.0);
      sum += pr;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    auto hs = h;
    for (auto& v : hs) v *= 37.5;
    auto ds = code_probs(std::span<const double>(hs), cb, 0, tau);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(ds.probs[i], d.probs[i], 1e-7);
    if (k == 2) {
      EXPECT_LT(std::abs(d.probs[0] - d.probs[1]), 0.25);
    }
  }
}

TEST(CodeProbs, ZeroNormIsUniformAndFlagged) {
  std::vector<std::vector<float>> layers = {{1, 0, 0, 1, 1, 1}};
  CodebookView cb(layers, 3, 2);
  const double h[] = {0.0, 0.0};
  auto d = code_probs(std::span<const double>(h), cb, 0, 0.07);
  EXPECT_TRUE(d.degenerate);
  for (double pr : d.probs) EXPECT_DOUBLE_EQ(pr, 1.0 / 3.0);
}

TEST(CeLoss, PerfectAndUniformPredictions) {
  std::mt19937_64 rng(5);
  {
    auto c = tiny(1, 128, 4);
    auto p = init_model(3, c, rng);
    for (std::size_t k = 0; k < 128; ++k)
      for (std::size_t i = 0; i < 4; ++i) p.codebook[0][k * 4 + i] = i == 0 ? 1.0f : 0.0f;
    auto q = random_query(3, rng);
    EXPECT_NEAR(ce_loss(p, q, SemanticId{{17}}, 0), std::log(128.0), 1e-9);
    EXPECT_NEAR(std::log(128.0), 4.852, 1e-3);
  }
  {
    auto c = tiny(1, 4, 2);
    auto p = init_model(3, c, rng);
    auto q = random_query(3, rng);
    const auto h = decode_step(p, query_context(p, q), {});
    // Target entry along h, the others against it; tau at its floor.
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 2; ++i) p.codebook[0][k * 2 + i] = static_cast<float>(k == 2 ? h[i] : -h[i]);
    p.tau[0] = kTauMin;
    EXPECT_LT(ce_loss(p, q, SemanticId{{2}}, 0), 1e-9);
  }
}

TEST(CeLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 8; ++trial) {
    auto p = init_model(4, tiny(), rng);
    p.tau[0] = 0.5f;
    auto q = random_query(4, rng);
    const SemanticId target{{static_cast<Code>(trial % 6), 3, static_cast<Code>((trial * 5) % 6)}};
    const std::size_t layer = trial % 3;
    auto g = p.zeros_like<double>();
    ce_loss(p, q, target, layer, &g);
    GradCheckStats stats;
    check_all_groups(p, g, [&] { return ce_loss(p, q, target, layer); }, stats);
    EXPECT_EQ(stats.failed, 0u) << stats.first_failure;
    EXPECT_GT(stats.checked, 50u);
  }
}

TEST(ClLoss, AnalyticCases) {
  std::vector<std::vector<double>> z = {{1, 0}, {-1, 0}}, h = {{2, 0}, {-3, 0}};
  auto r = cl_loss(z, h, 1.0);
  const double e = std::exp(1.0), ei = std::exp(-1.0);
  EXPECT_NEAR(r.loss, -std::log(e / (e + ei)), 1e-12);
  EXPECT_NEAR(r.loss, 0.1269, 1e-4);

  std::vector<std::vector<double>> same(5, {0.3, -0.2, 0.9});
  EXPECT_NEAR(cl_loss(same, same, 0.07).loss, std::log(5.0), 1e-12);
  EXPECT_THROW(cl_loss({{1.0}}, {{1.0}}, 1.0), Error);
}

TEST(ClLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t b = 2 + trial % 3;
    std::vector<std::vector<double>> z, h;
    for (std::size_t i = 0; i < b; ++i) {
      z.push_back(random_vec(4, rng));
      h.push_back(random_vec(4, rng));
    }
    std::vector<double> tau = {0.3 + 0.1 * trial};
    auto r = cl_loss(z, h, tau[0]);
    GradCheckStats stats;
    auto loss = [&] { return cl_loss(z, h, tau[0], false).loss; };
    for (std::size_t i = 0; i < b; ++i) {
      check_group("z", z[i], r.dz[i], loss, stats);
      check_group("h", h[i], r.dh[i], loss, stats);
    }
    check_group("tau", tau, std::vector<double>{r.dtau}, loss, stats);
    EXPECT_EQ(stats.failed, 0u) << stats.first_failure;
  }
}

TEST(HcLoss, RequiresLaterLayer) {
  std::mt19937_64 rng(8);
  auto p = init_model(4, tiny(), rng);
  auto q = random_query(4, rng);
  auto z = random_vec(5, rng);
  EXPECT_THROW(hc_loss(p, q, z, 0), Error);
}

TEST(HcLoss, PerfectRetentionIsNearZero) {
  std::mt19937_64 rng(9);
  auto c = tiny(2, 3, 3);
  auto p = init_model(4, c, rng);
  auto q = random_query(4, rng);
  const auto h = decode_step(p, query_context(p, q), {});
  // Layer-1 entry 1 points along h and along z; the rest point away.
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 3; ++i) p.codebook[0][k * 3 + i] = static_cast<float>(k == 1 ? h[i] : -h[i]);
  std::vector<double> z(h.begin(), h.end());
  p.tau[0] = kTauMin;
  EXPECT_LT(hc_loss(p, q, z, 1), 1e-9);
}

TEST(HcLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 8; ++trial) {
    auto p = init_model(4, tiny(), rng);
    p.tau[0] = 0.6f;
    auto q = random_query(4, rng);
    auto z = random_vec(5, rng);
    const std::size_t layer = 1 + trial % 2;
    const auto base = quantize(z, CodebookView(p), layer).codes;
    auto g = p.zeros_like<double>();
    std::vector<double> dz(5, 0.0);
    hc_loss(p, q, z, layer, &g, &dz);
    auto loss = [&] {
      if (quantize(z, CodebookView(p), layer).codes != base) return std::nan("");
      return hc_loss(p, q, z, layer);
    };
    GradCheckStats stats;
    check_all_groups(p, g, loss, stats);
    check_group("z", z, dz, loss, stats);
    EXPECT_EQ(stats.failed, 0u) << stats.first_failure;
  }
}

#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grdr/common.hpp"
#include "grdr/nn.hpp"

namespace grdr {

using json = nlohmann::json;

/// Training hyperparameters. N_v, M, K, the epoch schedule, learning rate and
/// batch size default to the published configuration; the lambda weights,
/// beta, tau_init and the desk-scale dimensions are engine defaults.
struct TrainConfig {
  std::uint32_t num_views = 4;       // N_v
  std::uint32_t num_layers = 3;      // M
  std::uint32_t codebook_size = 128; // K
  std::uint32_t latent_dim = 32;     // d_z
  std::uint32_t hidden_dim = 64;
  double beta = 0.25;
  double lambda_ce = 1.0;
  double lambda_hc = 0.5;
  double lambda_rq = 1.0;
  double lambda_rec = 1.0;
  double cl_weight = 1.0;  // 0 disables the alignment loss (ablation switch)
  double tau_init = 0.07;
  std::uint32_t first_align_epochs = 3;
  std::uint32_t align_epochs = 1;
  std::uint32_t train_epochs = 4;
  std::uint32_t batch_size = 512;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::uint32_t kmeans_iters = 20;
  std::uint32_t queries_per_video = 0;  // per-epoch sample of pairs per video; 0 = every pair
  bool frozen_targets = false;          // CE targets fixed per epoch instead of per batch
  bool two_stage = false;               // block retriever gradients into the codebook (ablation)

  void validate() const {
    auto pos = [](double v, const char* name) {
      if (!(v > 0.0)) throw config_error(std::string(name) + " must be > 0");
    };
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0)) throw config_error(std::string(name) + " must be >= 0");
    };
    if (num_views < 1 || num_layers < 1 || codebook_size < 1 || latent_dim < 1 || hidden_dim < 1 ||
        batch_size < 1 || kmeans_iters < 1)
      throw config_error("all counts must be >= 1");
    if (num_views > 255) throw config_error("num_views must fit in one byte");
    if (num_layers > 255) throw config_error("num_layers must fit in one byte");
    if (codebook_size > 65535) throw config_error("codebook_size must fit in two bytes");
    pos(learning_rate, "learning_rate");
    pos(tau_init, "tau_init");
    nonneg(beta, "beta");
    nonneg(lambda_ce, "lambda_ce");
    nonneg(lambda_hc, "lambda_hc");
    nonneg(lambda_rq, "lambda_rq");
    nonneg(lambda_rec, "lambda_rec");
    nonneg(cl_weight, "cl_weight");
    nonneg(weight_decay, "weight_decay");
  }

  std::uint32_t align_epochs_for(std::uint32_t layer) const {
    return layer == 0 ? first_align_epochs : align_epochs;
  }
};

#define GRDR_TRAIN_CONFIG_FIELDS(X)                                                                  \
  X(num_views) X(num_layers) X(codebook_size) X(latent_dim) X(hidden_dim) X(beta) X(lambda_ce)      \
  X(lambda_hc) X(lambda_rq) X(lambda_rec) X(cl_weight) X(tau_init) X(first_align_epochs)            \
  X(align_epochs) X(train_epochs) X(batch_size) X(learning_rate) X(weight_decay) X(seed)            \
  X(kmeans_iters) X(queries_per_video) X(frozen_targets) X(two_stage)

inline json to_json(const TrainConfig& c) {
  json j = json::object();
#define GRDR_PUT(f) j[#f] = c.f;
  GRDR_TRAIN_CONFIG_FIELDS(GRDR_PUT)
#undef GRDR_PUT
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw config_error("train config must be a JSON object");
  static const std::set<std::string> known = {
#define GRDR_NAME(f) #f,
      GRDR_TRAIN_CONFIG_FIELDS(GRDR_NAME)
#undef GRDR_NAME
  };
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw config_error("unknown train config key: " + k);
  TrainConfig c;
  try {
#define GRDR_GET(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    GRDR_TRAIN_CONFIG_FIELDS(GRDR_GET)
#undef GRDR_GET
  } catch (const json::exception& e) {
    throw config_error(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Every learnable tensor of the tokenizer and retriever. The codebook lives
/// here exactly once; both sides read it from the same storage.
template <class T>
struct ModelParams {
  std::size_t feature_dim = 0, latent_dim = 0, hidden_dim = 0, num_views = 0, num_layers = 0, codebook_size = 0;

  std::vector<Mlp<T>> encoders;            // phi_i : d_f -> d_z
  std::vector<Mlp<T>> decoders;            // psi_i : d_z -> d_f
  std::vector<std::vector<T>> codebook;    // per layer, K x d_z

  Linear<T> query_proj;                    // d_f -> d_z
  Mlp<T> step;                             // [ctx ; prefix mean] (2 d_z) -> d_z
  std::vector<T> pos_embed;                // M x hidden
  std::vector<std::vector<T>> prefix_embed;  // per layer, K x d_z (retriever input tables)
  std::vector<T> tau;                      // single learnable temperature

  ModelParams() = default;
  ModelParams(std::size_t d_f, const TrainConfig& c)
      : feature_dim(d_f),
        latent_dim(c.latent_dim),
        hidden_dim(c.hidden_dim),
        num_views(c.num_views),
        num_layers(c.num_layers),
        codebook_size(c.codebook_size) {
    for (std::size_t i = 0; i < num_views; ++i) {
      encoders.emplace_back(d_f, hidden_dim, latent_dim);
      decoders.emplace_back(latent_dim, hidden_dim, d_f);
    }
    codebook.assign(num_layers, std::vector<T>(codebook_size * latent_dim));
    query_proj = Linear<T>(d_f, latent_dim);
    step = Mlp<T>(2 * latent_dim, hidden_dim, latent_dim);
    pos_embed.assign(num_layers * hidden_dim, T{});
    prefix_embed.assign(num_layers, std::vector<T>(codebook_size * latent_dim));
    tau.assign(1, T{});
  }

  /// Same-shaped zero tensor set (used for gradients).
  template <class U>
  ModelParams<U> zeros_like() const {
    ModelParams<U> g;
    g.feature_dim = feature_dim;
    g.latent_dim = latent_dim;
    g.hidden_dim = hidden_dim;
    g.num_views = num_views;
    g.num_layers = num_layers;
    g.codebook_size = codebook_size;
    for (std::size_t i = 0; i < num_views; ++i) {
      g.encoders.emplace_back(feature_dim, hidden_dim, latent_dim);
      g.decoders.emplace_back(latent_dim, hidden_dim, feature_dim);
    }
    g.codebook.assign(num_layers, std::vector<U>(codebook_size * latent_dim));
    g.query_proj = Linear<U>(feature_dim, latent_dim);
    g.step = Mlp<U>(2 * latent_dim, hidden_dim, latent_dim);
    g.pos_embed.assign(num_layers * hidden_dim, U{});
    g.prefix_embed.assign(num_layers, std::vector<U>(codebook_size * latent_dim));
    g.tau.assign(1, U{});
    return g;
  }

  std::span<const T> entry(std::size_t layer, std::size_t k) const {
    return {codebook[layer].data() + k * latent_dim, latent_dim};
  }
};

/// Visits every parameter group of two same-shaped sets in the fixed
/// checkpoint order: encoders, decoders, codebook layers, retriever.
template <class A, class B, class F>
void zip_groups(ModelParams<A>& a, ModelParams<B>& b, F&& f) {
  for (std::size_t i = 0; i < a.num_views; ++i)
    zip_visit(a.encoders[i], b.encoders[i], "encoder." + std::to_string(i), f);
  for (std::size_t i = 0; i < a.num_views; ++i)
    zip_visit(a.decoders[i], b.decoders[i], "decoder." + std::to_string(i), f);
  for (std::size_t l = 0; l < a.num_layers; ++l) f("codebook." + std::to_string(l), a.codebook[l], b.codebook[l]);
  f(std::string("retriever.query_proj.w"), a.query_proj.w, b.query_proj.w);
  f(std::string("retriever.query_proj.b"), a.query_proj.b, b.query_proj.b);
  zip_visit(a.step, b.step, "retriever.step", f);
  f(std::string("retriever.pos_embed"), a.pos_embed, b.pos_embed);
  for (std::size_t l = 0; l < a.num_layers; ++l)
    f("retriever.prefix_embed." + std::to_string(l), a.prefix_embed[l], b.prefix_embed[l]);
  f(std::string("retriever.tau"), a.tau, b.tau);
}

template <class A, class F>
void for_each_group(ModelParams<A>& a, F&& f) {
  zip_groups(a, a, [&](const std::string& name, auto& x, auto&) { f(name, x); });
}

template <class A, class F>
void for_each_group(const ModelParams<A>& a, F&& f) {
  auto& m = const_cast<ModelParams<A>&>(a);
  zip_groups(m, m, [&](const std::string& name, auto& x, auto&) { f(name, std::as_const(x)); });
}

inline constexpr float kTauMin = 1e-3f;
inline constexpr float kTauMax = 10.0f;

/// Random initialization. Codebook layers start as small random entries and
/// are overwritten by k-means before their layer trains.
inline ModelParams<float> init_model(std::size_t feature_dim, const TrainConfig& c, std::mt19937_64& rng) {
  ModelParams<float> p(feature_dim, c);
  for (auto& e : p.encoders) init_mlp(e, rng);
  for (auto& d : p.decoders) init_mlp(d, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  const double cs = 1.0 / std::sqrt(static_cast<double>(c.latent_dim));
  for (auto& layer : p.codebook)
    for (auto& v : layer) v = static_cast<float>(g(rng) * cs);
  init_linear(p.query_proj, rng);
  init_mlp(p.step, rng);
  for (auto& v : p.pos_embed) v = static_cast<float>(g(rng) * 0.1);
  for (auto& layer : p.prefix_embed)
    for (auto& v : layer) v = static_cast<float>(g(rng) * cs);
  p.tau[0] = static_cast<float>(std::clamp(c.tau_init, double{kTauMin}, double{kTauMax}));
  return p;
}

}  // namespace grdr

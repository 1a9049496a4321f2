#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/feature_store.hpp"
#include "grdr/kmeans.hpp"
#include "grdr/model.hpp"
#include "grdr/optimizer.hpp"
#include "grdr/retriever.hpp"
#include "grdr/tokenizer.hpp"

namespace grdr {

// ---------------------------------------------------------------------------
// Query clustering and codebook initialization
// ---------------------------------------------------------------------------

/// Hard assignment of every training query to one view.
struct ClusterAssignment {
  std::uint32_t num_views = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // num_views x dim, in normalized query space
  std::unordered_map<std::uint64_t, std::uint32_t> view_of;

  std::uint32_t view(std::uint64_t query_id) const {
    auto it = view_of.find(query_id);
    if (it == view_of.end()) throw invalid_argument("query " + std::to_string(query_id) + " has no cluster");
    return it->second;
  }
};

/// k-means over unit-normalized query features with one cluster per view.
inline ClusterAssignment cluster_queries(const FeatureStore& queries, std::uint32_t num_views, std::uint64_t seed,
                                         std::size_t iters) {
  if (num_views == 0) throw invalid_argument("cluster_queries: num_views must be positive");
  if (queries.size() < num_views)
    throw invalid_argument("cluster_queries: " + std::to_string(queries.size()) + " queries for " +
                           std::to_string(num_views) + " clusters");
  const std::size_t d = queries.dimension();
  std::vector<double> pts(queries.size() * d);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto row = queries.row(i);
    const double n = norm(row);
    for (std::size_t j = 0; j < d; ++j) pts[i * d + j] = n == 0.0 ? 0.0 : row[j] / n;
  }
  auto km = kmeans(pts, d, num_views, seed, iters);
  ClusterAssignment a;
  a.num_views = num_views;
  a.dim = d;
  a.centroids = std::move(km.centroids);
  for (std::size_t i = 0; i < queries.size(); ++i) a.view_of.emplace(queries.id(i), km.assignment[i]);
  return a;
}

struct CodebookInit {
  std::vector<float> entries;  // K x d_z
  bool padded = false;         // fewer residuals than entries; jittered copies were added
  double inertia = 0.0;
};

/// k-means++ then Lloyd iterations on the residuals; centroids become the
/// layer's entries.
inline CodebookInit init_codebook_layer(const std::vector<double>& residuals, std::size_t dim, std::size_t k,
                                        std::uint64_t seed, std::size_t iters) {
  if (dim == 0 || residuals.empty()) throw invalid_argument("init_codebook_layer: no residuals");
  CodebookInit out;
  const std::size_t n = residuals.size() / dim;
  const std::vector<double>* pts = &residuals;
  std::vector<double> padded;
  if (n < k) {
    out.padded = true;
    padded = residuals;
    double rms = 0.0;
    for (double v : residuals) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(residuals.size()));
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::normal_distribution<double> jitter(0.0, 1e-3 * (rms > 0.0 ? rms : 1.0));
    for (std::size_t i = n; i < k; ++i) {
      const std::size_t src = pick(rng);
      for (std::size_t j = 0; j < dim; ++j) padded.push_back(residuals[src * dim + j] + jitter(rng));
    }
    pts = &padded;
  }
  auto km = kmeans(*pts, dim, k, seed, iters);
  out.entries.resize(k * dim);
  for (std::size_t i = 0; i < k * dim; ++i) out.entries[i] = static_cast<float>(km.centroids[i]);
  out.inertia = km.inertia;
  return out;
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

enum class Phase { align, init, cotrain, done };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::align: return "align";
    case Phase::init: return "init";
    case Phase::cotrain: return "cotrain";
    case Phase::done: return "done";
  }
  return "?";
}

inline Phase phase_from_name(const std::string& s) {
  if (s == "align") return Phase::align;
  if (s == "init") return Phase::init;
  if (s == "cotrain") return Phase::cotrain;
  if (s == "done") return Phase::done;
  throw format_error("unknown training phase '" + s + "'");
}

struct TrainProgress {
  std::uint32_t layer = 0;  // 0-based layer being trained
  Phase phase = Phase::align;
  std::uint32_t epoch = 0;  // epochs completed in the current phase
  std::uint64_t step = 0;   // optimizer steps so far
};

struct LossTerms {
  double total = 0.0, ce = 0.0, hc = 0.0, rq = 0.0, rec = 0.0, cl = 0.0;

  LossTerms& operator+=(const LossTerms& o) {
    total += o.total;
    ce += o.ce;
    hc += o.hc;
    rq += o.rq;
    rec += o.rec;
    cl += o.cl;
    return *this;
  }
  void scale(double f) {
    total *= f;
    ce *= f;
    hc *= f;
    rq *= f;
    rec *= f;
    cl *= f;
  }
};

struct EpochLog {
  std::uint32_t layer = 0;
  Phase phase = Phase::align;
  std::uint32_t epoch = 0;
  std::size_t batches = 0;
  LossTerms mean;  // batch-mean of each term
};

struct TrainState {
  TrainConfig config;
  ModelParams<float> params;
  AdamW opt;
  TrainProgress progress;
  std::mt19937_64 rng;
  std::vector<EpochLog> log;  // not checkpointed
  std::vector<bool> codebook_padded;
  std::string provenance;  // config hash of the run that produced the state; echoed in checkpoints
};

inline TrainState init_state(std::size_t feature_dim, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.rng.seed(config.seed);
  s.params = init_model(feature_dim, config, s.rng);
  s.opt = AdamW(s.params);
  s.codebook_padded.assign(config.num_layers, false);
  return s;
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

struct TrainPair {
  std::uint32_t query = 0;  // row in the query store
  std::uint32_t video = 0;  // row in the video store
  std::uint32_t view = 0;   // cluster of the query
};

struct TrainData {
  const FeatureStore* videos = nullptr;
  const FeatureStore* queries = nullptr;
  ClusterAssignment clusters;
  std::vector<std::vector<TrainPair>> pairs_of_video;  // by video row
  std::size_t pair_count = 0;
};

inline TrainData make_train_data(const FeatureStore& videos, const FeatureStore& queries, ClusterAssignment clusters) {
  if (videos.kind() != StoreKind::video || queries.kind() != StoreKind::query)
    throw invalid_argument("training needs a video store and a query store");
  if (videos.dimension() != queries.dimension())
    throw invalid_argument("video and query feature dimensions differ");
  TrainData d;
  d.videos = &videos;
  d.queries = &queries;
  d.clusters = std::move(clusters);
  d.pairs_of_video.resize(videos.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::uint64_t target = queries.target(q);
    if (!videos.contains(target))
      throw invalid_argument("query " + std::to_string(queries.id(q)) + " targets unknown video " +
                             std::to_string(target));
    const auto v = static_cast<std::uint32_t>(videos.index_of(target));
    d.pairs_of_video[v].push_back({static_cast<std::uint32_t>(q), v, d.clusters.view(queries.id(q))});
    ++d.pair_count;
  }
  return d;
}

/// One epoch's pairs: every pair, or `queries_per_video` sampled per video,
/// then shuffled.
inline std::vector<TrainPair> epoch_pairs(const TrainData& d, std::uint32_t queries_per_video,
                                          std::mt19937_64& rng) {
  std::vector<TrainPair> out;
  out.reserve(d.pair_count);
  for (const auto& list : d.pairs_of_video) {
    if (queries_per_video == 0 || list.size() <= queries_per_video) {
      out.insert(out.end(), list.begin(), list.end());
      continue;
    }
    auto copy = list;
    for (std::size_t i = 0; i < queries_per_video; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(i, copy.size() - 1)(rng);
      std::swap(copy[i], copy[j]);
      out.push_back(copy[i]);
    }
  }
  for (std::size_t i = out.size(); i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(out[i - 1], out[j]);
  }
  return out;
}

/// Contiguous batches; a trailing batch of one pair joins the previous batch
/// (the contrastive loss needs two).
inline std::vector<std::span<const TrainPair>> make_batches(const std::vector<TrainPair>& pairs,
                                                            std::size_t batch_size) {
  std::vector<std::span<const TrainPair>> out;
  std::span<const TrainPair> all(pairs);
  for (std::size_t i = 0; i < pairs.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, pairs.size() - i);
    if (n < 2 && !out.empty()) {
      out.back() = all.subspan(i - out.back().size(), out.back().size() + n);
      break;
    }
    out.push_back(all.subspan(i, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-batch objectives. Both accumulate gradients of the batch-mean loss into
// `g` and return the batch-mean terms.
// ---------------------------------------------------------------------------

/// Alignment: cl_weight * L_CL at layer m, plus L_HC for m > 0.
inline LossTerms align_batch(const TrainState& s, const TrainData& d, std::size_t layer,
                             std::span<const TrainPair> batch, ModelParams<double>& g) {
  const auto& p = s.params;
  const auto& c = s.config;
  const std::size_t b = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  const CodebookView cb(p);
  const double hc_w = (layer > 0 && c.lambda_hc > 0.0) ? 1.0 : 0.0;

  std::vector<MlpCache> enc(b);
  std::vector<std::vector<double>> z(b), h(b), dz(b);
  std::vector<TeacherForced> tf(b);
  std::vector<std::vector<std::vector<double>>> dh(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& pr = batch[i];
    const auto fv = d.videos->row(pr.video);
    const std::vector<double> x(fv.begin(), fv.end());
    mlp_forward(p.encoders[pr.view], x, enc[i]);
    z[i] = enc[i].y;
    std::vector<Code> prefix;
    if (layer > 0) prefix = quantize(z[i], cb, layer).codes;
    tf[i] = teacher_force(p, d.queries->row(pr.query), prefix, layer);
    h[i] = tf[i].h[layer];
    dz[i].assign(p.latent_dim, 0.0);
    dh[i].assign(layer + 1, std::vector<double>(p.latent_dim, 0.0));
  }

  LossTerms t;
  if (c.cl_weight > 0.0 && b >= 2) {
    const auto r = cl_loss(z, h, p.tau[0]);
    t.cl = r.loss;
    t.total += c.cl_weight * r.loss;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < p.latent_dim; ++j) {
        dz[i][j] += c.cl_weight * r.dz[i][j];
        dh[i][layer][j] += c.cl_weight * r.dh[i][j];
      }
    g.tau[0] += c.cl_weight * r.dtau;
  }
  if (hc_w > 0.0) {
    for (std::size_t i = 0; i < b; ++i) {
      const auto& pr = batch[i];
      t.hc += inv_b * hc_loss(p, d.queries->row(pr.query), z[i], layer, &g, &dz[i], hc_w * inv_b);
    }
    t.total += hc_w * t.hc;
  }
  for (std::size_t i = 0; i < b; ++i) {
    const auto& pr = batch[i];
    teacher_force_backward(p, tf[i], d.queries->row(pr.query), dh[i], g);
    mlp_backward(p.encoders[pr.view], enc[i], dz[i], g.encoders[pr.view]);
  }
  return t;
}

using TargetTable = std::vector<SemanticIdSet>;  // by video row, per view

/// Joint objective lambda_ce L_CE + lambda_hc L_HC + lambda_rq L_RQ +
/// lambda_rec L_Rec at layer m. `targets` fixes the CE targets when non-null.
inline LossTerms cotrain_batch(const TrainState& s, const TrainData& d, std::size_t layer,
                               std::span<const TrainPair> batch, ModelParams<double>& g,
                               const TargetTable* targets = nullptr) {
  const auto& p = s.params;
  const auto& c = s.config;
  const std::size_t b = batch.size();
  const std::size_t nv = p.num_views;
  const double inv_b = 1.0 / static_cast<double>(b);
  const double inv_v = 1.0 / static_cast<double>(nv);
  const CodebookView cb(p);
  LossTerms t;
  for (const auto& pr : batch) {
    const auto fv = d.videos->row(pr.video);
    const auto q = d.queries->row(pr.query);
    const auto lat = encode_views(p, fv);
    std::vector<QuantizationTrace> tr;
    tr.reserve(nv);
    for (std::size_t j = 0; j < nv; ++j) tr.push_back(quantize(lat.z[j], cb, layer + 1));
    std::vector<std::vector<double>> dz(nv, std::vector<double>(p.latent_dim, 0.0));

    if (c.lambda_ce > 0.0) {
      const SemanticId target = targets ? (*targets)[pr.video][pr.view] : tr[pr.view].id();
      t.ce += inv_b * ce_loss(p, q, target, layer, &g, c.lambda_ce * inv_b, !c.two_stage);
    }
    if (layer > 0 && c.lambda_hc > 0.0)
      t.hc += inv_b * hc_loss(p, q, lat.z[pr.view], layer, &g, &dz[pr.view], c.lambda_hc * inv_b);
    if (c.lambda_rq > 0.0)
      for (std::size_t j = 0; j < nv; ++j) {
        t.rq += inv_b * inv_v * rq_loss(tr[j], lat.z[j], c.beta);
        rq_backward(tr[j], lat.z[j], c.beta, c.lambda_rq * inv_b * inv_v, g.codebook, p.latent_dim, dz[j]);
      }
    if (c.lambda_rec > 0.0) {
      std::vector<std::vector<double>> zq(nv);
      for (std::size_t j = 0; j < nv; ++j) zq[j] = tr[j].quantized;
      const auto rec = reconstruct(p, zq, fv);
      t.rec += inv_b * rec.loss;
      // Straight-through: the gradient w.r.t. z-hat is applied to z.
      reconstruct_backward(p, rec, fv, c.lambda_rec * inv_b, g, &dz);
    }
    for (std::size_t j = 0; j < nv; ++j) {
      bool any = false;
      for (double v : dz[j]) any |= v != 0.0;
      if (any) mlp_backward(p.encoders[j], lat.caches[j], dz[j], g.encoders[j]);
    }
  }
  t.total = c.lambda_ce * t.ce + c.lambda_hc * t.hc + c.lambda_rq * t.rq + c.lambda_rec * t.rec;
  return t;
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

inline bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

inline bool align_trainable(const std::string& name) {
  return starts_with(name, "encoder.") || starts_with(name, "retriever.");
}

inline std::function<bool(const std::string&)> cotrain_trainable(std::size_t layer) {
  const std::string own = "codebook." + std::to_string(layer);
  return [own](const std::string& name) {
    return starts_with(name, "encoder.") || starts_with(name, "decoder.") || starts_with(name, "retriever.") ||
           name == own;
  };
}

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const TrainState&)> on_layer_done;  // checkpoint point
  std::function<void(const TrainState&)> on_nan;        // diagnostic snapshot before aborting
};

namespace detail {

inline void apply_step(TrainState& s, ModelParams<double>& g, const std::function<bool(const std::string&)>& trainable) {
  s.opt.step(s.params, g, s.config.learning_rate, s.config.weight_decay, trainable);
  s.params.tau[0] = std::clamp(s.params.tau[0], kTauMin, kTauMax);
  ++s.progress.step;
}

inline void check_finite(const TrainState& s, const LossTerms& t, const TrainHooks& hooks) {
  if (std::isfinite(t.total)) return;
  if (hooks.on_nan) hooks.on_nan(s);
  std::ostringstream msg;
  msg << "non-finite loss at layer " << s.progress.layer << " phase " << phase_name(s.progress.phase) << " epoch "
      << s.progress.epoch << " step " << s.progress.step << ": ce=" << t.ce << " hc=" << t.hc << " rq=" << t.rq
      << " rec=" << t.rec << " cl=" << t.cl;
  throw numerical_error(msg.str());
}

}  // namespace detail

/// Codes of every view of every training video under the current tokenizer.
inline TargetTable current_targets(const ModelParams<float>& p, const FeatureStore& videos, std::size_t layers) {
  const CodebookView cb(p);
  TargetTable out(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto lat = encode_views(p, videos.row(v));
    for (const auto& z : lat.z) out[v].push_back(quantize(z, cb, layers).id());
  }
  return out;
}

/// One epoch of the alignment phase for `layer`.
inline EpochLog align_epoch(TrainState& s, const TrainData& d, std::size_t layer, const TrainHooks& hooks = {}) {
  EpochLog log{static_cast<std::uint32_t>(layer), Phase::align, s.progress.epoch, 0, {}};
  const auto pairs = epoch_pairs(d, s.config.queries_per_video, s.rng);
  for (const auto batch : make_batches(pairs, s.config.batch_size)) {
    auto g = s.params.zeros_like<double>();
    const auto t = align_batch(s, d, layer, batch, g);
    detail::check_finite(s, t, hooks);
    detail::apply_step(s, g, align_trainable);
    log.mean += t;
    ++log.batches;
  }
  return log;
}

/// One epoch of the joint co-training phase for `layer`.
inline EpochLog cotrain_epoch(TrainState& s, const TrainData& d, std::size_t layer, const TrainHooks& hooks = {}) {
  EpochLog log{static_cast<std::uint32_t>(layer), Phase::cotrain, s.progress.epoch, 0, {}};
  TargetTable frozen;
  if (s.config.frozen_targets) frozen = current_targets(s.params, *d.videos, layer + 1);
  const auto trainable = cotrain_trainable(layer);
  const auto pairs = epoch_pairs(d, s.config.queries_per_video, s.rng);
  for (const auto batch : make_batches(pairs, s.config.batch_size)) {
    auto g = s.params.zeros_like<double>();
    const auto t = cotrain_batch(s, d, layer, batch, g, s.config.frozen_targets ? &frozen : nullptr);
    detail::check_finite(s, t, hooks);
    detail::apply_step(s, g, trainable);
    log.mean += t;
    ++log.batches;
  }
  return log;
}

/// Residuals r^(layer) of every view of every training video.
inline std::vector<double> layer_residuals(const ModelParams<float>& p, const FeatureStore& videos,
                                           std::size_t layer) {
  const CodebookView cb(p);
  std::vector<double> out;
  out.reserve(videos.size() * p.num_views * p.latent_dim);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto lat = encode_views(p, videos.row(v));
    for (const auto& z : lat.z) {
      if (layer == 0) {
        out.insert(out.end(), z.begin(), z.end());
      } else {
        const auto t = quantize(z, cb, layer);
        for (std::size_t i = 0; i < z.size(); ++i) out.push_back(z[i] - t.quantized[i]);
      }
    }
  }
  return out;
}

inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (layer + 1);
}

inline void init_layer_codebook(TrainState& s, const TrainData& d, std::size_t layer) {
  const auto res = layer_residuals(s.params, *d.videos, layer);
  auto init = init_codebook_layer(res, s.params.latent_dim, s.params.codebook_size,
                                  layer_seed(s.config.seed, layer), s.config.kmeans_iters);
  s.params.codebook[layer] = std::move(init.entries);
  s.codebook_padded[layer] = init.padded;
}

inline void align_phase(TrainState& s, const TrainData& d, std::size_t layer, const TrainHooks& hooks = {}) {
  const std::uint32_t epochs = s.config.align_epochs_for(static_cast<std::uint32_t>(layer));
  while (s.progress.epoch < epochs) {
    auto log = align_epoch(s, d, layer, hooks);
    ++s.progress.epoch;
    if (log.batches) log.mean.scale(1.0 / static_cast<double>(log.batches));
    s.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
}

inline void cotrain_phase(TrainState& s, const TrainData& d, std::size_t layer, const TrainHooks& hooks = {}) {
  while (s.progress.epoch < s.config.train_epochs) {
    auto log = cotrain_epoch(s, d, layer, hooks);
    ++s.progress.epoch;
    if (log.batches) log.mean.scale(1.0 / static_cast<double>(log.batches));
    s.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
  }
}

/// Runs the progressive schedule from the state's recorded position to the
/// end: per layer align, codebook init on residuals, co-train.
inline void resume_training(TrainState& s, const FeatureStore& videos, const FeatureStore& queries,
                            const TrainHooks& hooks = {}) {
  if (videos.dimension() != s.params.feature_dim)
    throw invalid_argument("video dimension " + std::to_string(videos.dimension()) + " != model feature dimension " +
                           std::to_string(s.params.feature_dim));
  if (s.codebook_padded.size() != s.config.num_layers) s.codebook_padded.assign(s.config.num_layers, false);
  const auto data = make_train_data(
      videos, queries, cluster_queries(queries, s.config.num_views, s.config.seed, s.config.kmeans_iters));
  auto& pg = s.progress;
  while (pg.phase != Phase::done) {
    const std::size_t m = pg.layer;
    if (pg.phase == Phase::align) {
      align_phase(s, data, m, hooks);
      pg.phase = Phase::init;
      pg.epoch = 0;
    }
    if (pg.phase == Phase::init) {
      init_layer_codebook(s, data, m);
      pg.phase = Phase::cotrain;
      pg.epoch = 0;
    }
    if (pg.phase == Phase::cotrain) {
      cotrain_phase(s, data, m, hooks);
      pg.epoch = 0;
      if (++pg.layer == s.config.num_layers) {
        pg.phase = Phase::done;
      } else {
        pg.phase = Phase::align;
      }
      if (hooks.on_layer_done) hooks.on_layer_done(s);
    }
  }
}

inline TrainState train(const TrainConfig& config, const FeatureStore& videos, const FeatureStore& queries,
                        const TrainHooks& hooks = {}) {
  auto s = init_state(videos.dimension(), config);
  resume_training(s, videos, queries, hooks);
  return s;
}

// ---------------------------------------------------------------------------
// Monitors
// ---------------------------------------------------------------------------

/// Mean cos(z_view(q), h^(m)(q)) over all training pairs, with the
/// tokenizer's own prefix codes.
inline double alignment_cosine(const ModelParams<float>& p, const TrainData& d, std::size_t layer) {
  const CodebookView cb(p);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& list : d.pairs_of_video)
    for (const auto& pr : list) {
      const auto lat = encode_views(p, d.videos->row(pr.video));
      const auto& z = lat.z[pr.view];
      std::vector<Code> prefix;
      if (layer > 0) prefix = quantize(z, cb, layer).codes;
      const auto tf = teacher_force(p, d.queries->row(pr.query), prefix, layer);
      sum += cosine(std::span<const double>(z), std::span<const double>(tf.h[layer]));
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Mean pairwise cosine among each video's quantized views.
inline double view_similarity(const ModelParams<float>& p, const FeatureStore& videos) {
  if (p.num_views < 2) return 1.0;
  const CodebookView cb(p);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto lat = encode_views(p, videos.row(v));
    std::vector<std::vector<double>> zq;
    for (const auto& z : lat.z) zq.push_back(quantize(z, cb).quantized);
    for (std::size_t i = 0; i < zq.size(); ++i)
      for (std::size_t j = i + 1; j < zq.size(); ++j) {
        sum += cosine(std::span<const double>(zq[i]), std::span<const double>(zq[j]));
        ++n;
      }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Checkpoint: "GRDCK1", u32 header length, canonical JSON header, then
// (u32 name length, name, u64 count, f32 values) groups to end of file:
// parameters in zip_groups order, then "adam.m.<name>" and "adam.v.<name>".
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "GRDCK1";

inline json checkpoint_header(const TrainState& s) {
  std::ostringstream rng;
  rng << s.rng;
  json steps = json::array();
  for (auto v : s.opt.steps()) steps.push_back(v);
  json padded = json::array();
  for (bool b : s.codebook_padded) padded.push_back(b);
  json h{{"config", to_json(s.config)},
         {"feature_dim", s.params.feature_dim},
         {"progress",
          {{"layer", s.progress.layer},
           {"phase", phase_name(s.progress.phase)},
           {"epoch", s.progress.epoch},
           {"step", s.progress.step},
           {"rng", rng.str()},
           {"adam_steps", steps},
           {"codebook_padded", padded}}}};
  if (!s.provenance.empty()) h["provenance"] = s.provenance;
  return h;
}

inline std::string serialize_checkpoint(const TrainState& s) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  const std::string header = checkpoint_header(s).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  auto put = [&](const std::string& name, const std::vector<float>& values) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u64(values.size());
    for (float v : values) w.f32(v);
  };
  for_each_group(s.params, [&](const std::string& name, const std::vector<float>& v) { put(name, v); });
  for_each_group(s.opt.first_moment(), [&](const std::string& name, const std::vector<float>& v) {
    put("adam.m." + name, v);
  });
  for_each_group(s.opt.second_moment(), [&](const std::string& name, const std::vector<float>& v) {
    put("adam.v." + name, v);
  });
  return w.take();
}

inline TrainState parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  try {
    if (!r.has(kCheckpointMagic.size()) || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic)
      throw format_error("checkpoint: bad magic");
    const std::uint32_t hlen = r.u32();
    json h;
    try {
      h = json::parse(r.bytes(hlen));
    } catch (const json::exception& e) {
      throw format_error(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    TrainState s;
    s.config = train_config_from_json(h.at("config"));
    const std::size_t d_f = h.at("feature_dim").get<std::size_t>();
    s.params = ModelParams<float>(d_f, s.config);
    s.opt = AdamW(s.params);
    const auto& pg = h.at("progress");
    s.progress.layer = pg.at("layer").get<std::uint32_t>();
    s.progress.phase = phase_from_name(pg.at("phase").get<std::string>());
    s.progress.epoch = pg.at("epoch").get<std::uint32_t>();
    s.progress.step = pg.at("step").get<std::uint64_t>();
    std::istringstream rng(pg.at("rng").get<std::string>());
    rng >> s.rng;
    if (!rng) throw format_error("checkpoint: bad rng state");
    const auto steps = pg.at("adam_steps").get<std::vector<std::uint64_t>>();
    if (steps.size() != s.opt.steps().size()) throw format_error("checkpoint: optimizer step count mismatch");
    s.opt.steps() = steps;
    s.codebook_padded = pg.at("codebook_padded").get<std::vector<bool>>();
    if (h.contains("provenance")) s.provenance = h.at("provenance").get<std::string>();
    auto take = [&](const std::string& name, std::vector<float>& out) {
      const std::uint32_t n = r.u32();
      const auto got = r.bytes(n);
      if (got != name) throw format_error("checkpoint: expected group '" + name + "', found '" + std::string(got) + "'");
      const std::uint64_t count = r.u64();
      if (count != out.size())
        throw format_error("checkpoint: group '" + name + "' has " + std::to_string(count) + " values, expected " +
                           std::to_string(out.size()));
      for (auto& v : out) v = r.f32();
    };
    for_each_group(s.params, [&](const std::string& name, std::vector<float>& v) { take(name, v); });
    for_each_group(s.opt.first_moment(), [&](const std::string& name, std::vector<float>& v) {
      take("adam.m." + name, v);
    });
    for_each_group(s.opt.second_moment(), [&](const std::string& name, std::vector<float>& v) {
      take("adam.v." + name, v);
    });
    if (r.remaining() != 0) throw format_error("checkpoint: trailing bytes");
    return s;
  } catch (const std::out_of_range&) {
    throw format_error("checkpoint: truncated");
  } catch (const json::exception& e) {
    throw format_error(std::string("checkpoint: bad header: ") + e.what());
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::config) throw format_error(std::string("checkpoint: ") + e.what());
    throw;
  }
}

inline void save_checkpoint(const TrainState& s, const std::string& path) { write_file(path, serialize_checkpoint(s)); }
inline TrainState load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

/// Hash of every parameter byte of one group (freezing checks).
inline std::uint64_t group_hash(const std::vector<float>& v) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)));
}

}  // namespace grdr

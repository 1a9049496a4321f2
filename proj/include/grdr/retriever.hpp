#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/model.hpp"
#include "grdr/nn.hpp"
#include "grdr/tokenizer.hpp"

namespace grdr {

// ---------------------------------------------------------------------------
// Decoder: h_m = step_mlp([ctx ; mean(prefix_embed[l][c_l], l < m)] + pos_m)
// ---------------------------------------------------------------------------

inline std::vector<double> query_context(const ModelParams<float>& p, std::span<const float> query) {
  if (query.size() != p.feature_dim) throw invalid_argument("query feature dimension mismatch");
  std::vector<double> ctx(p.latent_dim);
  linear_forward(p.query_proj, query, std::span<double>(ctx));
  return ctx;
}

struct DecodeCache {
  std::vector<Code> prefix;
  MlpCache mlp;
};

/// Output feature of decoding step m = prefix.size(). Depends only on the
/// query context and the consumed prefix.
inline std::vector<double> decode_step(const ModelParams<float>& p, std::span<const double> ctx,
                                       std::span<const Code> prefix, DecodeCache* cache = nullptr) {
  const std::size_t m = prefix.size();
  if (m >= p.num_layers)
    throw invalid_argument("decode_step: prefix length " + std::to_string(m) + " must be < " +
                           std::to_string(p.num_layers));
  const std::size_t d = p.latent_dim;
  std::vector<double> x(2 * d, 0.0);
  std::copy(ctx.begin(), ctx.end(), x.begin());
  if (m > 0) {
    for (std::size_t l = 0; l < m; ++l) {
      if (prefix[l] >= p.codebook_size) throw invalid_argument("decode_step: code out of range");
      const float* e = p.prefix_embed[l].data() + static_cast<std::size_t>(prefix[l]) * d;
      for (std::size_t i = 0; i < d; ++i) x[d + i] += e[i];
    }
    for (std::size_t i = 0; i < d; ++i) x[d + i] /= static_cast<double>(m);
  }
  MlpCache local;
  MlpCache& mc = cache ? cache->mlp : local;
  mlp_forward(p.step, x, mc, std::span<const float>(p.pos_embed.data() + m * p.hidden_dim, p.hidden_dim));
  if (cache) cache->prefix.assign(prefix.begin(), prefix.end());
  return mc.y;
}

inline void decode_step_backward(const ModelParams<float>& p, const DecodeCache& cache, std::span<const double> dh,
                                 ModelParams<double>& g, std::span<double> dctx) {
  const std::size_t m = cache.prefix.size();
  const std::size_t d = p.latent_dim;
  std::vector<double> dx(2 * d, 0.0);
  mlp_backward(p.step, cache.mlp, dh, g.step, dx,
               std::span<double>(g.pos_embed.data() + m * p.hidden_dim, p.hidden_dim));
  for (std::size_t i = 0; i < d; ++i) dctx[i] += dx[i];
  if (m > 0) {
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t l = 0; l < m; ++l) {
      double* ge = g.prefix_embed[l].data() + static_cast<std::size_t>(cache.prefix[l]) * d;
      for (std::size_t i = 0; i < d; ++i) ge[i] += dx[d + i] * inv;
    }
  }
}

// ---------------------------------------------------------------------------
// Code probabilities: softmax(cos(h, C^(m)) / tau)
// ---------------------------------------------------------------------------

struct CodeDistribution {
  std::vector<double> probs;
  std::vector<double> cos;
  double h_norm = 0.0;
  bool degenerate = false;  // zero-norm input, uniform output
};

template <class H>
CodeDistribution code_probs(std::span<const H> h, const CodebookView& cb, std::size_t layer, double tau) {
  CodeDistribution d;
  const std::size_t k = cb.size();
  d.h_norm = norm(h);
  d.cos.assign(k, 0.0);
  if (d.h_norm == 0.0) {
    d.degenerate = true;
    d.probs.assign(k, 1.0 / static_cast<double>(k));
    return d;
  }
  d.probs.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double en = cb.entry_norm(layer, i);
    double s = 0.0;
    const auto e = cb.entry(layer, i);
    for (std::size_t j = 0; j < h.size(); ++j) s += static_cast<double>(h[j]) * e[j];
    d.cos[i] = en == 0.0 ? 0.0 : s / (d.h_norm * en);
    d.probs[i] = d.cos[i] / tau;
  }
  softmax_inplace(d.probs);
  return d;
}

inline std::vector<double> log_probs(const CodeDistribution& d) {
  std::vector<double> out(d.probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamped_log(d.probs[i]);
  return out;
}

/// Backward of `upstream * -log P(target)`. `grad_layer` (K x d_z, may be
/// empty) receives codebook gradients; `dh` the input gradient.
template <class H>
void nll_backward(std::span<const H> h, const CodeDistribution& d, const CodebookView& cb, std::size_t layer,
                  Code target, double tau, double upstream, std::span<double> grad_layer, std::span<double> dh,
                  double& dtau) {
  if (d.degenerate || upstream == 0.0) return;
  if (d.probs[target] < kLogClamp) return;  // clamped region is flat
  const std::size_t dim = cb.dim();
  double tau_acc = 0.0;
  for (std::size_t k = 0; k < d.probs.size(); ++k) {
    const double ds = upstream * (d.probs[k] - (k == target ? 1.0 : 0.0));
    if (ds == 0.0) continue;
    tau_acc += ds * d.cos[k];
    const double dc = ds / tau;
    const auto e = cb.entry(layer, k);
    const double en = cb.entry_norm(layer, k);
    if (!dh.empty()) add_cosine_grad(h, e, d.h_norm, en, d.cos[k], dc, dh);
    if (!grad_layer.empty())
      add_cosine_grad(e, h, en, d.h_norm, d.cos[k], dc, grad_layer.subspan(k * dim, dim));
  }
  dtau += -tau_acc / (tau * tau);
}

// ---------------------------------------------------------------------------
// Teacher-forced decoding of one query against a target semantic id.
// ---------------------------------------------------------------------------

struct TeacherForced {
  std::vector<double> ctx;
  std::vector<DecodeCache> steps;
  std::vector<std::vector<double>> h;  // h_0..h_last (0-based layers)
};

inline TeacherForced teacher_force(const ModelParams<float>& p, std::span<const float> query,
                                   std::span<const Code> target, std::size_t last_layer) {
  TeacherForced tf;
  tf.ctx = query_context(p, query);
  tf.steps.resize(last_layer + 1);
  for (std::size_t l = 0; l <= last_layer; ++l)
    tf.h.push_back(decode_step(p, tf.ctx, target.subspan(0, l), &tf.steps[l]));
  return tf;
}

/// Backward through all decode steps and the query projection; `dh[l]` is the
/// gradient w.r.t. h_l.
inline void teacher_force_backward(const ModelParams<float>& p, const TeacherForced& tf, std::span<const float> query,
                                   const std::vector<std::vector<double>>& dh, ModelParams<double>& g) {
  std::vector<double> dctx(p.latent_dim, 0.0);
  bool any = false;
  for (std::size_t l = 0; l < tf.steps.size(); ++l) {
    bool nz = false;
    for (double v : dh[l]) nz |= v != 0.0;
    if (!nz) continue;
    any = true;
    decode_step_backward(p, tf.steps[l], dh[l], g, dctx);
  }
  if (any) linear_backward(p.query_proj, query, std::span<const double>(dctx), g.query_proj);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// -log P(c_m | c_<m, q) with the ground-truth prefix. Accumulates
/// gradients into `g` when non-null; codebook gradients are skipped when
/// `codebook_grad` is false.
inline double ce_loss(const ModelParams<float>& p, std::span<const float> query, const SemanticId& target,
                      std::size_t layer, ModelParams<double>* g = nullptr, double upstream = 1.0,
                      bool codebook_grad = true) {
  const CodebookView cb(p);
  const auto tf = teacher_force(p, query, target.codes, layer);
  const auto dist = code_probs(std::span<const double>(tf.h[layer]), cb, layer, p.tau[0]);
  const double loss = -clamped_log(dist.probs[target.codes[layer]]);
  if (g) {
    std::vector<std::vector<double>> dh(layer + 1, std::vector<double>(p.latent_dim, 0.0));
    double dtau = 0.0;
    nll_backward(std::span<const double>(tf.h[layer]), dist, cb, layer, target.codes[layer], p.tau[0], upstream,
                 codebook_grad ? std::span<double>(g->codebook[layer]) : std::span<double>(), dh[layer], dtau);
    g->tau[0] += dtau;
    teacher_force_backward(p, tf, query, dh, *g);
  }
  return loss;
}

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<std::vector<double>> dz, dh;  // gradients of the batch-mean loss
  double dtau = 0.0;
};

/// In-batch contrastive loss between view latents z_j and cumulative decoder
/// features h_i; row i's positive is z_i, its negatives the other z_j.
inline ContrastiveResult cl_loss(const std::vector<std::vector<double>>& z, const std::vector<std::vector<double>>& h,
                                 double tau, bool with_grad = true) {
  const std::size_t b = z.size();
  if (b < 2 || h.size() != b) throw invalid_argument("cl_loss: batch size must be >= 2 and matched");
  std::vector<double> zn(b), hn(b);
  for (std::size_t i = 0; i < b; ++i) {
    zn[i] = norm(z[i]);
    hn[i] = norm(h[i]);
  }
  ContrastiveResult r;
  if (with_grad) {
    r.dz.assign(b, std::vector<double>(z[0].size(), 0.0));
    r.dh.assign(b, std::vector<double>(h[0].size(), 0.0));
  }
  std::vector<double> cos(b), row(b);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double c = (zn[j] == 0.0 || hn[i] == 0.0) ? 0.0 : dot(z[j], h[i]) / (zn[j] * hn[i]);
      cos[j] = c;
      row[j] = c / tau;
    }
    softmax_inplace(row);
    r.loss -= clamped_log(row[i]) * inv_b;
    if (!with_grad || row[i] < kLogClamp) continue;
    for (std::size_t j = 0; j < b; ++j) {
      const double ds = (row[j] - (i == j ? 1.0 : 0.0)) * inv_b;
      r.dtau += -ds * cos[j] / (tau * tau);
      const double dc = ds / tau;
      add_cosine_grad(std::span<const double>(z[j]), std::span<const double>(h[i]), zn[j], hn[i], cos[j], dc,
                      std::span<double>(r.dz[j]));
      add_cosine_grad(std::span<const double>(h[i]), std::span<const double>(z[j]), hn[i], zn[j], cos[j], dc,
                      std::span<double>(r.dh[i]));
    }
  }
  return r;
}

/// Video-side likelihood P(c_l | c_<l, v): softmax of cosines between the
/// tokenizer's layer-l residual and C^(l).
inline CodeDistribution video_code_probs(const QuantizationTrace& t, const CodebookView& cb, std::size_t layer,
                                         double tau) {
  return code_probs(std::span<const double>(t.residuals[layer]), cb, layer, tau);
}

/// Backward of `upstream * -log P(c_l | v)` through r^(l) = z - sum_{j<l} e^(j).
inline void video_nll_backward(const QuantizationTrace& t, const CodeDistribution& d, const CodebookView& cb,
                               std::size_t layer, double tau, double upstream,
                               std::vector<std::vector<double>>* grad_codebook, std::span<double> dz, double& dtau) {
  const std::size_t dim = cb.dim();
  std::vector<double> dr(dim, 0.0);
  nll_backward(std::span<const double>(t.residuals[layer]), d, cb, layer, t.codes[layer], tau, upstream,
               grad_codebook ? std::span<double>((*grad_codebook)[layer]) : std::span<double>(), dr, dtau);
  if (!dz.empty())
    for (std::size_t i = 0; i < dim; ++i) dz[i] += dr[i];
  if (grad_codebook)
    for (std::size_t j = 0; j < layer; ++j) {
      double* ge = (*grad_codebook)[j].data() + static_cast<std::size_t>(t.codes[j]) * dim;
      for (std::size_t i = 0; i < dim; ++i) ge[i] -= dr[i];
    }
}

/// Hierarchical consistency at layer m > 0 (0-based): retains both the
/// text-side and the video-side likelihood of every earlier code. Targets
/// are the tokenizer's codes for the view latent `z`.
inline double hc_loss(const ModelParams<float>& p, std::span<const float> query, std::span<const double> z,
                      std::size_t layer, ModelParams<double>* g = nullptr, std::vector<double>* dz = nullptr,
                      double upstream = 1.0) {
  if (layer == 0) throw invalid_argument("hc_loss requires layer > 0");
  const CodebookView cb(p);
  const auto trace = quantize(z, cb, layer);
  const auto tf = teacher_force(p, query, trace.codes, layer - 1);
  const double tau = p.tau[0];
  double loss = 0.0;
  std::vector<std::vector<double>> dh(layer, std::vector<double>(p.latent_dim, 0.0));
  double dtau = 0.0;
  for (std::size_t l = 0; l < layer; ++l) {
    const auto dq = code_probs(std::span<const double>(tf.h[l]), cb, l, tau);
    const auto dv = video_code_probs(trace, cb, l, tau);
    loss -= clamped_log(dq.probs[trace.codes[l]]) + clamped_log(dv.probs[trace.codes[l]]);
    if (g) {
      nll_backward(std::span<const double>(tf.h[l]), dq, cb, l, trace.codes[l], tau, upstream,
                   std::span<double>(g->codebook[l]), std::span<double>(dh[l]), dtau);
      video_nll_backward(trace, dv, cb, l, tau, upstream, &g->codebook,
                         dz ? std::span<double>(*dz) : std::span<double>(), dtau);
    }
  }
  if (g) {
    g->tau[0] += dtau;
    teacher_force_backward(p, tf, query, dh, *g);
  }
  return loss;
}

/// Greedy (beam-1, unconstrained) decode of the first `layers` codes.
inline SemanticId greedy_decode(const ModelParams<float>& p, std::span<const float> query, std::size_t layers = 0) {
  if (layers == 0) layers = p.num_layers;
  const CodebookView cb(p);
  const auto ctx = query_context(p, query);
  SemanticId id;
  for (std::size_t m = 0; m < layers; ++m) {
    const auto h = decode_step(p, ctx, id.codes);
    const auto d = code_probs(std::span<const double>(h), cb, m, p.tau[0]);
    Code best = 0;
    for (std::size_t k = 1; k < d.probs.size(); ++k)
      if (d.probs[k] > d.probs[best]) best = static_cast<Code>(k);
    id.codes.push_back(best);
  }
  return id;
}

}  // namespace grdr

#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "grdr/common.hpp"
#include "grdr/feature_store.hpp"
#include "grdr/model.hpp"
#include "grdr/nn.hpp"

namespace grdr {

using Code = std::uint16_t;

/// Length-M code sequence; one per (video, view).
struct SemanticId {
  std::vector<Code> codes;
  auto operator<=>(const SemanticId&) const = default;
  bool operator==(const SemanticId&) const = default;
};

using SemanticIdSet = std::vector<SemanticId>;  // N_v entries, view order

inline std::string to_string(const SemanticId& id) {
  std::string s;
  for (std::size_t i = 0; i < id.codes.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(id.codes[i]);
  }
  return s;
}

/// Read-only view of the shared codebook plus cached entry norms.
class CodebookView {
 public:
  CodebookView(const std::vector<std::vector<float>>& layers, std::size_t k, std::size_t dim)
      : layers_(&layers), k_(k), dim_(dim), norms_(layers.size(), std::vector<double>(k)) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (std::size_t i = 0; i < k; ++i) norms_[l][i] = norm(entry(l, i));
  }
  explicit CodebookView(const ModelParams<float>& p) : CodebookView(p.codebook, p.codebook_size, p.latent_dim) {}

  std::size_t layers() const { return layers_->size(); }
  std::size_t size() const { return k_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> entry(std::size_t layer, std::size_t k) const {
    return {(*layers_)[layer].data() + k * dim_, dim_};
  }
  double entry_norm(std::size_t layer, std::size_t k) const { return norms_[layer][k]; }

 private:
  const std::vector<std::vector<float>>* layers_;
  std::size_t k_, dim_;
  std::vector<std::vector<double>> norms_;
};

inline constexpr double kDegenerateResidual = 1e-12;

/// Per-layer record of one residual quantization.
struct QuantizationTrace {
  std::vector<std::vector<double>> residuals;  // r^(m), m = 1..layers
  std::vector<Code> codes;
  std::vector<double> quantized;               // z-hat: sum of selected entries
  bool degenerate = false;

  SemanticId id() const { return SemanticId{codes}; }
};

/// Index of the entry of `layer` with maximum cosine to `r`; lowest index on
/// ties.
inline Code best_code(std::span<const double> r, double r_norm, const CodebookView& cb, std::size_t layer) {
  Code best = 0;
  double best_cos = -INFINITY;
  for (std::size_t k = 0; k < cb.size(); ++k) {
    const double en = cb.entry_norm(layer, k);
    const double c = en == 0.0 ? 0.0 : dot(r, cb.entry(layer, k)) / (r_norm * en);
    if (c > best_cos) {
      best_cos = c;
      best = static_cast<Code>(k);
    }
  }
  return best;
}

/// Greedy residual quantization through the first `layers` codebook layers
/// (all layers when `layers` is 0).
inline QuantizationTrace quantize(std::span<const double> z, const CodebookView& cb, std::size_t layers = 0) {
  if (layers == 0) layers = cb.layers();
  if (layers > cb.layers()) throw invalid_argument("quantize: more layers requested than the codebook has");
  const std::size_t d = cb.dim();
  if (z.size() != d) throw invalid_argument("quantize: latent dimension mismatch");
  QuantizationTrace t;
  t.residuals.reserve(layers);
  t.codes.reserve(layers);
  std::vector<double> partial(d, 0.0);
  for (std::size_t m = 0; m < layers; ++m) {
    std::vector<double> r(d);
    for (std::size_t i = 0; i < d; ++i) r[i] = z[i] - partial[i];
    const double rn = norm(r);
    Code c = 0;
    if (t.degenerate || rn < kDegenerateResidual)
      t.degenerate = true;
    else
      c = best_code(r, rn, cb, m);
    const auto e = cb.entry(m, c);
    for (std::size_t i = 0; i < d; ++i) partial[i] += e[i];
    t.residuals.push_back(std::move(r));
    t.codes.push_back(c);
  }
  t.quantized = std::move(partial);
  return t;
}

/// Codebook loss plus beta-weighted commitment loss. Numerically both terms
/// equal ||z_hat - z||^2; they differ only in where gradients go.
inline double rq_loss(const QuantizationTrace& t, std::span<const double> z, double beta) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = t.quantized[i] - z[i];
    s += d * d;
  }
  return s + beta * s;
}

/// Gradient of `upstream * rq_loss`: the codebook term reaches only the
/// selected entries, the commitment term only z.
inline void rq_backward(const QuantizationTrace& t, std::span<const double> z, double beta, double upstream,
                        std::vector<std::vector<double>>& grad_codebook, std::size_t latent_dim,
                        std::span<double> grad_z) {
  const std::size_t d = z.size();
  for (std::size_t m = 0; m < t.codes.size(); ++m) {
    double* ge = grad_codebook[m].data() + static_cast<std::size_t>(t.codes[m]) * latent_dim;
    for (std::size_t i = 0; i < d; ++i) ge[i] += upstream * 2.0 * (t.quantized[i] - z[i]);
  }
  if (!grad_z.empty())
    for (std::size_t i = 0; i < d; ++i) grad_z[i] += upstream * 2.0 * beta * (z[i] - t.quantized[i]);
}

struct ViewLatents {
  std::vector<std::vector<double>> z;  // N_v x d_z
  std::vector<MlpCache> caches;
};

/// Applies every view encoder to the shared video feature.
inline ViewLatents encode_views(const ModelParams<float>& p, std::span<const float> f_v) {
  if (f_v.size() != p.feature_dim)
    throw invalid_argument("encode_views: feature dimension " + std::to_string(f_v.size()) + " != " +
                           std::to_string(p.feature_dim));
  if (p.num_views == 0) throw invalid_argument("encode_views: no view encoders");
  std::vector<double> x(f_v.begin(), f_v.end());
  ViewLatents out;
  out.caches.resize(p.num_views);
  for (std::size_t i = 0; i < p.num_views; ++i) {
    mlp_forward(p.encoders[i], x, out.caches[i]);
    out.z.push_back(out.caches[i].y);
  }
  return out;
}

struct Reconstruction {
  std::vector<double> features;  // f-tilde, mean over per-view decoder outputs
  double loss = 0.0;             // 1 - cos(f_v, f-tilde)
  bool degenerate = false;       // f-tilde had zero norm
  std::vector<MlpCache> caches;
};

inline Reconstruction reconstruct(const ModelParams<float>& p, const std::vector<std::vector<double>>& quantized,
                                  std::span<const float> f_v) {
  Reconstruction r;
  r.caches.resize(quantized.size());
  r.features.assign(p.feature_dim, 0.0);
  for (std::size_t i = 0; i < quantized.size(); ++i) {
    mlp_forward(p.decoders[i], quantized[i], r.caches[i]);
    for (std::size_t j = 0; j < p.feature_dim; ++j) r.features[j] += r.caches[i].y[j];
  }
  const double inv = 1.0 / static_cast<double>(quantized.size());
  for (double& v : r.features) v *= inv;
  if (norm(r.features) == 0.0) {
    r.degenerate = true;
    r.loss = 1.0;
  } else {
    r.loss = 1.0 - cosine(std::span<const float>(f_v), std::span<const double>(r.features));
  }
  return r;
}

/// Backpropagates `upstream * rec.loss` into the decoders; `grad_quantized`
/// (per view, optional) receives the gradient w.r.t. each z-hat_i.
inline void reconstruct_backward(const ModelParams<float>& p, const Reconstruction& rec, std::span<const float> f_v,
                                 double upstream, ModelParams<double>& g,
                                 std::vector<std::vector<double>>* grad_quantized) {
  if (rec.degenerate || upstream == 0.0) return;
  const std::size_t views = rec.caches.size();
  const double nf = norm(rec.features);
  const double nv = norm(f_v);
  const double c = cosine(std::span<const float>(f_v), std::span<const double>(rec.features));
  std::vector<double> df(p.feature_dim, 0.0);
  add_cosine_grad(std::span<const double>(rec.features), f_v, nf, nv, c, -upstream, std::span<double>(df));
  const double inv = 1.0 / static_cast<double>(views);
  for (double& v : df) v *= inv;
  for (std::size_t i = 0; i < views; ++i) {
    std::span<double> dx;
    if (grad_quantized) dx = (*grad_quantized)[i];
    mlp_backward(p.decoders[i], rec.caches[i], df, g.decoders[i], dx);
  }
}

/// Offline tokenization: N_v semantic ids per video, in view order.
inline std::map<std::uint64_t, SemanticIdSet> tokenize_corpus(const FeatureStore& videos,
                                                              const ModelParams<float>& p) {
  if (videos.dimension() != p.feature_dim)
    throw invalid_argument("tokenize_corpus: store dimension " + std::to_string(videos.dimension()) +
                           " != model feature dimension " + std::to_string(p.feature_dim));
  const CodebookView cb(p);
  std::map<std::uint64_t, SemanticIdSet> out;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto views = encode_views(p, videos.row(v));
    SemanticIdSet ids;
    ids.reserve(p.num_views);
    for (const auto& z : views.z) ids.push_back(quantize(z, cb).id());
    out.emplace(videos.id(v), std::move(ids));
  }
  return out;
}

/// Text dump: one line per (video, view): `video_id<TAB>view_id<TAB>c1,...,cM`.
inline std::string format_semantic_ids(const std::map<std::uint64_t, SemanticIdSet>& ids) {
  std::string out;
  for (const auto& [vid, set] : ids)
    for (std::size_t view = 0; view < set.size(); ++view)
      out += std::to_string(vid) + '\t' + std::to_string(view) + '\t' + to_string(set[view]) + '\n';
  return out;
}

inline std::map<std::uint64_t, SemanticIdSet> parse_semantic_ids(const std::string& text) {
  std::map<std::uint64_t, SemanticIdSet> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string vid, view, codes;
    if (!std::getline(ls, vid, '\t') || !std::getline(ls, view, '\t') || !std::getline(ls, codes))
      throw invalid_argument("semantic id dump: malformed line " + std::to_string(lineno));
    SemanticId id;
    std::istringstream cs(codes);
    std::string tok;
    while (std::getline(cs, tok, ',')) id.codes.push_back(static_cast<Code>(std::stoul(tok)));
    auto& set = out[std::stoull(vid)];
    const std::size_t v = std::stoul(view);
    if (set.size() <= v) set.resize(v + 1);
    set[v] = std::move(id);
  }
  return out;
}

}  // namespace grdr

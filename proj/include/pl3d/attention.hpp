#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>

#include "rng.hpp"
#include "types.hpp"

namespace pl3d {

/// Attention-weighted soft labels; only points observed by at least one retained view appear.
struct FusedLabels {
  std::map<std::size_t, double> labels;
  std::map<std::size_t, std::size_t> coverage;

  /// Dense binarization over N points; unobserved points are negative.
  std::vector<std::uint8_t> binarize(std::size_t n, double threshold = 0.5) const {
    std::vector<std::uint8_t> out(n, 0);
    for (const auto& [p, label] : labels)
      if (p < n && label >= threshold) out[p] = 1;
    return out;
  }

  bool operator==(const FusedLabels&) const = default;
};

/// Fraction of mask pixels strictly above 0.5.
inline double mask_area_fraction(const Raster<float>& mask) {
  if (mask.data.empty()) return 0.0;
  std::size_t on = 0;
  for (float x : mask.data)
    if (x > 0.5f) ++on;
  return double(on) / double(mask.data.size());
}

/// Drops views with very low confidence or mask area. Throws AllViewsFiltered when nothing survives.
inline std::vector<std::size_t> filter_predictions(std::span<const ViewPrediction> preds, const PipelineConfig& cfg,
                                                   std::span<const std::size_t> candidates = {}) {
  std::vector<std::size_t> order;
  if (candidates.empty()) {
    for (std::size_t i = 0; i < preds.size(); ++i) order.push_back(i);
  } else {
    order.assign(candidates.begin(), candidates.end());
  }
  std::vector<std::size_t> kept;
  for (auto i : order) {
    const auto& p = preds[i];
    if (double(p.confidence) >= cfg.alphaMin && mask_area_fraction(p.mask) >= cfg.areaMinFrac) kept.push_back(i);
  }
  if (kept.empty()) throw Error(ErrorCode::AllViewsFiltered, "no view passed the confidence/area filter");
  return kept;
}

/// Randomly picks k of n views (seeded) and returns them in ascending order; all views if n <= k.
inline std::vector<std::size_t> select_views(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= k) return idx;
  Rng rng(derive_seed(seed, 0x5e1ec7));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Returns false (leaving v untouched) for a zero vector.
inline bool normalize_in_place(std::vector<double>& v) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (auto& x : v) x /= n;
  return true;
}

inline std::vector<std::vector<double>> normalized(std::span<const std::vector<double>> embeddings) {
  std::vector<std::vector<double>> out(embeddings.begin(), embeddings.end());
  for (auto& e : out)
    if (!normalize_in_place(e)) std::fill(e.begin(), e.end(), 0.0);
  return out;
}

}  // namespace detail

/// omega_i = alpha_i * max(0, e_i . q) / sum_j (...), e_i taken L2-normalized; uniform when the sum is 0.
inline std::vector<double> attention_weights(std::span<const std::vector<double>> embeddings,
                                             std::span<const double> confidences, std::span<const double> q) {
  const auto n = embeddings.size();
  if (confidences.size() != n) throw Error(ErrorCode::DimensionMismatch, "one confidence per embedding required");
  std::vector<double> w(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = embeddings[i];
    if (e.size() != q.size()) throw Error(ErrorCode::DimensionMismatch, "embedding/query width differ");
    const double en = detail::norm(e);
    const double s = en > 0.0 ? detail::dot(e, q) / en : 0.0;
    w[i] = confidences[i] * std::max(0.0, s);
    total += w[i];
  }
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), n ? 1.0 / double(n) : 0.0);
    return w;
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Fixed-point closure of the mutually recursive query / attention definition.
/// Seeded with the confidence-weighted mean of normalized embeddings.
inline UnifiedQuery unify_query(std::span<const std::vector<double>> embeddings, std::span<const double> confidences,
                                std::size_t iters) {
  const auto n = embeddings.size();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "unify_query needs at least one view");
  if (iters < 1) throw Error(ErrorCode::InvalidArgument, "iters must be >= 1");
  if (confidences.size() != n) throw Error(ErrorCode::DimensionMismatch, "one confidence per embedding required");
  const auto dim = embeddings[0].size();
  for (const auto& e : embeddings)
    if (e.size() != dim) throw Error(ErrorCode::DimensionMismatch, "embedding widths differ");

  const auto unit = detail::normalized(embeddings);
  bool anyNonZero = false;
  for (const auto& e : unit) anyNonZero = anyNonZero || detail::norm(e) > 0.0;
  if (!anyNonZero) throw Error(ErrorCode::DegenerateEmbeddings, "all embeddings are zero vectors");

  std::vector<double> q(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) q[j] += confidences[i] * unit[i][j];
  if (!detail::normalize_in_place(q)) {
    // cancelling seed: start from the most confident non-zero view
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (detail::norm(unit[i]) > 0.0 && (best == n || confidences[i] > confidences[best])) best = i;
    q = unit[best];
  }

  UnifiedQuery out;
  for (std::size_t it = 0; it < iters; ++it) {
    out.weights = attention_weights(unit, confidences, q);
    std::vector<double> next(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j) next[j] += out.weights[i] * unit[i][j];
    if (detail::normalize_in_place(next)) q = std::move(next);
  }
  out.q = std::move(q);
  return out;
}

/// Per-point attention-weighted average of sampled mask values, renormalized over the views that saw the point.
/// Coverage counts every observing view, including zero-weight ones.
inline FusedLabels fuse_pseudo_labels(const CorrespondenceSet& set, const UnifiedQuery& query) {
  FusedLabels fused;
  std::map<std::size_t, std::pair<double, double>> acc;  // point -> (sum w*m, sum w)
  for (const auto& c : set.entries) {
    bool known = false;
    for (auto r : query.retainedViews) known = known || r == c.viewIndex;
    if (!known) throw Error(ErrorCode::InvalidArgument, "correspondence view " + std::to_string(c.viewIndex) + " not retained");
    const double w = query.weight_of(c.viewIndex);
    auto& [wm, ws] = acc[c.pointIndex];
    wm += w * c.sampledLogit;
    ws += w;
    ++fused.coverage[c.pointIndex];
  }
  // points whose observing views all carry zero weight stay unlabeled
  for (const auto& [p, sums] : acc)
    if (sums.second > 0.0) fused.labels[p] = std::clamp(sums.first / sums.second, 0.0, 1.0);
  return fused;
}

/// Uniform weights over the retained views (the no-attention ablation).
inline UnifiedQuery with_uniform_weights(UnifiedQuery query) {
  const auto n = query.retainedViews.size();
  query.weights.assign(n, n ? 1.0 / double(n) : 0.0);
  return query;
}

}  // namespace pl3d

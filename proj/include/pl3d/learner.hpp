#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "types.hpp"

namespace pl3d {

inline constexpr std::size_t kModelInputDim = 6;  // xyz + rgb

/// Fully-connected layer, weight row-major (out x in).
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Trainable tensors of the feature model. Gradients and momentum buffers share this shape.
struct Parameters {
  std::vector<DenseLayer> layers;
  std::size_t projRows = 0;  // d
  std::size_t projCols = 0;  // d_e
  std::vector<double> projection;

  /// Visits every tensor as (values, decays); biases do not decay.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    for (auto& l : self.layers) {
      f(std::span(l.weight), true);
      f(std::span(l.bias), false);
    }
    f(std::span(self.projection), true);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](auto s, bool) { n += s.size(); });
    return n;
  }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](std::span<double> s, bool) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
  }

  /// Flat view index -> reference, in visit order.
  double& at(std::size_t flat) {
    double* hit = nullptr;
    for_each([&](std::span<double> s, bool) {
      if (!hit && flat < s.size()) hit = &s[flat];
      else if (!hit) flat -= s.size();
    });
    if (!hit) throw Error(ErrorCode::InvalidArgument, "parameter index out of range");
    return *hit;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](auto s, bool) {
      for (double x : s) ok = ok && std::isfinite(x);
    });
    return ok;
  }

  bool operator==(const Parameters&) const = default;
};

/// Per-point MLP (tanh hidden layers, linear output) plus the query projection W.
struct FeatureModel {
  Parameters params;
  std::array<double, kModelInputDim> inputShift{};
  std::array<double, kModelInputDim> inputScale{1, 1, 1, 1, 1, 1};

  std::size_t outputDim() const { return params.projRows; }
  std::size_t embedDim() const { return params.projCols; }

  bool operator==(const FeatureModel&) const = default;
};

/// Uniform(+-1/sqrt(fan_in)) init for all weights and biases, seeded.
inline FeatureModel init_model(std::span<const std::size_t> hidden, std::size_t outputDim, std::size_t embedDim,
                               std::uint64_t seed) {
  if (outputDim == 0 || embedDim == 0) throw Error(ErrorCode::InvalidArgument, "model widths must be positive");
  FeatureModel m;
  Rng rng(derive_seed(seed, 0x30de1));
  std::size_t in = kModelInputDim;
  std::vector<std::size_t> widths(hidden.begin(), hidden.end());
  widths.push_back(outputDim);
  for (auto out : widths) {
    DenseLayer l{in, out, std::vector<double>(in * out), std::vector<double>(out)};
    const double bound = 1.0 / std::sqrt(double(in));
    for (auto& w : l.weight) w = rng.uniform(-bound, bound);
    for (auto& b : l.bias) b = rng.uniform(-bound, bound);
    m.params.layers.push_back(std::move(l));
    in = out;
  }
  m.params.projRows = outputDim;
  m.params.projCols = embedDim;
  m.params.projection.resize(outputDim * embedDim);
  const double bound = 1.0 / std::sqrt(double(embedDim));
  for (auto& w : m.params.projection) w = rng.uniform(-bound, bound);
  return m;
}

/// Centres positions on the bounding-box midpoint and scales by its half extent.
inline void fit_input_normalization(FeatureModel& model, const PointCloud& cloud) {
  if (cloud.size() == 0) return;
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& p : cloud.positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], double(p[a]));
      hi[a] = std::max(hi[a], double(p[a]));
    }
  double half = 0.0;
  for (int a = 0; a < 3; ++a) half = std::max(half, 0.5 * (hi[a] - lo[a]));
  if (!(half > 0.0)) half = 1.0;
  for (int a = 0; a < 3; ++a) {
    model.inputShift[a] = 0.5 * (lo[a] + hi[a]);
    model.inputScale[a] = half;
  }
}

/// N x C dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

inline Matrix model_inputs(const FeatureModel& model, const PointCloud& cloud) {
  Matrix x(cloud.size(), kModelInputDim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto r = x.row(i);
    for (int a = 0; a < 3; ++a) r[a] = double(cloud.positions[i][a]);
    if (cloud.colors)
      for (int a = 0; a < 3; ++a) r[3 + a] = double((*cloud.colors)[i][a]);
    for (std::size_t a = 0; a < kModelInputDim; ++a) r[a] = (r[a] - model.inputShift[a]) / model.inputScale[a];
  }
  return x;
}

namespace detail {

inline Matrix dense_forward(const DenseLayer& l, const Matrix& in, bool activate) {
  Matrix out(in.rows, l.out);
  for (std::size_t n = 0; n < in.rows; ++n) {
    const auto x = in.row(n);
    auto y = out.row(n);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* w = l.weight.data() + o * l.in;
      double acc = l.bias[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * x[i];
      y[o] = activate ? std::tanh(acc) : acc;
    }
  }
  return out;
}

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double softplus(double s) { return std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))); }

/// -[m log sigma(s) + (1-m) log(1 - sigma(s))] = softplus(s) - m s
inline double bce_with_logit(double s, double m) { return softplus(s) - m * s; }

}  // namespace detail

/// Activations of every layer; acts[0] is the (normalized) input, acts.back() the features.
struct ForwardCache {
  std::vector<Matrix> acts;
};

inline ForwardCache forward_cached(const FeatureModel& model, const Matrix& inputs) {
  ForwardCache c;
  c.acts.push_back(inputs);
  const auto& layers = model.params.layers;
  for (std::size_t l = 0; l < layers.size(); ++l)
    c.acts.push_back(detail::dense_forward(layers[l], c.acts.back(), l + 1 < layers.size()));
  return c;
}

/// Per-point features f3D (N x d). Pointwise: no cross-point interaction.
inline Matrix forward_features(const FeatureModel& model, const PointCloud& cloud) {
  return forward_cached(model, model_inputs(model, cloud)).acts.back();
}

/// t = W q
inline std::vector<double> project_query(const FeatureModel& model, std::span<const double> q) {
  const auto& p = model.params;
  if (q.size() != p.projCols)
    throw Error(ErrorCode::DimensionMismatch,
                "query width " + std::to_string(q.size()) + " vs projection input " + std::to_string(p.projCols));
  std::vector<double> t(p.projRows, 0.0);
  for (std::size_t r = 0; r < p.projRows; ++r)
    for (std::size_t c = 0; c < p.projCols; ++c) t[r] += p.projection[r * p.projCols + c] * q[c];
  return t;
}

/// s_p = f_p . t (raw logits)
inline std::vector<double> semantic_logits(const Matrix& features, std::span<const double> t) {
  if (features.cols != t.size()) throw Error(ErrorCode::DimensionMismatch, "feature width differs from t");
  std::vector<double> s(features.rows, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto f = features.row(i);
    for (std::size_t j = 0; j < t.size(); ++j) s[i] += f[j] * t[j];
  }
  return s;
}

/// Mean BCE between logits and soft targets. Optional per-pair weights turn it into a weighted mean.
inline double loss_mms(std::span<const double> logits, std::span<const double> targets,
                       std::span<const double> weights = {}) {
  if (logits.empty()) throw Error(ErrorCode::EmptyPairSet, "no point-pixel pairs");
  if (targets.size() != logits.size() || (!weights.empty() && weights.size() != logits.size()))
    throw Error(ErrorCode::DimensionMismatch, "logit/target/weight counts differ");
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    acc += w * detail::bce_with_logit(logits[i], targets[i]);
    wsum += w;
  }
  if (!(wsum > 0.0)) throw Error(ErrorCode::EmptyPairSet, "all pair weights are zero");
  return acc / wsum;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < 1e-12 || nb < 1e-12) throw Error(ErrorCode::ZeroVector, "cosine of a (near-)zero vector");
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

/// Mean (1 - cos) over paired 3D/2D features.
inline double loss_spatial(std::span<const std::vector<double>> f3d, std::span<const std::vector<double>> f2d) {
  if (f3d.empty()) throw Error(ErrorCode::NoFeaturePairs, "no entry carries a 2D feature");
  if (f3d.size() != f2d.size()) throw Error(ErrorCode::DimensionMismatch, "feature pair counts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < f3d.size(); ++i) {
    if (f3d[i].size() != f2d[i].size()) throw Error(ErrorCode::DimensionMismatch, "3D/2D feature widths differ");
    acc += 1.0 - cosine(f3d[i], f2d[i]);
  }
  return acc / double(f3d.size());
}

inline double total_loss(double lmms, double lspatial, double lambda) { return lmms + lambda * lspatial; }

/// Everything one full-batch objective evaluation needs.
struct TrainBatch {
  Matrix inputs;                       // model_inputs of the scene
  const CorrespondenceSet* pairs = nullptr;
  std::vector<double> entryWeights;    // per correspondence entry (empty = uniform)
  std::vector<double> q;
  double lambda = 1.0;
  std::optional<std::vector<std::uint8_t>> gtLabels;  // hybrid supervision over all points
};

struct LossBreakdown {
  double mms = 0.0;
  double spatial = 0.0;
  double gt = 0.0;
  double total = 0.0;
  bool hasSpatial = false;
};

struct LossAndGradient {
  LossBreakdown loss;
  Parameters grad;
};

namespace detail {

/// Loss and dL/df (per point), dL/dt. Shared by evaluation and backward.
inline LossBreakdown objective(const Matrix& f, std::span<const double> t, const TrainBatch& batch, Matrix* df,
                               std::vector<double>* dt) {
  const auto& entries = batch.pairs->entries;
  if (entries.empty()) throw Error(ErrorCode::EmptyPairSet, "no point-pixel pairs");
  const bool weighted = !batch.entryWeights.empty();
  if (weighted && batch.entryWeights.size() != entries.size())
    throw Error(ErrorCode::DimensionMismatch, "one weight per correspondence entry required");
  const std::size_t d = t.size();

  auto logit = [&](std::size_t p) {
    const auto fp = f.row(p);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += fp[j] * t[j];
    return s;
  };
  auto push = [&](std::size_t p, double gs) {
    if (!df) return;
    auto g = df->row(p);
    const auto fp = f.row(p);
    for (std::size_t j = 0; j < d; ++j) {
      g[j] += gs * t[j];
      (*dt)[j] += gs * fp[j];
    }
  };

  LossBreakdown out;
  double wsum = 0.0;
  for (std::size_t e = 0; e < entries.size(); ++e) wsum += weighted ? batch.entryWeights[e] : 1.0;
  if (!(wsum > 0.0)) throw Error(ErrorCode::EmptyPairSet, "all pair weights are zero");
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& c = entries[e];
    const double w = (weighted ? batch.entryWeights[e] : 1.0) / wsum;
    const double s = logit(c.pointIndex);
    out.mms += w * bce_with_logit(s, c.sampledLogit);
    push(c.pointIndex, w * (sigmoid(s) - c.sampledLogit));
  }

  std::size_t featurePairs = 0;
  for (const auto& c : entries) featurePairs += c.hasFeature() ? 1 : 0;
  if (featurePairs > 0) {
    out.hasSpatial = true;
    const double scale = 1.0 / double(featurePairs);
    for (const auto& c : entries) {
      if (!c.hasFeature()) continue;
      const auto fp = f.row(c.pointIndex);
      const auto& g2 = c.sampledFeature;
      if (g2.size() != d) throw Error(ErrorCode::DimensionMismatch, "2D feature width differs from model output");
      double fg = 0.0, ff = 0.0, gg = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        fg += fp[j] * g2[j];
        ff += fp[j] * fp[j];
        gg += g2[j] * g2[j];
      }
      const double nf = std::sqrt(ff), ng = std::sqrt(gg);
      if (nf < 1e-12 || ng < 1e-12)
        throw Error(ErrorCode::ZeroVector, "zero feature at point " + std::to_string(c.pointIndex));
      const double cs = fg / (nf * ng);
      out.spatial += scale * (1.0 - cs);
      if (df) {
        // d(1 - cos)/df = -(g / (|f||g|) - cos f / |f|^2)
        auto gr = df->row(c.pointIndex);
        const double k = batch.lambda * scale;
        for (std::size_t j = 0; j < d; ++j) gr[j] -= k * (g2[j] / (nf * ng) - cs * fp[j] / ff);
      }
    }
  }

  if (batch.gtLabels) {
    const auto& gt = *batch.gtLabels;
    if (gt.size() != f.rows) throw Error(ErrorCode::DimensionMismatch, "GT label count differs from point count");
    const double scale = 1.0 / double(gt.size());
    for (std::size_t p = 0; p < gt.size(); ++p) {
      const double s = logit(p);
      const double y = gt[p] ? 1.0 : 0.0;
      out.gt += scale * bce_with_logit(s, y);
      push(p, scale * (sigmoid(s) - y));
    }
  }

  out.total = total_loss(out.mms, out.spatial, batch.lambda) + out.gt;
  return out;
}

}  // namespace detail

inline LossBreakdown evaluate_loss(const FeatureModel& model, const TrainBatch& batch) {
  const auto cache = forward_cached(model, batch.inputs);
  const auto t = project_query(model, batch.q);
  return detail::objective(cache.acts.back(), t, batch, nullptr, nullptr);
}

/// Exact analytic gradient of the full objective w.r.t. every parameter (MLP and W).
inline LossAndGradient backward(const FeatureModel& model, const TrainBatch& batch) {
  const auto cache = forward_cached(model, batch.inputs);
  const auto t = project_query(model, batch.q);
  const auto& f = cache.acts.back();
  Matrix delta(f.rows, f.cols);
  std::vector<double> dt(t.size(), 0.0);

  LossAndGradient out;
  out.loss = detail::objective(f, t, batch, &delta, &dt);
  out.grad = model.params.zeros_like();

  // dW = dt q^T
  auto& g = out.grad;
  for (std::size_t r = 0; r < g.projRows; ++r)
    for (std::size_t c = 0; c < g.projCols; ++c) g.projection[r * g.projCols + c] = dt[r] * batch.q[c];

  const auto& layers = model.params.layers;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    auto& gl = g.layers[l];
    const auto& a = cache.acts[l];
    for (std::size_t n = 0; n < delta.rows; ++n) {
      const auto dn = delta.row(n);
      const auto an = a.row(n);
      for (std::size_t o = 0; o < layer.out; ++o) {
        if (dn[o] == 0.0) continue;
        double* gw = gl.weight.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += dn[o] * an[i];
        gl.bias[o] += dn[o];
      }
    }
    if (l == 0) break;
    Matrix prev(delta.rows, layer.in);
    for (std::size_t n = 0; n < delta.rows; ++n) {
      const auto dn = delta.row(n);
      const auto an = a.row(n);
      auto pn = prev.row(n);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = layer.weight.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) pn[i] += dn[o] * w[i];
      }
      for (std::size_t i = 0; i < layer.in; ++i) pn[i] *= 1.0 - an[i] * an[i];  // tanh'
    }
    delta = std::move(prev);
  }
  return out;
}

struct OptimizerSettings {
  double lr = 0.05;
  double momentum = 0.9;
  double weightDecay = 1e-4;
};

struct LossRecord {
  std::size_t epoch = 0;
  double mms = 0.0;
  double spatial = 0.0;
  double gt = 0.0;
  double total = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct TrainState {
  FeatureModel model;
  Parameters velocity;
  std::size_t epoch = 0;
  std::vector<LossRecord> lossHistory;
};

inline TrainState make_train_state(FeatureModel model) {
  TrainState s;
  s.velocity = model.params.zeros_like();
  s.model = std::move(model);
  return s;
}

/// Momentum SGD: v <- mu v + g + wd theta (no decay on biases); theta <- theta - lr v.
inline void sgd_step(TrainState& state, const Parameters& grad, const OptimizerSettings& opt) {
  std::vector<std::span<double>> theta, vel;
  std::vector<std::span<const double>> gs;
  std::vector<bool> decays;
  state.model.params.for_each([&](std::span<double> s, bool decay) {
    theta.push_back(s);
    decays.push_back(decay);
  });
  state.velocity.for_each([&](std::span<double> s, bool) { vel.push_back(s); });
  grad.for_each([&](std::span<const double> s, bool) { gs.push_back(s); });
  if (theta.size() != vel.size() || theta.size() != gs.size())
    throw Error(ErrorCode::DimensionMismatch, "gradient/parameter structure differs");
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (theta[k].size() != gs[k].size() || theta[k].size() != vel[k].size())
      throw Error(ErrorCode::DimensionMismatch, "gradient/parameter shape differs");
    const double wd = decays[k] ? opt.weightDecay : 0.0;
    for (std::size_t i = 0; i < theta[k].size(); ++i) {
      vel[k][i] = opt.momentum * vel[k][i] + gs[k][i] + wd * theta[k][i];
      theta[k][i] -= opt.lr * vel[k][i];
    }
  }
}

/// Per-entry attention weights for the alignment loss; all ones when attention is off.
inline std::vector<double> entry_weights(const CorrespondenceSet& pairs, const UnifiedQuery& query) {
  std::vector<double> w;
  w.reserve(pairs.size());
  for (const auto& c : pairs.entries) w.push_back(query.weight_of(c.viewIndex));
  return w;
}

struct TrainOptions {
  std::size_t epochs = 200;
  OptimizerSettings opt;
  double lambda = 1.0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t outputDim = 16;
  std::uint64_t seed = 0;
};

/// Full-batch training on one scene. lossHistory[e] is the objective before update e.
/// A GT mask switches on hybrid supervision (extra BCE over all points, weight 1).
inline TrainState train(const PointCloud& cloud, const CorrespondenceSet& pairs, const UnifiedQuery& query,
                        const TrainOptions& options, const std::optional<std::vector<std::uint8_t>>& gtMask = {}) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyPairSet, "training needs a non-empty correspondence set");
  auto model = init_model(options.hidden, options.outputDim, query.q.size(), options.seed);
  fit_input_normalization(model, cloud);
  auto state = make_train_state(std::move(model));

  TrainBatch batch;
  batch.inputs = model_inputs(state.model, cloud);
  batch.pairs = &pairs;
  batch.entryWeights = entry_weights(pairs, query);
  batch.q = query.q;
  batch.lambda = options.lambda;
  batch.gtLabels = gtMask;

  for (std::size_t e = 0; e < options.epochs; ++e) {
    const auto lg = backward(state.model, batch);
    if (!std::isfinite(lg.loss.total) || !lg.grad.all_finite())
      throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(e));
    state.lossHistory.push_back({e, lg.loss.mms, lg.loss.spatial, lg.loss.gt, lg.loss.total});
    sgd_step(state, lg.grad, options.opt);
    if (!state.model.params.all_finite()) throw Error(ErrorCode::NonFiniteLoss, "parameters diverged at epoch " + std::to_string(e));
    state.epoch = e + 1;
  }
  return state;
}

}  // namespace pl3d

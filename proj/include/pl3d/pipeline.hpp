#pragma once

#include <optional>

#include "attention.hpp"
#include "geometry.hpp"
#include "infer_eval.hpp"
#include "learner.hpp"

namespace pl3d {

struct FuseResult {
  std::vector<std::size_t> selectedViews;  // random k-subset before filtering
  UnifiedQuery query;                      // retainedViews = views that passed the filter
  CorrespondenceSet pairs;
  FusedLabels labels;
};

inline std::vector<std::vector<double>> embeddings_of(const SceneBundle& scene, std::span<const std::size_t> views) {
  std::vector<std::vector<double>> out;
  for (auto v : views) {
    const auto& e = scene.predictions[v].embedding;
    out.emplace_back(e.begin(), e.end());
  }
  return out;
}

inline std::vector<double> confidences_of(const SceneBundle& scene, std::span<const std::size_t> views) {
  std::vector<double> out;
  for (auto v : views) out.push_back(scene.predictions[v].confidence);
  return out;
}

/// Select k views, drop unreliable ones, unify the query, and fuse per-view masks onto the points.
inline FuseResult fuse_scene(const SceneBundle& scene, const PipelineConfig& cfg) {
  cfg.validate();
  if (scene.predictions.size() != scene.views.size() || scene.predictions.empty())
    throw Error(ErrorCode::InvalidArgument, "bundle '" + scene.id + "' carries no per-view predictions");
  FuseResult r;
  r.selectedViews = select_views(scene.views.size(), cfg.k, cfg.seed);
  const auto retained = filter_predictions(scene.predictions, cfg, r.selectedViews);
  r.query = unify_query(embeddings_of(scene, retained), confidences_of(scene, retained), cfg.fixedPointIters);
  r.query.retainedViews = retained;
  if (!cfg.tokenAttention) r.query = with_uniform_weights(std::move(r.query));
  r.pairs = build_correspondences(scene, retained, cfg.depthTolFrac);
  r.labels = fuse_pseudo_labels(r.pairs, r.query);
  return r;
}

/// Model output width: the 2D feature width when feature maps exist, else cfg.featureDim.
inline std::size_t model_output_dim(const SceneBundle& scene, const PipelineConfig& cfg) {
  for (const auto& p : scene.predictions)
    if (p.featureMap) return scene.featureDim;
  return cfg.featureDim;
}

inline TrainOptions train_options(const SceneBundle& scene, const PipelineConfig& cfg) {
  TrainOptions o;
  o.epochs = cfg.epochs;
  o.opt = {cfg.lr, cfg.momentum, cfg.weightDecay};
  o.lambda = cfg.lambda;
  o.hidden = cfg.hidden;
  o.outputDim = model_output_dim(scene, cfg);
  o.seed = cfg.seed;
  return o;
}

inline TrainState train_scene(const SceneBundle& scene, const FuseResult& fused, const PipelineConfig& cfg) {
  std::optional<std::vector<std::uint8_t>> gt;
  if (cfg.hybrid) {
    if (!scene.gtMask) throw Error(ErrorCode::InvalidArgument, "hybrid training needs a GT mask in the bundle");
    gt = scene.gtMask;
  }
  return train(scene.points, fused.pairs, fused.query, train_options(scene, cfg), gt);
}

inline QueryResult infer_scene(const FeatureModel& model, const SceneBundle& scene, const FuseResult& fused,
                               const PipelineConfig& cfg) {
  return infer_mask(model, scene.points, fused.query.q, cfg.inferThreshold, cfg.inferMode, scene.gtMask);
}

/// IoU of the binarized fused labels against the bundle's GT.
inline double fused_iou(const SceneBundle& scene, const FuseResult& fused) {
  if (!scene.gtMask) throw Error(ErrorCode::InvalidArgument, "bundle has no GT mask");
  return iou(fused.labels.binarize(scene.points.size()), *scene.gtMask);
}

}  // namespace pl3d

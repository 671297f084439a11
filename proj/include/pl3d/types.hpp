#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"

namespace pl3d {

using Vec3f = std::array<float, 3>;
using Vec3 = std::array<double, 3>;

/// Row-major H x W x C grid. Masks and depth maps use C = 1.
template <typename T>
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<T> data;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, std::size_t c = 1, T fill = T{})
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  T& at(std::size_t y, std::size_t x, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  const T& at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }

  bool operator==(const Raster&) const = default;
};

struct PointCloud {
  std::vector<Vec3f> positions;
  std::optional<std::vector<Vec3f>> colors;

  std::size_t size() const { return positions.size(); }
  bool operator==(const PointCloud&) const = default;
};

/// Pinhole camera with a rigid world-to-camera pose and a metric depth map (0 = no return).
struct CameraView {
  std::array<float, 9> intrinsics{};     // row-major 3x3
  std::array<float, 16> worldToCamera{};  // row-major 4x4
  std::size_t width = 0;
  std::size_t height = 0;
  Raster<float> depth;

  double fx() const { return intrinsics[0]; }
  double fy() const { return intrinsics[4]; }
  double cx() const { return intrinsics[2]; }
  double cy() const { return intrinsics[5]; }

  bool operator==(const CameraView&) const = default;
};

/// One 2D reasoning-segmentation output for one view.
struct ViewPrediction {
  Raster<float> mask;  // probability of target per pixel
  std::vector<float> embedding;
  float confidence = 0.0f;
  std::optional<Raster<float>> featureMap;  // H' x W' x d_f

  bool operator==(const ViewPrediction&) const = default;
};

/// Point cloud, posed depth views, per-view predictions (may be empty) and an optional GT target mask.
struct SceneBundle {
  std::string id;
  std::string query;
  PointCloud points;
  std::vector<CameraView> views;
  std::vector<ViewPrediction> predictions;
  std::optional<std::vector<std::uint8_t>> gtMask;
  std::size_t embedDim = 0;
  std::size_t featureDim = 0;

  bool operator==(const SceneBundle&) const = default;
};

struct Correspondence {
  std::size_t pointIndex = 0;
  std::size_t viewIndex = 0;
  double u = 0.0;
  double v = 0.0;
  double sampledLogit = 0.0;
  std::vector<double> sampledFeature;  // empty when the view has no feature map

  bool hasFeature() const { return !sampledFeature.empty(); }
  bool operator==(const Correspondence&) const = default;
};

/// Entries ordered by (pointIndex, viewIndex).
struct CorrespondenceSet {
  std::vector<Correspondence> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool operator==(const CorrespondenceSet&) const = default;
};

struct UnifiedQuery {
  std::vector<double> q;
  std::vector<double> weights;  // parallel to retainedViews
  std::vector<std::size_t> retainedViews;

  double weight_of(std::size_t view) const {
    for (std::size_t i = 0; i < retainedViews.size(); ++i)
      if (retainedViews[i] == view) return weights[i];
    return 0.0;
  }
  bool operator==(const UnifiedQuery&) const = default;
};

enum class InferMode { Dot, Cosine };

struct PipelineConfig {
  std::size_t k = 4;
  double alphaMin = 0.3;
  double areaMinFrac = 0.001;
  double lambda = 1.0;
  double inferThreshold = 0.5;
  double depthTolFrac = 0.01;
  std::size_t fixedPointIters = 3;
  std::uint64_t seed = 0;

  // fusion / training knobs
  bool tokenAttention = true;  // false = uniform weights over retained views
  std::size_t epochs = 200;
  double lr = 0.05;
  double momentum = 0.9;
  double weightDecay = 1e-4;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t featureDim = 16;  // model output width when the bundle carries no feature maps
  bool hybrid = false;
  InferMode inferMode = InferMode::Dot;

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
    if (k < 1) fail("k must be >= 1");
    if (!(alphaMin >= 0.0 && alphaMin <= 1.0)) fail("alphaMin must be in [0,1]");
    if (!(areaMinFrac >= 0.0 && areaMinFrac <= 1.0)) fail("areaMinFrac must be in [0,1]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
    if (!(inferThreshold >= 0.0 && inferThreshold <= 1.0)) fail("inferThreshold must be in [0,1]");
    if (!(depthTolFrac >= 0.0) || !std::isfinite(depthTolFrac)) fail("depthTolFrac must be >= 0");
    if (fixedPointIters < 1) fail("fixedPointIters must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0,1)");
    if (!(weightDecay >= 0.0)) fail("weightDecay must be >= 0");
    if (featureDim < 1) fail("featureDim must be >= 1");
    for (auto h : hidden)
      if (h < 1) fail("hidden widths must be >= 1");
  }
};

struct Violation {
  std::string code;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(const std::string& code) const {
    for (const auto& v : violations)
      if (v.code == code) return true;
    return false;
  }
};

namespace detail {

inline bool rotation_orthonormal(const std::array<float, 16>& m, double tol = 1e-6) {
  double r[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[i * 4 + j];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k][i] * r[k][j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  return std::abs(det - 1.0) <= tol;
}

inline bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Checks every core-type invariant; never throws and never mutates the bundle.
inline ValidationReport validate_scene(const SceneBundle& scene) {
  ValidationReport report;
  auto add = [&](std::string code, std::string detail) {
    report.violations.push_back({std::move(code), std::move(detail)});
  };

  const auto n = scene.points.size();
  if (n == 0) add("empty point cloud", "N must be >= 1");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = scene.points.positions[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      add("non-finite point", "point " + std::to_string(i));
  }
  if (scene.points.colors) {
    const auto& c = *scene.points.colors;
    if (c.size() != n) add("color count mismatch", std::to_string(c.size()) + " colors for " + std::to_string(n) + " points");
    for (std::size_t i = 0; i < c.size(); ++i)
      for (float x : c[i])
        if (!(x >= 0.0f && x <= 1.0f)) {
          add("color out of range", "point " + std::to_string(i));
          break;
        }
  }

  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    const auto& view = scene.views[i];
    const auto tag = "view " + std::to_string(i);
    const auto& k = view.intrinsics;
    if (!(k[0] > 0.0f) || !(k[4] > 0.0f)) add("non-positive focal length", tag);
    if (k[1] != 0.0f || k[3] != 0.0f || k[6] != 0.0f || k[7] != 0.0f || k[8] != 1.0f)
      add("malformed intrinsics", tag);
    if (!detail::rotation_orthonormal(view.worldToCamera)) add("non-orthonormal rotation", tag);
    const auto& m = view.worldToCamera;
    if (m[12] != 0.0f || m[13] != 0.0f || m[14] != 0.0f || m[15] != 1.0f) add("malformed pose", tag);
    if (view.width == 0 || view.height == 0) add("empty view", tag);
    if (view.depth.height != view.height || view.depth.width != view.width || view.depth.channels != 1)
      add("depth/view dim mismatch", tag);
    for (float d : view.depth.data)
      if (!(d >= 0.0f) || !std::isfinite(d)) {
        add("invalid depth", tag);
        break;
      }
  }

  if (!scene.predictions.empty() && scene.predictions.size() != scene.views.size())
    add("prediction count mismatch", std::to_string(scene.predictions.size()) + " predictions for " +
                                         std::to_string(scene.views.size()) + " views");
  for (std::size_t i = 0; i < scene.predictions.size(); ++i) {
    const auto& pred = scene.predictions[i];
    const auto tag = "view " + std::to_string(i);
    if (i < scene.views.size()) {
      const auto& view = scene.views[i];
      if (pred.mask.height != view.height || pred.mask.width != view.width || pred.mask.channels != 1)
        add("mask/view dim mismatch", tag);
    }
    for (float x : pred.mask.data)
      if (!(x >= 0.0f && x <= 1.0f)) {
        add("mask value out of range", tag);
        break;
      }
    if (pred.embedding.size() != scene.embedDim) add("embedding dim mismatch", tag);
    if (!detail::all_finite(pred.embedding)) add("non-finite embedding", tag);
    if (!(pred.confidence >= 0.0f && pred.confidence <= 1.0f)) add("confidence out of range", tag);
    if (pred.featureMap) {
      if (pred.featureMap->channels != scene.featureDim) add("feature dim mismatch", tag);
      if (pred.featureMap->height == 0 || pred.featureMap->width == 0) add("empty feature map", tag);
      if (!detail::all_finite(pred.featureMap->data)) add("non-finite feature", tag);
    }
  }

  if (scene.gtMask) {
    if (scene.gtMask->size() != n) add("gt mask size mismatch", std::to_string(scene.gtMask->size()));
    for (auto b : *scene.gtMask)
      if (b > 1) {
        add("gt mask not binary", "");
        break;
      }
  }
  return report;
}

}  // namespace pl3d

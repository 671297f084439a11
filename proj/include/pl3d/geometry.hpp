#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "types.hpp"

namespace pl3d {

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double camDepth = 0.0;
};

enum class ProjectStatus { Ok, BehindCamera, OutOfFrame };

struct ProjectOutcome {
  ProjectStatus status = ProjectStatus::Ok;
  Projection proj;

  bool ok() const { return status == ProjectStatus::Ok; }
};

inline Vec3 to_camera(const Vec3& world, const CameraView& view) {
  const auto& m = view.worldToCamera;
  Vec3 c;
  for (int r = 0; r < 3; ++r)
    c[r] = double(m[r * 4 + 0]) * world[0] + double(m[r * 4 + 1]) * world[1] + double(m[r * 4 + 2]) * world[2] +
           double(m[r * 4 + 3]);
  return c;
}

/// Non-throwing projection used in hot loops.
inline ProjectOutcome try_project(const Vec3& world, const CameraView& view) {
  const Vec3 c = to_camera(world, view);
  ProjectOutcome out;
  if (!(c[2] > 0.0)) {
    out.status = ProjectStatus::BehindCamera;
    return out;
  }
  out.proj.u = view.fx() * c[0] / c[2] + view.cx();
  out.proj.v = view.fy() * c[1] / c[2] + view.cy();
  out.proj.camDepth = c[2];
  // half-open frame: u == W is out
  if (!(out.proj.u >= 0.0 && out.proj.u < double(view.width) && out.proj.v >= 0.0 &&
        out.proj.v < double(view.height)))
    out.status = ProjectStatus::OutOfFrame;
  return out;
}

inline Projection project_point(const Vec3& world, const CameraView& view) {
  const auto out = try_project(world, view);
  if (out.status == ProjectStatus::BehindCamera) throw Error(ErrorCode::BehindCamera, "camera-frame z <= 0");
  if (out.status == ProjectStatus::OutOfFrame)
    throw Error(ErrorCode::OutOfFrame, "pixel (" + std::to_string(out.proj.u) + ", " + std::to_string(out.proj.v) + ")");
  return out.proj;
}

/// Inverse of project_point: pixel + camera depth back to world coordinates.
inline Vec3 unproject(const Projection& p, const CameraView& view) {
  const double z = p.camDepth;
  const Vec3 c{(p.u - view.cx()) * z / view.fx(), (p.v - view.cy()) * z / view.fy(), z};
  const auto& m = view.worldToCamera;
  // world = R^T (c - t)
  const Vec3 d{c[0] - m[3], c[1] - m[7], c[2] - m[11]};
  Vec3 w;
  for (int j = 0; j < 3; ++j) w[j] = double(m[0 * 4 + j]) * d[0] + double(m[1 * 4 + j]) * d[1] + double(m[2 * 4 + j]) * d[2];
  return w;
}

struct PixelIndex {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Nearest pixel for an in-frame projection (pixel centres on integers).
inline PixelIndex nearest_pixel(double u, double v, std::size_t width, std::size_t height) {
  const auto clampi = [](double x, std::size_t n) {
    const double r = std::round(x);
    if (r <= 0.0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(r), n - 1);
  };
  return {clampi(u, width), clampi(v, height)};
}

inline bool visibility_test(const Projection& proj, const CameraView& view, double depthTolFrac) {
  const auto px = nearest_pixel(proj.u, proj.v, view.width, view.height);
  const double sample = view.depth.at(px.y, px.x);
  if (!(sample > 0.0)) return false;
  return std::abs(proj.camDepth - sample) <= depthTolFrac * proj.camDepth;
}

/// Bilinear sample of channel range [0, C) at image-space (u, v) with edge clamping.
/// A raster whose size differs from the image (feature maps) is addressed through
/// the pixel-area mapping (u + 0.5) * W' / W - 0.5.
template <typename T>
void bilinear_sample(const Raster<T>& r, double u, double v, std::size_t imageWidth, std::size_t imageHeight,
                     std::span<double> out) {
  if (r.width != imageWidth) u = (u + 0.5) * double(r.width) / double(imageWidth) - 0.5;
  if (r.height != imageHeight) v = (v + 0.5) * double(r.height) / double(imageHeight) - 0.5;
  u = std::clamp(u, 0.0, double(r.width - 1));
  v = std::clamp(v, 0.0, double(r.height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(u));
  const auto y0 = static_cast<std::size_t>(std::floor(v));
  const auto x1 = std::min(x0 + 1, r.width - 1);
  const auto y1 = std::min(y0 + 1, r.height - 1);
  const double ax = u - double(x0);
  const double ay = v - double(y0);
  for (std::size_t c = 0; c < r.channels; ++c) {
    const double top = (1.0 - ax) * double(r.at(y0, x0, c)) + ax * double(r.at(y0, x1, c));
    const double bottom = (1.0 - ax) * double(r.at(y1, x0, c)) + ax * double(r.at(y1, x1, c));
    out[c] = (1.0 - ay) * top + ay * bottom;
  }
}

template <typename T>
double bilinear_sample(const Raster<T>& r, double u, double v) {
  double out = 0.0;
  bilinear_sample(r, u, v, r.width, r.height, std::span<double>(&out, 1));
  return out;
}

inline Vec3 world_point(const PointCloud& cloud, std::size_t i) {
  const auto& p = cloud.positions[i];
  return {p[0], p[1], p[2]};
}

/// Point-pixel pairs for the retained views: in-frame, visible, with mask/feature samples.
inline CorrespondenceSet build_correspondences(const SceneBundle& scene, std::span<const std::size_t> retainedViews,
                                               double depthTolFrac) {
  std::vector<std::size_t> views(retainedViews.begin(), retainedViews.end());
  std::sort(views.begin(), views.end());
  for (auto v : views)
    if (v >= scene.views.size() || v >= scene.predictions.size())
      throw Error(ErrorCode::InvalidArgument, "retained view " + std::to_string(v) + " has no prediction");

  CorrespondenceSet set;
  for (std::size_t p = 0; p < scene.points.size(); ++p) {
    const Vec3 x = world_point(scene.points, p);
    for (auto vi : views) {
      const auto& view = scene.views[vi];
      const auto out = try_project(x, view);
      if (!out.ok() || !visibility_test(out.proj, view, depthTolFrac)) continue;
      const auto& pred = scene.predictions[vi];
      Correspondence c;
      c.pointIndex = p;
      c.viewIndex = vi;
      c.u = out.proj.u;
      c.v = out.proj.v;
      c.sampledLogit = std::clamp(bilinear_sample(pred.mask, c.u, c.v), 0.0, 1.0);
      if (pred.featureMap) {
        c.sampledFeature.resize(pred.featureMap->channels);
        bilinear_sample(*pred.featureMap, c.u, c.v, view.width, view.height, c.sampledFeature);
      }
      set.entries.push_back(std::move(c));
    }
  }
  return set;
}

}  // namespace pl3d

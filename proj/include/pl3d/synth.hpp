#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace pl3d {

/// Knobs of the synthetic scene + 2D-prediction oracle.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t numObjects = 5;
  std::size_t pointsPerObject = 200;
  std::array<double, 3> roomExtent{6.0, 6.0, 3.0};
  std::size_t targetIndex = 0;
  std::size_t viewCount = 4;
  std::size_t imageSize = 64;
  double hallucinationRate = 0.0;
  double dropVisibleRate = 0.0;
  double embedNoise = 0.05;
  double featureNoise = 0.05;
  std::size_t embedDim = 32;
  std::size_t featureDim = 16;
  double fovDegrees = 55.0;
  double objectSizeMin = 0.4;
  double objectSizeMax = 0.8;
  double layoutSpan = 0.18;  // objects lie within +-span * extent of the room centre

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
    if (numObjects < 1) fail("numObjects must be >= 1");
    if (targetIndex >= numObjects) fail("targetIndex must be < numObjects");
    if (pointsPerObject < 1) fail("pointsPerObject must be >= 1");
    if (viewCount < 1) fail("viewCount must be >= 1");
    if (imageSize < 4) fail("imageSize must be >= 4");
    if (!(hallucinationRate >= 0.0 && hallucinationRate <= 1.0)) fail("hallucinationRate must be in [0,1]");
    if (!(dropVisibleRate >= 0.0 && dropVisibleRate <= 1.0)) fail("dropVisibleRate must be in [0,1]");
    if (!(embedNoise >= 0.0) || !(featureNoise >= 0.0)) fail("noise levels must be >= 0");
    if (embedDim < 2 || featureDim < 2) fail("embedDim and featureDim must be >= 2");
    if (!(fovDegrees > 1.0 && fovDegrees < 179.0)) fail("fovDegrees must be in (1, 179)");
    for (double e : roomExtent)
      if (!(e > 0.0)) fail("roomExtent must be positive");
  }
};

/// A generated scene plus the bookkeeping the prediction oracle needs.
struct SynthScene {
  SceneBundle bundle;  // no predictions yet; gtMask set
  std::vector<std::size_t> objectOf;  // object id per point
  std::vector<std::vector<double>> objectConcepts;  // d_e unit vector per object; target's is the query concept
  std::vector<double> featureConcept;   // d_f unit vector inside the target mask
  std::vector<double> featureDistractor;  // d_f unit vector orthogonal to featureConcept
};

inline constexpr double kSynthVisibilityTol = 0.01;
inline constexpr double kMinHallucinationAngleDeg = 60.0;

namespace synth_detail {

enum Stream : std::uint64_t { Layout = 1, Points, Cameras, Concepts, Views, Corrupt };

inline std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  while (!(n > 1e-6)) {
    n = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      n += x * x;
    }
    n = std::sqrt(n);
  }
  for (auto& x : v) x /= n;
  return v;
}

inline double angle_deg(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

/// Unit vector at >= minDeg from `away`.
inline std::vector<double> unit_away_from(Rng& rng, std::span<const double> away, double minDeg) {
  for (;;) {
    auto v = random_unit(rng, away.size());
    if (angle_deg(v, away) >= minDeg) return v;
  }
}

/// world-to-camera for a camera at `eye` looking at `target`, z up; camera x right, y down, z forward.
inline std::array<float, 16> look_at(const Vec3& eye, const Vec3& target) {
  auto sub = [](const Vec3& a, const Vec3& b) { return Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]}; };
  auto cross = [](const Vec3& a, const Vec3& b) {
    return Vec3{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  };
  auto unit = [](Vec3 a) {
    const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    return Vec3{a[0] / n, a[1] / n, a[2] / n};
  };
  const Vec3 f = unit(sub(target, eye));
  const Vec3 r = unit(cross(f, Vec3{0, 0, 1}));
  const Vec3 d = cross(f, r);
  const Vec3 rows[3] = {r, d, f};
  std::array<float, 16> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i * 4 + j] = static_cast<float>(rows[i][j]);
    // translation from the float-rounded rotation keeps the pose exactly rigid in storage
    m[i * 4 + 3] = static_cast<float>(-(double(m[i * 4 + 0]) * eye[0] + double(m[i * 4 + 1]) * eye[1] +
                                        double(m[i * 4 + 2]) * eye[2]));
  }
  m[15] = 1.0f;
  return m;
}

/// Nearest-depth point splat at each point's own pixel.
inline Raster<float> render_depth(const PointCloud& cloud, const CameraView& view) {
  Raster<float> depth(view.height, view.width, 1, 0.0f);
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const auto out = try_project(world_point(cloud, p), view);
    if (!out.ok()) continue;
    const auto px = nearest_pixel(out.proj.u, out.proj.v, view.width, view.height);
    float z = static_cast<float>(out.proj.camDepth);
    if (double(z) > out.proj.camDepth) z = std::nextafter(z, 0.0f);  // never store more than the true depth
    float& d = depth.at(px.y, px.x);
    if (d == 0.0f || z < d) d = z;
  }
  return depth;
}

/// Visible pixels of one object, dilated by one pixel.
inline Raster<float> object_mask(const SynthScene& s, std::size_t viewIndex, std::size_t object) {
  const auto& view = s.bundle.views[viewIndex];
  Raster<std::uint8_t> hit(view.height, view.width, 1, 0);
  for (std::size_t p = 0; p < s.bundle.points.size(); ++p) {
    if (s.objectOf[p] != object) continue;
    const auto out = try_project(world_point(s.bundle.points, p), view);
    if (!out.ok() || !visibility_test(out.proj, view, kSynthVisibilityTol)) continue;
    const auto px = nearest_pixel(out.proj.u, out.proj.v, view.width, view.height);
    hit.at(px.y, px.x) = 1;
  }
  Raster<float> mask(view.height, view.width, 1, 0.0f);
  for (std::size_t y = 0; y < view.height; ++y)
    for (std::size_t x = 0; x < view.width; ++x) {
      if (!hit.at(y, x)) continue;
      for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(y + 1, view.height - 1); ++yy)
        for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(x + 1, view.width - 1); ++xx) mask.at(yy, xx) = 1.0f;
    }
  return mask;
}

inline bool mask_empty(const Raster<float>& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](float x) { return x == 0.0f; });
}

inline std::vector<float> noisy(std::span<const double> base, double sigma, Rng& rng) {
  std::vector<float> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = static_cast<float>(base[i] + sigma * rng.normal());
  return out;
}

inline std::vector<double> as_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace synth_detail

/// Objects (boxes and spheres resting on the floor) sampled as surface points, a ring of inward-looking
/// cameras and exact point-splat depth maps.
inline SynthScene gen_scene(const SynthSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  SynthScene s;
  auto& b = s.bundle;
  b.id = "synth_" + std::to_string(spec.seed);
  b.embedDim = spec.embedDim;
  b.featureDim = spec.featureDim;

  struct Object {
    bool sphere;
    Vec3 center;  // footprint centre, z = floor contact
    Vec3 half;    // box half extents or sphere radius in [0]
    Vec3 color;
  };
  std::vector<Object> objects;
  Rng layout(derive_seed(spec.seed, Layout));
  const double spanX = spec.layoutSpan * spec.roomExtent[0], spanY = spec.layoutSpan * spec.roomExtent[1];
  for (std::size_t o = 0; o < spec.numObjects; ++o) {
    Object obj{};
    obj.sphere = layout.bernoulli(0.4);
    const double size = layout.uniform(spec.objectSizeMin, spec.objectSizeMax);
    if (obj.sphere) {
      obj.half = {0.5 * size, 0.5 * size, 0.5 * size};
    } else {
      obj.half = {0.5 * size, 0.5 * layout.uniform(spec.objectSizeMin, spec.objectSizeMax),
                  0.5 * layout.uniform(spec.objectSizeMin, 1.25 * spec.objectSizeMax)};
    }
    const double footprint = std::hypot(obj.half[0], obj.half[1]);
    for (int attempt = 0;; ++attempt) {
      obj.center = {layout.uniform(-spanX, spanX), layout.uniform(-spanY, spanY), 0.0};
      bool clear = true;
      for (const auto& other : objects) {
        const double gap = std::hypot(obj.center[0] - other.center[0], obj.center[1] - other.center[1]) -
                           footprint - std::hypot(other.half[0], other.half[1]);
        clear = clear && gap > 0.2;
      }
      if (clear || attempt > 1000) break;
    }
    for (;;) {
      obj.color = {layout.uniform(0.1, 0.9), layout.uniform(0.1, 0.9), layout.uniform(0.1, 0.9)};
      bool distinct = true;
      for (const auto& other : objects)
        distinct = distinct && std::hypot(obj.color[0] - other.color[0], obj.color[1] - other.color[1],
                                          obj.color[2] - other.color[2]) > 0.3;
      if (distinct) break;
    }
    objects.push_back(obj);
  }

  Rng pts(derive_seed(spec.seed, Points));
  std::vector<Vec3f> colors;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const auto& obj = objects[o];
    for (std::size_t i = 0; i < spec.pointsPerObject; ++i) {
      Vec3 p;
      if (obj.sphere) {
        // sphere surface above 120 degrees from the top pole (the underside is never seen)
        const double r = obj.half[0];
        const double cz = pts.uniform(-0.5, 1.0);
        const double phi = pts.uniform(0.0, 2.0 * std::numbers::pi);
        const double rho = std::sqrt(std::max(0.0, 1.0 - cz * cz));
        p = {obj.center[0] + r * rho * std::cos(phi), obj.center[1] + r * rho * std::sin(phi), r + r * cz};
      } else {
        // top face and four sides, area-weighted
        const auto& h = obj.half;
        const double top = 4 * h[0] * h[1], sx = 4 * h[1] * h[2], sy = 4 * h[0] * h[2];
        const double pick = pts.uniform(0.0, top + 2 * sx + 2 * sy);
        const double a = pts.uniform(-1.0, 1.0), c = pts.uniform(-1.0, 1.0);
        if (pick < top) {
          p = {h[0] * a, h[1] * c, 2 * h[2]};
        } else if (pick < top + 2 * sx) {
          p = {pick < top + sx ? h[0] : -h[0], h[1] * a, h[2] * (1 + c)};
        } else {
          p = {h[0] * a, pick < top + 2 * sx + sy ? h[1] : -h[1], h[2] * (1 + c)};
        }
        p[0] += obj.center[0];
        p[1] += obj.center[1];
      }
      b.points.positions.push_back({float(p[0]), float(p[1]), float(p[2])});
      Vec3f col;
      for (int a = 0; a < 3; ++a) col[a] = float(std::clamp(obj.color[a] + 0.02 * pts.normal(), 0.0, 1.0));
      colors.push_back(col);
      s.objectOf.push_back(o);
    }
  }
  b.points.colors = std::move(colors);
  b.gtMask = std::vector<std::uint8_t>(b.points.size(), 0);
  for (std::size_t p = 0; p < b.points.size(); ++p) (*b.gtMask)[p] = s.objectOf[p] == spec.targetIndex ? 1 : 0;

  Rng cams(derive_seed(spec.seed, Cameras));
  const double radius = 0.45 * std::min(spec.roomExtent[0], spec.roomExtent[1]);
  const double height = 0.6 * spec.roomExtent[2];
  const double offset = cams.uniform(0.0, 2.0 * std::numbers::pi);
  const double f = 0.5 * double(spec.imageSize) / std::tan(0.5 * spec.fovDegrees * std::numbers::pi / 180.0);
  for (std::size_t v = 0; v < spec.viewCount; ++v) {
    const double az = offset + 2.0 * std::numbers::pi * double(v) / double(spec.viewCount);
    CameraView view;
    view.width = view.height = spec.imageSize;
    view.intrinsics = {float(f), 0.0f, float(0.5 * spec.imageSize), 0.0f, float(f), float(0.5 * spec.imageSize),
                       0.0f, 0.0f, 1.0f};
    view.worldToCamera = look_at({radius * std::cos(az), radius * std::sin(az), height}, {0.0, 0.0, 0.3});
    view.depth = render_depth(b.points, view);
    b.views.push_back(std::move(view));
  }

  Rng concepts(derive_seed(spec.seed, Concepts));
  s.objectConcepts.resize(spec.numObjects);
  s.objectConcepts[spec.targetIndex] = random_unit(concepts, spec.embedDim);
  for (std::size_t o = 0; o < spec.numObjects; ++o)
    if (o != spec.targetIndex) s.objectConcepts[o] = unit_away_from(concepts, s.objectConcepts[spec.targetIndex], 75.0);
  s.featureConcept = random_unit(concepts, spec.featureDim);
  {
    auto d = random_unit(concepts, spec.featureDim);
    double proj = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) proj += d[i] * s.featureConcept[i];
    double n = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] -= proj * s.featureConcept[i];
      n += d[i] * d[i];
    }
    for (auto& x : d) x /= std::sqrt(n);
    s.featureDistractor = std::move(d);
  }

  static const char* kQueries[] = {"where could I put my coffee down", "something I could sit on for a while",
                                   "the thing that would stop a rolling ball", "what would I trip over in the dark"};
  b.query = kQueries[spec.seed % 4];
  return s;
}

/// Per-view 2D outputs of an ideal reasoning-segmentation model: visible target pixels (dilated), the
/// query concept plus noise as [SEG] embedding, a near-1 confidence and a two-vector feature map.
inline std::vector<ViewPrediction> render_predictions(const SynthScene& s, const SynthSpec& spec) {
  using namespace synth_detail;
  std::vector<ViewPrediction> preds;
  const auto& queryConcept = s.objectConcepts[spec.targetIndex];
  for (std::size_t v = 0; v < s.bundle.views.size(); ++v) {
    Rng rng(derive_seed(spec.seed, Views, v));
    ViewPrediction p;
    p.mask = object_mask(s, v, spec.targetIndex);
    p.embedding = noisy(queryConcept, spec.embedNoise, rng);
    // IoU of the ideal mask against itself is 1; the noise penalty lowers it
    p.confidence = static_cast<float>(std::clamp(1.0 - spec.embedNoise * std::abs(rng.normal()), 0.0, 1.0));
    Raster<float> feat(p.mask.height, p.mask.width, spec.featureDim);
    for (std::size_t y = 0; y < feat.height; ++y)
      for (std::size_t x = 0; x < feat.width; ++x) {
        const auto& base = p.mask.at(y, x) > 0.5f ? s.featureConcept : s.featureDistractor;
        for (std::size_t c = 0; c < spec.featureDim; ++c)
          feat.at(y, x, c) = static_cast<float>(base[c] + spec.featureNoise * rng.normal());
      }
    p.featureMap = std::move(feat);
    preds.push_back(std::move(p));
  }
  return preds;
}

/// Confident hallucinations (wrong object's mask + an embedding >= 60 degrees off the concept)
/// with probability h per view, and dropped visible targets with probability dropVisibleRate.
inline std::vector<ViewPrediction> corrupt_predictions(std::vector<ViewPrediction> preds, const SynthScene& s,
                                                       const SynthSpec& spec) {
  using namespace synth_detail;
  if (spec.hallucinationRate == 0.0 && spec.dropVisibleRate == 0.0) return preds;
  const auto& queryConcept = s.objectConcepts[spec.targetIndex];
  for (std::size_t v = 0; v < preds.size(); ++v) {
    Rng rng(derive_seed(spec.seed, Corrupt, v));
    const bool hallucinate = rng.bernoulli(spec.hallucinationRate);
    const bool drop = rng.bernoulli(spec.dropVisibleRate);
    auto& p = preds[v];
    if (hallucinate && spec.numObjects > 1) {
      std::vector<std::size_t> visible, others;
      std::vector<Raster<float>> masks(spec.numObjects);
      for (std::size_t o = 0; o < spec.numObjects; ++o) {
        if (o == spec.targetIndex) continue;
        others.push_back(o);
        masks[o] = object_mask(s, v, o);
        if (!mask_empty(masks[o])) visible.push_back(o);
      }
      const auto& pool = visible.empty() ? others : visible;
      const auto wrong = pool[rng.index(pool.size())];
      p.mask = std::move(masks[wrong]);
      for (;;) {
        p.embedding = noisy(s.objectConcepts[wrong], spec.embedNoise, rng);
        if (angle_deg(as_double(p.embedding), queryConcept) >= kMinHallucinationAngleDeg) break;
      }
    } else if (drop && !mask_empty(p.mask)) {
      std::fill(p.mask.data.begin(), p.mask.data.end(), 0.0f);
    }
  }
  return preds;
}

/// gen_scene + render_predictions + corrupt_predictions in one bundle.
inline SynthScene make_synthetic_bundle(const SynthSpec& spec) {
  auto s = gen_scene(spec);
  s.bundle.predictions = corrupt_predictions(render_predictions(s, spec), s, spec);
  return s;
}

}  // namespace pl3d

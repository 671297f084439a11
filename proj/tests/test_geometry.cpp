#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "pl3d/geometry.hpp"
#include "pl3d/synth.hpp"
#include "test_util.hpp"

using namespace pl3d;
using testutil::make_pred;
using testutil::make_view;

TEST(ProjectPoint, PrincipalPoint) {
  const auto v = make_view(100, 100, 100, 50, 50);
  const auto p = project_point({0, 0, 2}, v);
  EXPECT_DOUBLE_EQ(p.u, 50.0);
  EXPECT_DOUBLE_EQ(p.v, 50.0);
  EXPECT_DOUBLE_EQ(p.camDepth, 2.0);
}

TEST(ProjectPoint, OffAxisHandEvaluation) {
  const auto v = make_view(101, 100, 100, 50, 50);
  const auto p = project_point({1, 0, 2}, v);
  EXPECT_DOUBLE_EQ(p.u, 100.0);  // 100 * 1/2 + 50
  EXPECT_DOUBLE_EQ(p.v, 50.0);
}

TEST(ProjectPoint, BehindCamera) {
  const auto v = make_view(100, 100, 100, 50, 50);
  try {
    project_point({0, 0, -1}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
  EXPECT_EQ(try_project({0, 0, 0}, v).status, ProjectStatus::BehindCamera);
}

TEST(ProjectPoint, HalfOpenFrame) {
  const auto v = make_view(100, 100, 100, 50, 50);
  // u = 100 exactly is out of a 100-wide frame
  try {
    project_point({1, 0, 2}, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfFrame);
  }
  EXPECT_TRUE(try_project({-1, -1, 2}, v).ok());  // (0, 0) is in
  EXPECT_EQ(try_project({0, 1, 2}, v).status, ProjectStatus::OutOfFrame);  // v = 100
}

TEST(Visibility, ToleranceRule) {
  auto v = make_view(10, 10, 10, 5, 5, 2.0f);
  EXPECT_TRUE(visibility_test({5, 5, 2.0}, v, 0.01));
  EXPECT_FALSE(visibility_test({5, 5, 2.5}, v, 0.01));
  EXPECT_TRUE(visibility_test({5, 5, 1.985}, v, 0.01));  // |dz| = 0.015 <= 0.01985
  EXPECT_FALSE(visibility_test({5, 5, 1.97}, v, 0.01));  // 0.03 > 0.0197
}

TEST(Visibility, NoReturnIsInvisible) {
  auto v = make_view(10, 10, 10, 5, 5, 0.0f);
  EXPECT_FALSE(visibility_test({5, 5, 0.0}, v, 1.0));
  EXPECT_FALSE(visibility_test({5, 5, 2.0}, v, 1.0));
}

TEST(Visibility, UsesNearestPixel) {
  auto v = make_view(10, 10, 10, 5, 5, 2.0f);
  v.depth.at(3, 7) = 5.0f;
  EXPECT_TRUE(visibility_test({6.6, 2.6, 5.0}, v, 0.001));   // rounds to (7, 3)
  EXPECT_FALSE(visibility_test({6.4, 2.6, 5.0}, v, 0.001));  // rounds to (6, 3)
  EXPECT_TRUE(visibility_test({9.7, 9.7, 2.0}, v, 0.001));   // clamps to (9, 9)
}

TEST(Bilinear, HandValues) {
  Raster<float> r(2, 2);
  r.at(0, 0) = 0;
  r.at(0, 1) = 1;
  r.at(1, 0) = 2;
  r.at(1, 1) = 3;
  EXPECT_DOUBLE_EQ(bilinear_sample(r, 0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(r, 1.0, 1.0), 3.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(r, 0.5, 0.5), 1.5);
  EXPECT_DOUBLE_EQ(bilinear_sample(r, 0.25, 0.0), 0.25);
  EXPECT_DOUBLE_EQ(bilinear_sample(r, 1.4, 0.0), 1.0);  // clamped at the edge
}

TEST(Bilinear, FeatureMapAtOtherResolution) {
  // 2x2 feature map over a 4x4 image: image pixel u maps to (u + 0.5) / 2 - 0.5
  Raster<float> f(2, 2, 1);
  f.at(0, 0) = 0;
  f.at(0, 1) = 4;
  f.at(1, 0) = 0;
  f.at(1, 1) = 4;
  double out = 0;
  bilinear_sample(f, 1.5, 0.0, 4, 4, std::span<double>(&out, 1));  // -> 0.5
  EXPECT_DOUBLE_EQ(out, 2.0);
}

TEST(BuildCorrespondences, ConstantMaskAllVisible) {
  SceneBundle s;
  s.embedDim = 1;
  for (int i = 0; i < 9; ++i) s.points.positions.push_back({float(i % 3) - 1.0f, float(i / 3) - 1.0f, 4.0f});
  s.views.push_back(make_view(16, 16, 4, 8, 8, 4.0f));
  s.predictions.push_back(make_pred(16, 16, 1.0f, {1}, 1.0f));
  const std::vector<std::size_t> views{0};
  const auto t = build_correspondences(s, views, 0.01);
  ASSERT_EQ(t.size(), 9u);
  for (const auto& c : t.entries) EXPECT_DOUBLE_EQ(c.sampledLogit, 1.0);
}

TEST(BuildCorrespondences, NoDepthReturnsGivesEmptySet) {
  SceneBundle s;
  s.embedDim = 1;
  for (int i = 0; i < 9; ++i) s.points.positions.push_back({0.1f * float(i), 0.0f, 4.0f});
  s.views.push_back(make_view(16, 16, 4, 8, 8, 0.0f));
  s.predictions.push_back(make_pred(16, 16, 1.0f, {1}, 1.0f));
  const std::vector<std::size_t> views{0};
  EXPECT_TRUE(build_correspondences(s, views, 0.01).empty());
}

namespace {

SceneBundle twenty_point_scene() {
  SynthSpec spec;
  spec.numObjects = 2;
  spec.pointsPerObject = 10;
  spec.viewCount = 2;
  spec.seed = 3;
  return make_synthetic_bundle(spec).bundle;
}

// Independent re-evaluation: explicit matrix algebra, round-half-away nearest pixel, hand bilinear.
double oracle_bilinear(const Raster<float>& r, double x, double y, std::size_t c = 0) {
  x = std::min(std::max(x, 0.0), double(r.width - 1));
  y = std::min(std::max(y, 0.0), double(r.height - 1));
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const int x1 = std::min(x0 + 1, int(r.width) - 1), y1 = std::min(y0 + 1, int(r.height) - 1);
  const double fx = x - x0, fy = y - y0;
  return r.at(y0, x0, c) * (1 - fx) * (1 - fy) + r.at(y0, x1, c) * fx * (1 - fy) + r.at(y1, x0, c) * (1 - fx) * fy +
         r.at(y1, x1, c) * fx * fy;
}

}  // namespace

TEST(BuildCorrespondences, MatchesBruteForceOracle) {
  const auto s = twenty_point_scene();
  ASSERT_EQ(s.points.size(), 20u);
  const std::vector<std::size_t> views{0, 1};
  const auto t = build_correspondences(s, views, 0.01);

  std::vector<Correspondence> expected;
  for (std::size_t p = 0; p < 20; ++p) {
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& view = s.views[i];
      const auto& m = view.worldToCamera;
      const auto& X = s.points.positions[p];
      double c[3];
      for (int r = 0; r < 3; ++r) c[r] = double(m[4 * r]) * X[0] + double(m[4 * r + 1]) * X[1] + double(m[4 * r + 2]) * X[2] + double(m[4 * r + 3]);
      if (c[2] <= 0) continue;
      const double u = double(view.intrinsics[0]) * c[0] / c[2] + double(view.intrinsics[2]);
      const double v = double(view.intrinsics[4]) * c[1] / c[2] + double(view.intrinsics[5]);
      if (u < 0 || v < 0 || u >= double(view.width) || v >= double(view.height)) continue;
      const int px = std::min(int(std::lround(u)), int(view.width) - 1);
      const int py = std::min(int(std::lround(v)), int(view.height) - 1);
      const double d = view.depth.at(py, px);
      if (!(d > 0) || std::abs(c[2] - d) > 0.01 * c[2]) continue;
      Correspondence e;
      e.pointIndex = p;
      e.viewIndex = i;
      e.u = u;
      e.v = v;
      e.sampledLogit = oracle_bilinear(s.predictions[i].mask, u, v);
      const auto& fm = *s.predictions[i].featureMap;
      for (std::size_t ch = 0; ch < fm.channels; ++ch) e.sampledFeature.push_back(oracle_bilinear(fm, u, v, ch));
      expected.push_back(e);
    }
  }
  ASSERT_FALSE(expected.empty());
  ASSERT_EQ(t.size(), expected.size());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& a = t.entries[k];
    const auto& b = expected[k];
    EXPECT_EQ(a.pointIndex, b.pointIndex);
    EXPECT_EQ(a.viewIndex, b.viewIndex);
    EXPECT_NEAR(a.u, b.u, 1e-9);
    EXPECT_NEAR(a.v, b.v, 1e-9);
    EXPECT_NEAR(a.sampledLogit, b.sampledLogit, 1e-9);
    ASSERT_EQ(a.sampledFeature.size(), b.sampledFeature.size());
    for (std::size_t j = 0; j < b.sampledFeature.size(); ++j) EXPECT_NEAR(a.sampledFeature[j], b.sampledFeature[j], 1e-9);
  }
}

TEST(BuildCorrespondences, EntriesRecheckAndAreUnique) {
  SynthSpec spec;
  spec.seed = 5;
  const auto s = make_synthetic_bundle(spec).bundle;
  const std::vector<std::size_t> views{0, 1, 2, 3};
  const auto t = build_correspondences(s, views, 0.01);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& c : t.entries) {
    EXPECT_TRUE(seen.insert({c.pointIndex, c.viewIndex}).second);
    const auto& view = s.views[c.viewIndex];
    EXPECT_GE(c.u, 0.0);
    EXPECT_LT(c.u, double(view.width));
    EXPECT_GE(c.v, 0.0);
    EXPECT_LT(c.v, double(view.height));
    const auto proj = project_point(world_point(s.points, c.pointIndex), view);
    EXPECT_TRUE(visibility_test(proj, view, 0.01));
    EXPECT_GE(c.sampledLogit, 0.0);
    EXPECT_LE(c.sampledLogit, 1.0);
  }
}

TEST(BuildCorrespondences, InvariantToPointOrder) {
  SynthSpec spec;
  spec.seed = 11;
  spec.pointsPerObject = 60;
  auto s = make_synthetic_bundle(spec).bundle;
  const std::vector<std::size_t> views{0, 1, 2, 3};
  const auto base = build_correspondences(s, views, 0.01);

  std::vector<std::size_t> perm(s.points.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(1);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  auto shuffled = s;
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.points.positions[i] = s.points.positions[perm[i]];
  const auto moved = build_correspondences(shuffled, views, 0.01);

  ASSERT_EQ(moved.size(), base.size());
  std::map<std::pair<std::size_t, std::size_t>, double> a, b;
  for (const auto& c : base.entries) a[{c.pointIndex, c.viewIndex}] = c.sampledLogit;
  for (const auto& c : moved.entries) b[{perm[c.pointIndex], c.viewIndex}] = c.sampledLogit;
  EXPECT_EQ(a, b);
}

TEST(Unproject, RoundTripWithinMicrometre) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 eye{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 2.5)};
    const Vec3 target{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)};
    auto view = make_view(64, 64, float(rng.uniform(20, 80)), 32, 32);
    view.worldToCamera = synth_detail::look_at(eye, target);
    const Vec3 x{target[0] + rng.uniform(-0.3, 0.3), target[1] + rng.uniform(-0.3, 0.3), target[2] + rng.uniform(-0.3, 0.3)};
    const auto out = try_project(x, view);
    if (!out.ok()) continue;
    const auto back = unproject(out.proj, view);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(back[a], x[a], 1e-6);
  }
}

TEST(BuildCorrespondences, RejectsViewWithoutPrediction) {
  SceneBundle s;
  s.points.positions.push_back({0, 0, 1});
  s.views.push_back(make_view(4, 4, 2, 2, 2, 1.0f));
  const std::vector<std::size_t> views{0};
  EXPECT_THROW(build_correspondences(s, views, 0.01), Error);
}

#include <gtest/gtest.h>

#include "pl3d/bundle_io.hpp"
#include "pl3d/geometry.hpp"
#include "pl3d/pipeline.hpp"
#include "pl3d/synth.hpp"
#include "test_util.hpp"

using namespace pl3d;

TEST(GenScene, SameSeedSameBundle) {
  SynthSpec spec;
  spec.seed = 21;
  spec.hallucinationRate = 0.4;
  spec.dropVisibleRate = 0.2;
  EXPECT_EQ(make_synthetic_bundle(spec).bundle, make_synthetic_bundle(spec).bundle);
  auto other = spec;
  other.seed = 22;
  EXPECT_NE(make_synthetic_bundle(spec).bundle, make_synthetic_bundle(other).bundle);

  testutil::TempDir a, b;
  write_bundle(make_synthetic_bundle(spec).bundle, a.path);
  write_bundle(make_synthetic_bundle(spec).bundle, b.path);
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path);
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b.path / rel)) << rel;
  }
}

TEST(GenScene, ShapeAndGtSize) {
  SynthSpec spec;
  const auto s = gen_scene(spec);
  EXPECT_EQ(s.bundle.points.size(), spec.numObjects * spec.pointsPerObject);
  ASSERT_TRUE(s.bundle.gtMask.has_value());
  std::size_t on = 0;
  for (auto g : *s.bundle.gtMask) on += g;
  EXPECT_EQ(on, spec.pointsPerObject);
  EXPECT_EQ(s.bundle.views.size(), spec.viewCount);
  for (const auto& v : s.bundle.views) {
    EXPECT_EQ(v.width, spec.imageSize);
    EXPECT_EQ(v.height, spec.imageSize);
  }
  ASSERT_TRUE(s.bundle.points.colors.has_value());
  for (const auto& c : *s.bundle.points.colors)
    for (float x : c) {
      EXPECT_GE(x, 0.0f);
      EXPECT_LE(x, 1.0f);
    }
}

TEST(GenScene, EveryGtPointVisibleInSomeView) {
  SynthSpec spec;
  const auto s = gen_scene(spec);
  const auto& gt = *s.bundle.gtMask;
  std::size_t unseen = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (!gt[p]) continue;
    bool seen = false;
    for (const auto& view : s.bundle.views) {
      const auto out = try_project(world_point(s.bundle.points, p), view);
      seen = seen || (out.ok() && visibility_test(out.proj, view, kSynthVisibilityTol));
    }
    unseen += seen ? 0 : 1;
  }
  EXPECT_EQ(unseen, 0u);
}

TEST(GenScene, DepthMapsNeverExceedOwnPixelDepth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    const auto s = gen_scene(spec);
    for (const auto& view : s.bundle.views)
      for (std::size_t p = 0; p < s.bundle.points.size(); ++p) {
        const auto out = try_project(world_point(s.bundle.points, p), view);
        if (!out.ok()) continue;
        const auto px = nearest_pixel(out.proj.u, out.proj.v, view.width, view.height);
        const double d = view.depth.at(px.y, px.x);
        EXPECT_GT(d, 0.0);
        EXPECT_LE(d, out.proj.camDepth);
      }
  }
}

TEST(RenderPredictions, NoiselessViewsAgree) {
  SynthSpec spec;
  spec.embedNoise = 0.0;
  const auto s = make_synthetic_bundle(spec);
  const auto& preds = s.bundle.predictions;
  for (const auto& p : preds) {
    EXPECT_EQ(p.embedding, preds[0].embedding);
    EXPECT_FLOAT_EQ(p.confidence, 1.0f);
  }
  std::vector<std::vector<double>> e;
  std::vector<double> a;
  for (const auto& p : preds) {
    e.emplace_back(p.embedding.begin(), p.embedding.end());
    a.push_back(p.confidence);
  }
  const auto u = unify_query(e, a, 3);
  for (std::size_t j = 0; j < u.q.size(); ++j) EXPECT_NEAR(u.q[j], s.objectConcepts[spec.targetIndex][j], 1e-6);
  for (double w : u.weights) EXPECT_NEAR(w, 1.0 / double(preds.size()), 1e-12);
}

TEST(RenderPredictions, ViewWithoutTargetIsDroppedByAreaFilter) {
  SynthSpec spec;
  spec.seed = 2;
  auto s = gen_scene(spec);
  // turn camera 0 to face away from the room
  auto& pose = s.bundle.views[0].worldToCamera;
  const Vec3 eye = unproject({0, 0, 0}, s.bundle.views[0]);
  const Vec3 ahead = unproject({32, 32, 1}, s.bundle.views[0]);
  pose = synth_detail::look_at(eye, {2 * eye[0] - ahead[0], 2 * eye[1] - ahead[1], ahead[2]});
  s.bundle.views[0].depth = synth_detail::render_depth(s.bundle.points, s.bundle.views[0]);
  const auto preds = render_predictions(s, spec);
  EXPECT_DOUBLE_EQ(mask_area_fraction(preds[0].mask), 0.0);
  s.bundle.predictions = preds;
  const auto kept = filter_predictions(s.bundle.predictions, PipelineConfig{});
  EXPECT_EQ(std::count(kept.begin(), kept.end(), 0u), 0);
}

TEST(RenderPredictions, CleanFusionOnDefaultFixture) {
  const auto s = make_synthetic_bundle(SynthSpec{}).bundle;
  const auto fused = fuse_scene(s, PipelineConfig{});
  EXPECT_GE(fused_iou(s, fused), 0.95);
}

TEST(CorruptPredictions, ZeroRatesIsIdentity) {
  SynthSpec spec;
  spec.seed = 3;
  const auto s = gen_scene(spec);
  const auto preds = render_predictions(s, spec);
  EXPECT_EQ(corrupt_predictions(preds, s, spec), preds);
}

TEST(CorruptPredictions, FullHallucination) {
  SynthSpec spec;
  spec.seed = 4;
  spec.hallucinationRate = 1.0;
  const auto s = make_synthetic_bundle(spec);
  const auto& concept_ = s.objectConcepts[spec.targetIndex];
  std::vector<std::vector<double>> e;
  std::vector<double> a;
  for (const auto& p : s.bundle.predictions) {
    const std::vector<double> ed(p.embedding.begin(), p.embedding.end());
    EXPECT_GE(synth_detail::angle_deg(ed, concept_), kMinHallucinationAngleDeg);
    e.push_back(ed);
    a.push_back(p.confidence);
    EXPECT_GT(p.confidence, 0.5f);  // confident hallucination
  }
  // the fused query follows the hallucinations, not the target, and every retained view keeps weight
  const auto u = unify_query(e, a, 3);
  double minW = 1.0, maxW = 0.0;
  for (double w : u.weights) {
    minW = std::min(minW, w);
    maxW = std::max(maxW, w);
  }
  EXPECT_GT(minW, 0.0);
  EXPECT_LT(maxW, 0.6);
  // masks now cover some other object
  const auto fused = fuse_scene(s.bundle, PipelineConfig{});
  EXPECT_LT(fused_iou(s.bundle, fused), 0.1);
}

TEST(CorruptPredictions, AttentionBeatsUniformUnderHallucination) {
  double att = 0, uni = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.hallucinationRate = 0.3;
    const auto s = make_synthetic_bundle(spec).bundle;
    PipelineConfig cfg;
    cfg.seed = seed;
    att += fused_iou(s, fuse_scene(s, cfg));
    cfg.tokenAttention = false;
    uni += fused_iou(s, fuse_scene(s, cfg));
  }
  EXPECT_GT(att, uni);
}

TEST(SynthSpecValidate, Rejects) {
  SynthSpec s;
  s.targetIndex = 5;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.hallucinationRate = -0.1;
  EXPECT_THROW(s.validate(), Error);
}

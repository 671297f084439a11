#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "pl3d/learner.hpp"
#include "pl3d/pipeline.hpp"
#include "pl3d/synth.hpp"

using namespace pl3d;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.positions.push_back({float(rng.normal()), float(rng.normal()), float(rng.normal())});
  return c;
}

}  // namespace

TEST(ForwardFeatures, ZeroFinalLayerGivesBias) {
  const std::vector<std::size_t> hidden{5};
  auto m = init_model(hidden, 3, 4, 1);
  auto& last = m.params.layers.back();
  std::fill(last.weight.begin(), last.weight.end(), 0.0);
  last.bias = {0.5, -1.0, 2.0};
  const auto f = forward_features(m, random_cloud(7, 2));
  for (std::size_t i = 0; i < f.rows; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(f.row(i)[j], last.bias[j]);
}

TEST(ForwardFeatures, PermutationEquivariantAndDeterministic) {
  const std::vector<std::size_t> hidden{8, 8};
  const auto m = init_model(hidden, 4, 4, 3);
  const auto m2 = init_model(hidden, 4, 4, 3);
  EXPECT_EQ(m, m2);
  const auto cloud = random_cloud(10, 4);
  auto rev = cloud;
  std::reverse(rev.positions.begin(), rev.positions.end());
  const auto a = forward_features(m, cloud);
  const auto b = forward_features(m, rev);
  EXPECT_EQ(a.data, forward_features(m2, cloud).data);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.row(i)[j], b.row(9 - i)[j]);
  // batch composition does not change a point's output
  PointCloud one;
  one.positions = {cloud.positions[6]};
  const auto c = forward_features(m, one);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(c.row(0)[j], a.row(6)[j]);
}

TEST(InitModel, UniformFanInBounds) {
  const std::vector<std::size_t> hidden{64, 64};
  const auto m = init_model(hidden, 16, 32, 0);
  ASSERT_EQ(m.params.layers.size(), 3u);
  EXPECT_EQ(m.params.layers[0].in, kModelInputDim);
  for (const auto& l : m.params.layers) {
    const double b = 1.0 / std::sqrt(double(l.in));
    for (double w : l.weight) EXPECT_LE(std::abs(w), b);
    for (double w : l.bias) EXPECT_LE(std::abs(w), b);
  }
  EXPECT_EQ(m.outputDim(), 16u);
  EXPECT_EQ(m.embedDim(), 32u);
  EXPECT_NE(init_model(hidden, 16, 32, 1), m);
}

TEST(ProjectQuery, BasisColumnAndZero) {
  const std::vector<std::size_t> hidden{2};
  auto m = init_model(hidden, 3, 3, 0);
  m.params.projection = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const std::vector<double> e1{0, 1, 0};
  EXPECT_EQ(project_query(m, e1), (std::vector<double>{0, 1, 0}));
  std::fill(m.params.projection.begin(), m.params.projection.end(), 0.0);
  EXPECT_EQ(project_query(m, e1), (std::vector<double>{0, 0, 0}));
}

TEST(ProjectQuery, MatchesNaiveMatvec) {
  const std::vector<std::size_t> hidden{2};
  const auto m = init_model(hidden, 5, 7, 9);
  Rng rng(2);
  std::vector<double> q(7);
  for (auto& x : q) x = rng.normal();
  const auto t = project_query(m, q);
  for (std::size_t r = 0; r < 5; ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < 7; ++c) acc += m.params.projection[r * 7 + c] * q[c];
    EXPECT_NEAR(t[r], acc, 1e-12);
  }
  const std::vector<double> wrong(6, 0.1);
  try {
    project_query(m, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(SemanticLogits, OrthogonalSelfAndLoop) {
  Matrix f(2, 2);
  f.data = {0, 1, 2, 0};
  const std::vector<double> t{2, 0};
  const auto s = semantic_logits(f, t);
  EXPECT_DOUBLE_EQ(s[0], 0.0);
  EXPECT_DOUBLE_EQ(s[1], 4.0);

  Rng rng(5);
  Matrix g(20, 6);
  for (auto& x : g.data) x = rng.normal();
  std::vector<double> u(6);
  for (auto& x : u) x = rng.normal();
  const auto b = semantic_logits(g, u);
  for (std::size_t i = 0; i < 20; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < 6; ++j) acc += g.data[i * 6 + j] * u[j];
    EXPECT_NEAR(b[i], acc, 1e-12);
  }
}

TEST(LossMms, ClosedForms) {
  const std::vector<double> s0{0.0}, one{1.0};
  EXPECT_NEAR(loss_mms(s0, one), std::log(2.0), 1e-9);
  const std::vector<double> s30{30.0};
  EXPECT_LT(loss_mms(s30, one), 1e-12);
  const std::vector<double> s2{2.0};
  EXPECT_NEAR(loss_mms(s2, one), std::log1p(std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(loss_mms(s2, one), 0.126928, 1e-6);
}

TEST(LossMms, StableForHugeLogitsAndNonNegative) {
  const std::vector<double> s{1e4, -1e4, 800, -800};
  const std::vector<double> m{0.0, 1.0, 0.3, 0.7};
  const double l = loss_mms(s, m);
  EXPECT_TRUE(std::isfinite(l));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> a{rng.normal() * 10}, b{rng.uniform()};
    EXPECT_GE(loss_mms(a, b), 0.0);
  }
}

TEST(LossMms, MatchesDirectFormulaAndErrors) {
  Rng rng(3);
  std::vector<double> s(30), m(30);
  double ref = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    s[i] = rng.normal() * 3;
    m[i] = rng.uniform();
    const double sg = 1 / (1 + std::exp(-s[i]));
    ref -= m[i] * std::log(sg) + (1 - m[i]) * std::log(1 - sg);
  }
  EXPECT_NEAR(loss_mms(s, m), ref / 30, 1e-10);
  // uniform weights reproduce the plain mean
  const std::vector<double> w(30, 0.25);
  EXPECT_NEAR(loss_mms(s, m, w), ref / 30, 1e-10);
  const std::vector<double> none;
  try {
    loss_mms(none, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPairSet);
  }
}

TEST(LossSpatial, IdenticalOrthogonalAntiparallel) {
  const std::vector<std::vector<double>> a{{1, 2, 3}}, same{{2, 4, 6}}, orth{{3, 0, -1}}, anti{{-1, -2, -3}};
  EXPECT_NEAR(loss_spatial(a, same), 0.0, 1e-9);
  EXPECT_NEAR(loss_spatial(a, orth), 1.0, 1e-9);
  EXPECT_NEAR(loss_spatial(a, anti), 2.0, 1e-9);
}

TEST(LossSpatial, Errors) {
  const std::vector<std::vector<double>> none;
  try {
    loss_spatial(none, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoFeaturePairs);
  }
  const std::vector<std::vector<double>> a{{1, 0}}, z{{0, 0}};
  try {
    loss_spatial(a, z);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
  }
}

TEST(TotalLoss, LinearCombination) {
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.3, 1.0), 0.8);
  EXPECT_EQ(total_loss(0.7, 123.0, 0.0), 0.7);
  EXPECT_NEAR(total_loss(std::log(2.0), 1.0, 0.5), 1.193147, 1e-6);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto r = gradcheck::check(seed, 60);
    EXPECT_LT(r.maxRelErr, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, LambdaZeroIsPureMmsGradient) {
  auto pr = gradcheck::random_problem(7);
  pr.batch.pairs = &pr.pairs;
  pr.batch.gtLabels.reset();
  pr.batch.lambda = 0.0;
  const auto withFeatures = backward(pr.model, pr.batch);
  auto stripped = pr.pairs;
  for (auto& c : stripped.entries) c.sampledFeature.clear();
  auto b2 = pr.batch;
  b2.pairs = &stripped;
  const auto without = backward(pr.model, b2);
  EXPECT_EQ(withFeatures.grad, without.grad);
  EXPECT_EQ(withFeatures.loss.total, withFeatures.loss.mms);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  auto pr = gradcheck::random_problem(9);
  pr.batch.pairs = &pr.pairs;
  pr.batch.entryWeights.clear();
  const auto a = backward(pr.model, pr.batch);
  CorrespondenceSet twice;
  for (const auto& c : pr.pairs.entries) {
    twice.entries.push_back(c);
    twice.entries.push_back(c);
  }
  auto b2 = pr.batch;
  b2.pairs = &twice;
  const auto b = backward(pr.model, b2);
  EXPECT_NEAR(a.loss.total, b.loss.total, 1e-12);
  for (std::size_t i = 0; i < pr.model.params.count(); ++i) {
    auto ga = a.grad, gb = b.grad;
    EXPECT_NEAR(ga.at(i), gb.at(i), 1e-12);
  }
}

TEST(SgdStep, ZeroGradientIsFixedPoint) {
  const std::vector<std::size_t> hidden{3};
  auto st = make_train_state(init_model(hidden, 2, 2, 0));
  const auto before = st.model;
  sgd_step(st, st.model.params.zeros_like(), {0.1, 0.9, 0.0});
  EXPECT_EQ(st.model, before);
}

TEST(SgdStep, FirstStepIsPlainSgd) {
  const std::vector<std::size_t> hidden{3};
  auto st = make_train_state(init_model(hidden, 2, 2, 0));
  const auto before = st.model.params;
  auto g = before.zeros_like();
  Rng rng(1);
  g.for_each([&](std::span<double> s, bool) {
    for (auto& x : s) x = rng.normal();
  });
  sgd_step(st, g, {0.05, 0.9, 0.0});
  auto b = before;
  for (std::size_t i = 0; i < b.count(); ++i) EXPECT_DOUBLE_EQ(st.model.params.at(i), b.at(i) - 0.05 * g.at(i));
}

TEST(SgdStep, TwoStepHandUnroll) {
  // one weight (decays) and one bias (does not)
  TrainState st;
  st.model.params.layers.push_back({1, 1, {2.0}, {1.0}});
  st.velocity = st.model.params.zeros_like();
  const double lr = 0.1, mu = 0.9, wd = 0.01;
  auto g = st.model.params.zeros_like();
  g.layers[0].weight = {0.5};
  g.layers[0].bias = {0.5};
  sgd_step(st, g, {lr, mu, wd});
  g.layers[0].weight = {-0.3};
  g.layers[0].bias = {-0.3};
  sgd_step(st, g, {lr, mu, wd});

  double th = 2.0, v = 0.0;
  v = mu * v + 0.5 + wd * th;
  th -= lr * v;
  v = mu * v - 0.3 + wd * th;
  th -= lr * v;
  EXPECT_NEAR(st.model.params.layers[0].weight[0], th, 1e-15);

  double tb = 1.0, vb = 0.0;
  vb = mu * vb + 0.5;
  tb -= lr * vb;
  vb = mu * vb - 0.3;
  tb -= lr * vb;
  EXPECT_NEAR(st.model.params.layers[0].bias[0], tb, 1e-15);
}

namespace {

struct Fixture {
  SceneBundle scene;
  FuseResult fused;
};

Fixture clean_fixture(std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  Fixture f;
  f.scene = make_synthetic_bundle(spec).bundle;
  f.fused = fuse_scene(f.scene, PipelineConfig{});
  return f;
}

}  // namespace

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  const auto f = clean_fixture(1);
  PipelineConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 5;
  const auto st = train_scene(f.scene, f.fused, cfg);
  ASSERT_EQ(st.lossHistory.size(), 5u);
  for (const auto& r : st.lossHistory) EXPECT_EQ(r.total, st.lossHistory[0].total);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const auto f = clean_fixture(2);
  PipelineConfig cfg;
  cfg.epochs = 60;
  const auto a = train_scene(f.scene, f.fused, cfg);
  const auto b = train_scene(f.scene, f.fused, cfg);
  EXPECT_LT(a.lossHistory.back().total, a.lossHistory.front().total);
  EXPECT_EQ(a.lossHistory, b.lossHistory);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.epoch, 60u);
}

TEST(Train, EmptyPairsAndDivergence) {
  const auto f = clean_fixture(3);
  CorrespondenceSet empty;
  TrainOptions opt;
  try {
    train(f.scene.points, empty, f.fused.query, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPairSet);
  }
  opt.opt.lr = 1e12;
  opt.epochs = 50;
  opt.outputDim = f.scene.featureDim;
  try {
    train(f.scene.points, f.fused.pairs, f.fused.query, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
  }
}

TEST(Train, HybridAddsGtTerm) {
  const auto f = clean_fixture(4);
  PipelineConfig cfg;
  cfg.epochs = 3;
  cfg.hybrid = true;
  const auto st = train_scene(f.scene, f.fused, cfg);
  EXPECT_GT(st.lossHistory[0].gt, 0.0);
  EXPECT_NEAR(st.lossHistory[0].total, st.lossHistory[0].mms + st.lossHistory[0].spatial + st.lossHistory[0].gt, 1e-12);
  auto noGt = f.scene;
  noGt.gtMask.reset();
  EXPECT_THROW(train_scene(noGt, f.fused, cfg), Error);
}

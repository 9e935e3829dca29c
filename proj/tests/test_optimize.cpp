#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "uvavatar/optimize.hpp"
#include "uvavatar/synth.hpp"

namespace {

using namespace uvavatar;
using namespace testing_support;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Coarse head on an 8x8 chart with learnable state near the synthetic truth,
/// plus random-image frames that never tie with the render.
struct TinyScene {
  std::shared_ptr<const HeadMeshModel> mesh;
  std::unique_ptr<MapBuilder> builder;
  RectificationSet rect;
  std::vector<Frame> frames;
  OptimConfig cfg;

  explicit TinyScene(std::uint64_t seed = 0, int image = 16, int uv = 8) {
    mesh = std::make_shared<const HeadMeshModel>(make_test_head(seed, {12, 8, 2, 3}));
    builder = std::make_unique<MapBuilder>(mesh, uv, uv, std::vector<double>{0.3, -0.2});
    DeterministicRng rng(seed + 5);
    rect = RectificationSet::zeros(builder->layout());
    rect.global = detail::truth_offsets(builder->layout(), builder->init(), rng);
    for (std::size_t i = 0; i < rect.global.valid_count(); ++i)
      for (std::size_t c = 0; c < 3; ++c) rect.global.gaussian(i)[c] = rng.uniform(-2e-3, 2e-3);
    for (int f = 0; f < 3; ++f) {
      Frame fr;
      fr.image = Image(image, image, 3);
      for (auto& v : fr.image.data) v = rng.uniform(0.0, 1.0);
      fr.mask = Image(image, image, 1, 1.0);
      fr.beta_exp = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      fr.camera = orbit_camera(rng.uniform(-30, 30), rng.uniform(-10, 10), 0.8, image, image);
      frames.push_back(std::move(fr));
    }
    cfg.render = smooth_config();
    cfg.blendmaps = 2;
    cfg.batch_size = 3;
  }
};

SynthFixture small_fixture(bool two = false) {
  SynthOptions o;
  o.seed = 3;
  o.uv_size = 16;
  o.image_size = 32;
  o.train_views = 4;
  o.eval_views = 1;
  o.two_expressions = two;
  return make_synth_fixture(o);
}

OptimConfig small_config(int total = 20) {
  OptimConfig c = synthetic_optim_config();
  c.total_steps = total;
  c.stage_split = 0.5;
  c.batch_size = 4;
  c.uv_size = 16;
  return c;
}

TEST(BlendingWeights, ZeroCoefficientsAreUniform) {
  const std::vector<double> beta(50, 0.0);
  const auto w = blending_weights(beta, 10);
  ASSERT_EQ(w.size(), 10u);
  for (double v : w) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(BlendingWeights, LogTwoDoublesTheFirstWeight) {
  std::vector<double> beta(10, 0.0);
  beta[0] = std::log(2.0);
  const auto w = blending_weights(beta, 10);
  EXPECT_NEAR(w[0], 2.0 / 11.0, 1e-15);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_NEAR(w[i], 1.0 / 11.0, 1e-15);
}

TEST(BlendingWeights, SumToOneShiftInvariantAndFinite) {
  DeterministicRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const int d = 1 + static_cast<int>(rng.below(12));
    std::vector<double> beta(static_cast<std::size_t>(d) + rng.below(5));
    for (auto& b : beta) b = rng.uniform(-400, 400);
    const auto w = blending_weights(beta, d);
    double s = 0.0;
    for (double v : w) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-12);
    auto shifted = beta;
    const double c = rng.uniform(-50, 50);
    for (auto& b : shifted) b += c;
    const auto w2 = blending_weights(shifted, d);
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(w[i], w2[i], 1e-12);
  }
}

TEST(BlendingWeights, Errors) {
  const std::vector<double> beta(3, 0.0);
  EXPECT_THROW(blending_weights(beta, 4), ConfigError);
  EXPECT_THROW(blending_weights(beta, 0), ConfigError);
}

TEST(Assemble, ZeroRectificationReturnsBase) {
  const TinyScene s;
  const auto base = s.builder->build(s.frames[0].beta_exp, {});
  EXPECT_EQ(assemble(base, RectificationSet::zeros(s.builder->layout()), s.frames[0].beta_exp, Stage::Global), base);
}

TEST(Assemble, UniformBlendmapsReproduceStageOne) {
  TinyScene s;
  DeterministicRng rng(2);
  for (auto& v : s.rect.mean_offset.values()) v = rng.uniform(-0.1, 0.1);
  initialize_blendmaps(s.rect, 4);
  const auto base = s.builder->build(s.frames[0].beta_exp, {});
  for (int t = 0; t < 20; ++t) {
    std::vector<double> beta(3);
    for (auto& b : beta) b = rng.uniform(-3, 3);
    beta.push_back(rng.uniform(-3, 3));
    const auto a = assemble(base, s.rect, beta, Stage::Global), b = assemble(base, s.rect, beta, Stage::Blend);
    ASSERT_LE(max_abs_diff(a.values(), b.values()), 1e-12);
  }
}

TEST(Assemble, MatchesPrimitiveOracle) {
  TinyScene s;
  DeterministicRng rng(3);
  for (auto& v : s.rect.mean_offset.values()) v = rng.uniform(-0.1, 0.1);
  s.rect.blend.clear();
  for (int k = 0; k < 3; ++k) {
    UVOffsets b(s.builder->layout());
    for (auto& v : b.values()) v = rng.uniform(-1, 1);
    s.rect.blend.push_back(b);
  }
  const std::vector<double> beta{0.4, -1.2, 2.0};
  const auto base = s.builder->build(beta, {});
  const auto got = assemble(base, s.rect, beta, Stage::Blend);
  double e[3], sum = 0.0;
  for (int k = 0; k < 3; ++k) sum += (e[k] = std::exp(beta[static_cast<std::size_t>(k)]));
  for (std::size_t i = 0; i < got.values().size(); ++i) {
    double expect = base.values()[i] + s.rect.mean_offset.values()[i];
    for (std::size_t k = 0; k < 3; ++k) expect += e[k] / sum * s.rect.blend[k].values()[i];
    ASSERT_NEAR(got.values()[i], expect, 1e-12);
  }
  const auto stage1 = assemble(base, s.rect, beta, Stage::Global);
  for (std::size_t i = 0; i < got.values().size(); ++i)
    ASSERT_NEAR(stage1.values()[i], base.values()[i] + s.rect.mean_offset.values()[i] + s.rect.global.values()[i],
                1e-12);
}

TEST(Assemble, StageTwoWithoutBlendmapsIsConfigError) {
  const TinyScene s;
  const auto base = s.builder->build(s.frames[0].beta_exp, {});
  EXPECT_THROW(assemble(base, s.rect, s.frames[0].beta_exp, Stage::Blend), ConfigError);
}

TEST(MeanOffsets, Examples) {
  const auto layout = UVLayout::from_mask(1, 2, {1, 1});
  EXPECT_EQ(mean_offsets({}, layout), UVOffsets(layout));
  std::vector<UVOffsets> v(2, UVOffsets(layout));
  for (auto& x : v[0].values()) x = 1.0;
  for (auto& x : v[1].values()) x = 3.0;
  const auto mean = mean_offsets(v, layout);
  for (double x : mean.values()) EXPECT_EQ(x, 2.0);
  v.emplace_back(UVLayout::from_mask(1, 2, {1, 0}));
  EXPECT_THROW(mean_offsets(v, layout), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
  AdamState st(3);
  const std::vector<double> lr{0.1};
  for (int i = 0; i < 10; ++i) adam_step(p, g, st, lr);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheSign) {
  std::vector<double> p{0.0, 0.0, 0.0}, g{2.5, -0.01, 1e-6};
  AdamState st(3);
  const std::vector<double> lr{0.1, 0.2, 0.3};
  adam_step(p, g, st, lr);
  EXPECT_NEAR(p[0], -0.1, 1e-12);
  EXPECT_NEAR(p[1], 0.2, 1e-12);
  EXPECT_NEAR(p[2], -0.3, 1e-8);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  DeterministicRng rng(4);
  std::vector<double> target(20), p(20, 0.0), scale(20);
  for (std::size_t i = 0; i < 20; ++i) target[i] = rng.uniform(-2, 2), scale[i] = rng.uniform(0.1, 10);
  AdamState st(20);
  const double lr0 = 0.1;
  int steps = 0;
  auto loss = [&] {
    double l = 0.0;
    for (std::size_t i = 0; i < 20; ++i) l += 0.5 * scale[i] * (p[i] - target[i]) * (p[i] - target[i]);
    return l;
  };
  for (; steps < 500 && loss() >= 1e-6; ++steps) {
    std::vector<double> g(20);
    for (std::size_t i = 0; i < 20; ++i) g[i] = scale[i] * (p[i] - target[i]);
    const std::vector<double> lr{lr0 * std::pow(0.01, steps / 500.0)};
    adam_step(p, g, st, lr);
  }
  EXPECT_LT(loss(), 1e-6) << "after " << steps << " steps";
}

TEST(Adam, SizeMismatchIsConfigError) {
  std::vector<double> p(3), g(2);
  AdamState st(3);
  const std::vector<double> lr{0.1};
  EXPECT_THROW(adam_step(p, g, st, lr), ConfigError);
}

TEST(OptimConfig, JsonRoundTripAndValidation) {
  OptimConfig c = synthetic_optim_config();
  c.seed = 42;
  c.background = {0.1, 0.2, 0.3};
  c.render.threads = 3;
  const nlohmann::json j = c;
  const OptimConfig back = j.get<OptimConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.stage1_steps(), 500);
  EXPECT_EQ(back.stage2_steps(), 500);

  OptimConfig d;
  EXPECT_EQ(d.stage1_steps(), 900);
  EXPECT_EQ(d.stage2_steps(), 2100);
  EXPECT_EQ(nlohmann::json::parse("{}").get<OptimConfig>().total_steps, 3000);

  auto bad = c;
  bad.render.max_alpha = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.stage_split = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.lr.alpha = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(nlohmann::json::parse(R"({"batch_size": "x"})").get<OptimConfig>(), ConfigError);
}

TEST(BatchSampler, EachEpochVisitsEveryFrameOnce) {
  BatchSampler s(7, 9);
  for (int epoch = 0; epoch < 5; ++epoch) {
    auto idx = s.next(7);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 7; ++i) ASSERT_EQ(idx[i], i);
  }
  EXPECT_THROW(BatchSampler(0, 1), ConfigError);
}

TEST(FrameLoss, GradientMatchesFiniteDifferencesStageOne) {
  TinyScene s;
  ASSERT_GE(s.rect.global.valid_count(), 10u);
  const auto& frame = s.frames[0];
  const auto analytic = frame_loss(frame, *s.builder, s.rect, Stage::Global, s.cfg).grad;
  GradientReport r;
  auto values = s.rect.global.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double numeric = central_difference(
        [&] { return frame_loss(frame, *s.builder, s.rect, Stage::Global, s.cfg, false).terms.total; }, values[i],
        1e-6);
    record(r, analytic.values()[i], numeric, 1e-3, 1e-6);
  }
  EXPECT_EQ(r.failed, 0u) << "worst rel " << r.worst_rel << " of " << r.checked;
}

TEST(FrameLoss, BlendmapGradientIsWeightTimesMapGradient) {
  TinyScene s;
  initialize_blendmaps(s.rect, 2);
  DeterministicRng rng(5);
  for (auto& b : s.rect.blend)
    for (std::size_t i = 0; i < b.valid_count(); ++i) b.gaussian(i)[channel::kColor] += rng.uniform(-0.02, 0.02);
  const auto& frame = s.frames[1];
  const auto g = frame_loss(frame, *s.builder, s.rect, Stage::Blend, s.cfg).grad;
  const auto b = blending_weights(frame.beta_exp, 2);
  GradientReport r;
  for (std::size_t k = 0; k < 2; ++k) {
    auto values = s.rect.blend[k].values();
    for (std::size_t i = 0; i < values.size(); i += 3) {
      const double numeric = central_difference(
          [&] { return frame_loss(frame, *s.builder, s.rect, Stage::Blend, s.cfg, false).terms.total; }, values[i],
          1e-6);
      record(r, b[k] * g.values()[i], numeric, 1e-3, 1e-6);
    }
  }
  EXPECT_EQ(r.failed, 0u) << "worst rel " << r.worst_rel << " of " << r.checked;
}

TEST(BatchLoss, IsTheMeanOverFrames) {
  const TinyScene s;
  const std::vector<std::size_t> idx{0, 2, 1, 2};
  const auto batch = batch_loss(s.frames, idx, *s.builder, s.rect, Stage::Global, s.cfg);
  double total = 0.0;
  std::vector<double> grad(batch.grad.values().size(), 0.0);
  for (auto i : idx) {
    const auto f = frame_loss(s.frames[i], *s.builder, s.rect, Stage::Global, s.cfg);
    total += f.terms.total / 4.0;
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += f.grad.values()[j] / 4.0;
  }
  EXPECT_NEAR(batch.terms.total, total, 1e-12);
  EXPECT_LE(max_abs_diff(batch.grad.values(), grad), 1e-10);
}

TEST(Optimize, ZeroLearningRateKeepsStateAndLoss) {
  const auto fx = small_fixture();
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  auto cfg = small_config(20);
  cfg.lr = {0, 0, 0, 0, 0};
  RectificationSet rect = RectificationSet::zeros(builder.layout());
  const auto before = rect.global;
  const auto history = optimize_stage1(fx.train, builder, rect, cfg);
  ASSERT_EQ(history.size(), 10u);
  EXPECT_EQ(rect.global, before);
  for (const auto& h : history) EXPECT_NEAR(h.total, history[0].total, 1e-12);
}

TEST(Optimize, StageTwoStartsWhereStageOneEnded) {
  const auto fx = small_fixture(true);
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  auto cfg = small_config(10);
  RectificationSet rect = RectificationSet::zeros(builder.layout());
  optimize_stage1(fx.train, builder, rect, cfg);
  const auto stage1_end = batch_loss(fx.train, std::vector<std::size_t>{0, 1, 2, 3}, builder, rect, Stage::Global, cfg);
  auto lr0 = cfg;
  lr0.lr = {0, 0, 0, 0, 0};
  const auto history = optimize_stage2(fx.train, builder, rect, lr0);
  ASSERT_EQ(rect.blend.size(), 2u);
  EXPECT_NEAR(history.front().total, stage1_end.terms.total, 1e-9);
  for (const auto& f : fx.train) {
    const auto base = builder.build(f.beta_exp, f.beta_jaw);
    EXPECT_LE(max_abs_diff(assemble(base, rect, f.beta_exp, Stage::Global).values(),
                           assemble(base, rect, f.beta_exp, Stage::Blend).values()),
              1e-9);
  }
}

TEST(Optimize, SingleBlendmapReproducesStageOneTrajectory) {
  const auto fx = small_fixture();
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  auto cfg = small_config(16);
  cfg.blendmaps = 1;
  RectificationSet a = RectificationSet::zeros(builder.layout()), b = a;
  const auto ha = optimize_stage1(fx.train, builder, a, cfg);
  const auto hb = optimize_stage2(fx.train, builder, b, cfg);
  ASSERT_EQ(ha.size(), hb.size());
  // Full batches: only the summation order differs.
  for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_NEAR(ha[i].total, hb[i].total, 1e-9);
  EXPECT_LE(max_abs_diff(a.global.values(), b.blend[0].values()), 1e-9);
}

TEST(Optimize, BitStableAcrossThreadCounts) {
  const auto fx = small_fixture(true);
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  auto cfg = small_config(8);
  cfg.batch_size = 3;
  RectificationSet a = RectificationSet::zeros(builder.layout()), b = a;
  cfg.render.threads = 1;
  optimize_stage1(fx.train, builder, a, cfg);
  optimize_stage2(fx.train, builder, a, cfg);
  cfg.render.threads = 4;
  optimize_stage1(fx.train, builder, b, cfg);
  optimize_stage2(fx.train, builder, b, cfg);
  EXPECT_EQ(a.global, b.global);
  ASSERT_EQ(a.blend.size(), b.blend.size());
  for (std::size_t k = 0; k < a.blend.size(); ++k) EXPECT_EQ(a.blend[k], b.blend[k]);
}

TEST(Optimize, SmoothedLossDecreases) {
  SynthOptions o;
  o.seed = 4;
  o.uv_size = 24;
  o.image_size = 64;
  o.train_views = 8;
  o.eval_views = 0;
  const auto fx = make_synth_fixture(o);
  const MapBuilder builder(fx.mesh, 24, 24, fx.beta_id);
  auto cfg = small_config(400);
  RectificationSet rect = RectificationSet::zeros(builder.layout());
  const auto history = optimize_stage1(fx.train, builder, rect, cfg);
  ASSERT_EQ(history.size(), 200u);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w < 4; ++w) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += history[w * 50 + i].total / 50.0;
    EXPECT_LE(mean, prev) << "window " << w;
    prev = mean;
  }
  EXPECT_LT(history.back().total, 0.5 * history.front().total);
}

TEST(Optimize, RejectsBadInputs) {
  const auto fx = small_fixture();
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  RectificationSet rect = RectificationSet::zeros(builder.layout());
  const auto cfg = small_config(4);
  EXPECT_THROW(optimize_stage1(std::span<const Frame>(), builder, rect, cfg), ConfigError);
  auto wrong = RectificationSet::zeros(UVLayout::from_mask(2, 2, {1, 1, 1, 1}));
  EXPECT_THROW(optimize_stage1(fx.train, builder, wrong, cfg), ConfigError);
  auto frames = fx.train;
  frames[0].beta_exp.resize(1);
  EXPECT_THROW(optimize_stage2(frames, builder, rect, cfg), ConfigError);
}

TEST(Evaluate, TruthScoresHighAndZeroRectificationLow) {
  const auto fx = small_fixture();
  const MapBuilder builder(fx.mesh, 16, 16, fx.beta_id);
  const auto cfg = small_config();
  const auto good = evaluate_frame(fx.eval[0], builder, fx.truth, Stage::Global, cfg);
  const auto bad = evaluate_frame(fx.eval[0], builder, RectificationSet::zeros(builder.layout()), Stage::Global, cfg);
  EXPECT_GT(good.psnr, 40.0);
  // SSIM spans the silhouette, where the target drops partial coverage.
  EXPECT_GT(good.ssim, 0.9);
  EXPECT_GT(good.ssim, bad.ssim);
  EXPECT_LT(bad.psnr, good.psnr - 10.0);
  EXPECT_GT(bad.l1, good.l1);
}

}  // namespace

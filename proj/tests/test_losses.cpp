#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "support.hpp"
#include "uvavatar/losses.hpp"
#include "uvavatar/tensor_file.hpp"
#include "uvavatar/test_head.hpp"

namespace {

using namespace uvavatar;
using namespace testing_support;

// Frozen from the first run; the independent oracles below pin their meaning.
constexpr double kTotalLossGolden = 1.6661765163564275;
constexpr std::uint64_t kWeightMap64Hash = 17287786167546726957ull;

Image random_image(DeterministicRng& rng, int w, int h, int ch = 3, double lo = 0.0, double hi = 1.0) {
  Image img(w, h, ch);
  for (auto& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

std::shared_ptr<const UVLayout> random_layout(DeterministicRng& rng, int h, int w) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w));
  for (auto& m : mask) m = rng.uniform() < 0.7;
  return UVLayout::from_mask(h, w, std::move(mask));
}

UVOffsets random_offsets(const std::shared_ptr<const UVLayout>& layout, DeterministicRng& rng, double amp = 1.0) {
  UVOffsets o(layout);
  for (auto& v : o.values()) v = rng.uniform(-amp, amp);
  return o;
}

WeightMapMu random_weight_map(const UVLayout& layout, DeterministicRng& rng) {
  WeightMapMu w{layout.height, layout.width, std::vector<double>(layout.mask.size(), 0.0)};
  for (auto p : layout.pixels) w.values[p] = rng.uniform() < 0.5 ? 1.0 : 0.1;
  return w;
}

/// SSIM by explicit 11x11 windows with a 2D kernel built from scratch.
double naive_ssim(const Image& a, const Image& b) {
  double k[11][11], sum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) sum += (k[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5));
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y + 11 <= a.height; ++y)
      for (int x = 0; x + 11 <= a.width; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = k[i][j] / sum, u = a.at(x + j, y + i, c), v = b.at(x + j, y + i, c);
            mx += w * u, my += w * v, sxx += w * u * u, syy += w * v * v, sxy += w * u * v;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += (2 * mx * my + 1e-4) * (2 * cxy + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
        ++count;
      }
  return total / count;
}

/// Central differences of `f` w.r.t. every entry of `values`, checked against `grad`.
void expect_fd(const std::function<double()>& f, std::span<double> values, std::span<const double> grad,
               double h = 1e-6) {
  GradientReport r;
  for (std::size_t i = 0; i < values.size(); ++i) record(r, grad[i], central_difference(f, values[i], h));
  EXPECT_EQ(r.failed, 0u) << "worst rel " << r.worst_rel;
  EXPECT_EQ(r.checked, values.size());
}

TEST(LossRgb, KnownValues) {
  Image a(4, 4, 3, 0.25);
  EXPECT_EQ(loss_rgb(a, a).value, 0.0);
  Image b(4, 4, 3, 0.75);
  EXPECT_DOUBLE_EQ(loss_rgb(a, b).value, 0.5);
  Image mask(4, 4, 1, 0.0);
  mask.at(2, 1) = 1.0;
  b.at(2, 1, 0) = 0.25, b.at(2, 1, 1) = 0.25, b.at(2, 1, 2) = 0.55;
  EXPECT_NEAR(loss_rgb(a, b, &mask).value, 0.1, 1e-15);
}

TEST(LossRgb, MatchesLoopOracleAndFiniteDifferences) {
  DeterministicRng rng(1);
  Image pred = random_image(rng, 9, 7), target = random_image(rng, 9, 7);
  Image mask(9, 7, 1);
  for (auto& m : mask.data) m = rng.uniform() < 0.6 ? 1.0 : 0.0;
  double acc = 0.0, weight = 0.0;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      weight += mask.at(x, y);
      for (int c = 0; c < 3; ++c) acc += mask.at(x, y) * std::abs(pred.at(x, y, c) - target.at(x, y, c));
    }
  const auto l = loss_rgb(pred, target, &mask);
  EXPECT_NEAR(l.value, acc / (3 * weight), 1e-14);
  expect_fd([&] { return loss_rgb(pred, target, &mask).value; }, pred.data, l.grad.data);
}

TEST(LossRgb, Errors) {
  Image a(4, 4, 3), b(4, 5, 3), none(4, 4, 1, 0.0), wrong(4, 4, 3, 1.0);
  EXPECT_THROW(loss_rgb(a, b), ConfigError);
  EXPECT_THROW(loss_rgb(a, a, &none), ConfigError);
  EXPECT_THROW(loss_rgb(a, a, &wrong), ConfigError);
}

TEST(LossSsim, IdenticalImagesGiveZero) {
  DeterministicRng rng(2);
  const Image a = random_image(rng, 20, 16);
  EXPECT_NEAR(loss_ssim(a, a).value, 0.0, 1e-12);
}

TEST(LossSsim, InvertedHighContrastExceedsOne) {
  Image a(24, 24, 1), b(24, 24, 1);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      a.at(x, y) = ((x / 2 + y / 2) % 2) ? 0.9 : 0.1;
      b.at(x, y) = 1.0 - a.at(x, y);
    }
  EXPECT_GT(loss_ssim(a, b).value, 1.0);
}

TEST(LossSsim, MatchesDirectWindowOracle) {
  DeterministicRng rng(3);
  for (int t = 0; t < 5; ++t) {
    const int w = 11 + static_cast<int>(rng.below(15)), h = 11 + static_cast<int>(rng.below(15));
    const Image a = random_image(rng, w, h), b = random_image(rng, w, h);
    EXPECT_NEAR(loss_ssim(a, b).value, 1.0 - naive_ssim(a, b), 1e-12);
  }
}

TEST(LossSsim, FiniteDifferences) {
  DeterministicRng rng(4);
  Image pred = random_image(rng, 14, 13), target = random_image(rng, 14, 13);
  const auto l = loss_ssim(pred, target);
  expect_fd([&] { return loss_ssim(pred, target).value; }, pred.data, l.grad.data);
}

TEST(LossSsim, TooSmallIsConfigError) {
  EXPECT_THROW(loss_ssim(Image(10, 30, 3), Image(10, 30, 3)), ConfigError);
}

TEST(RegPosition, ValuesAndOracle) {
  DeterministicRng rng(5);
  const auto layout = random_layout(rng, 9, 8);
  const WeightMapMu ones{9, 8, std::vector<double>(72, 1.0)};
  EXPECT_EQ(reg_position(UVOffsets(layout), ones).value, 0.0);
  UVOffsets unit(layout);
  for (std::size_t i = 0; i < unit.valid_count(); ++i)
    for (std::size_t c = 0; c < 3; ++c) unit.gaussian(i)[channel::kPosition + c] = 1.0;
  EXPECT_NEAR(reg_position(unit, ones).value, std::sqrt(3.0 * static_cast<double>(layout->valid_count())), 1e-12);

  const auto off = random_offsets(layout, rng);
  const auto wm = random_weight_map(*layout, rng);
  double ss = 0.0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) ss += std::pow(off.at(y, x, c) * wm.values[static_cast<std::size_t>(y * 8 + x)], 2);
  EXPECT_NEAR(reg_position(off, wm).value, std::sqrt(ss), 1e-12);
}

TEST(RegPosition, FiniteDifferencesAndOtherChannelsUntouched) {
  DeterministicRng rng(6);
  const auto layout = random_layout(rng, 7, 7);
  auto off = random_offsets(layout, rng);
  const auto wm = random_weight_map(*layout, rng);
  const auto l = reg_position(off, wm);
  expect_fd([&] { return reg_position(off, wm).value; }, off.values(), l.grad.values());
  for (std::size_t i = 0; i < off.valid_count(); ++i)
    for (std::size_t c = 3; c < 13; ++c) ASSERT_EQ(l.grad.gaussian(i)[c], 0.0);
  EXPECT_THROW(reg_position(off, WeightMapMu{7, 6, std::vector<double>(42, 1.0)}), ConfigError);
}

TEST(RegScale, ValuesOracleAndFiniteDifferences) {
  DeterministicRng rng(7);
  const auto layout = random_layout(rng, 8, 9);
  EXPECT_EQ(reg_scale(UVOffsets(layout)).value, 0.0);
  auto off = random_offsets(layout, rng);
  double ss = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 3; c < 6; ++c) ss += off.at(y, x, c) * off.at(y, x, c);
  const auto l = reg_scale(off);
  EXPECT_NEAR(l.value, std::sqrt(ss), 1e-12);
  expect_fd([&] { return reg_scale(off).value; }, off.values(), l.grad.values());
}

TEST(RegView, KnownValues) {
  DeterministicRng rng(8);
  const auto layout = random_layout(rng, 6, 6);
  const auto x = random_offsets(layout, rng);
  const std::vector<UVOffsets> same{x, x, x};
  EXPECT_NEAR(reg_view(same).value, 0.0, 1e-15);
  // {0, X}: both deviate by X/2, so the mean norm is ||X|| / 2.
  double ss = 0.0;
  for (double v : x.values()) ss += v * v;
  const std::vector<UVOffsets> pair{UVOffsets(layout), x};
  EXPECT_NEAR(reg_view(pair).value, std::sqrt(ss) / 2.0, 1e-12);
}

TEST(RegView, FiniteDifferencesThroughTheMean) {
  DeterministicRng rng(9);
  const auto layout = random_layout(rng, 5, 5);
  std::vector<UVOffsets> set;
  for (int k = 0; k < 4; ++k) set.push_back(random_offsets(layout, rng));
  const auto l = reg_view(set);
  for (std::size_t k = 0; k < set.size(); ++k)
    expect_fd([&] { return reg_view(set).value; }, set[k].values(), l.grads[k].values());
}

TEST(RegView, ShiftInvariantAndErrors) {
  DeterministicRng rng(10);
  const auto layout = random_layout(rng, 5, 6);
  std::vector<UVOffsets> set;
  for (int k = 0; k < 3; ++k) set.push_back(random_offsets(layout, rng));
  const auto shift = random_offsets(layout, rng);
  auto shifted = set;
  for (auto& s : shifted)
    for (std::size_t i = 0; i < s.values().size(); ++i) s.values()[i] += shift.values()[i];
  EXPECT_NEAR(reg_view(set).value, reg_view(shifted).value, 1e-12);
  EXPECT_THROW(reg_view(std::span<const UVOffsets>(set.data(), 1)), ConfigError);
  const std::vector<UVOffsets> mixed{set[0], UVOffsets(random_layout(rng, 5, 6))};
  EXPECT_THROW(reg_view(mixed), ConfigError);
}

struct TotalLossScene {
  std::shared_ptr<const UVLayout> layout;
  Image pred, target, mask;
  UVOffsets offsets;
  WeightMapMu wm;
  std::vector<UVOffsets> views;

  TotalLossScene() {
    DeterministicRng rng(11);
    layout = random_layout(rng, 6, 5);
    pred = random_image(rng, 16, 14);
    target = random_image(rng, 16, 14);
    mask = Image(16, 14, 1, 1.0);
    offsets = random_offsets(layout, rng, 0.5);
    wm = random_weight_map(*layout, rng);
    for (int k = 0; k < 3; ++k) views.push_back(random_offsets(layout, rng, 0.5));
  }

  LossInputs inputs() const {
    LossInputs in;
    in.pred = &pred;
    in.target = &target;
    in.mask = &mask;
    in.offsets = &offsets;
    in.weight_map = &wm;
    in.view_set = views;
    return in;
  }
};

TEST(TotalLoss, ZeroWeightsGiveZeroTotal) {
  const TotalLossScene s;
  const auto r = total_loss(s.inputs(), LossWeights{0, 0, 0, 0, 0, 0});
  EXPECT_EQ(r.terms.total, 0.0);
  EXPECT_GT(r.terms.rgb, 0.0);  // reported even at weight zero
  for (double v : r.dl_dimage.data) ASSERT_EQ(v, 0.0);
}

TEST(TotalLoss, OneHotWeightsIsolateTerms) {
  const TotalLossScene s;
  EXPECT_EQ(total_loss(s.inputs(), LossWeights{1, 0, 0, 0, 0, 0}).terms.total, loss_rgb(s.pred, s.target).value);
  EXPECT_EQ(total_loss(s.inputs(), LossWeights{0, 0, 1, 0, 0, 0}).terms.total, loss_ssim(s.pred, s.target).value);
  EXPECT_EQ(total_loss(s.inputs(), LossWeights{0, 0, 0, 1, 0, 0}).terms.total, reg_position(s.offsets, s.wm).value);
  EXPECT_EQ(total_loss(s.inputs(), LossWeights{0, 0, 0, 0, 1, 0}).terms.total, reg_scale(s.offsets).value);
  EXPECT_EQ(total_loss(s.inputs(), LossWeights{0, 0, 0, 0, 0, 1}).terms.total, reg_view(s.views).value);
}

TEST(TotalLoss, DefaultWeightsGoldenAndWeightedSum) {
  const TotalLossScene s;
  const LossWeights w;
  const auto r = total_loss(s.inputs(), w);
  const double expected = 1.0 * loss_rgb(s.pred, s.target).value + 0.05 * (1.0 - naive_ssim(s.pred, s.target)) +
                          0.5 * reg_position(s.offsets, s.wm).value + 5e-5 * reg_scale(s.offsets).value +
                          0.1 * reg_view(s.views).value;
  EXPECT_NEAR(r.terms.total, expected, 1e-12);
  EXPECT_NEAR(r.terms.total, kTotalLossGolden, 1e-12);
}

TEST(TotalLoss, FiniteDifferencesOfImageAndOffsetGradients) {
  TotalLossScene s;
  const LossWeights w;
  const auto r = total_loss(s.inputs(), w);
  expect_fd([&] { return total_loss(s.inputs(), w).terms.total; }, s.pred.data, r.dl_dimage.data);
  // Offsets enter through L_mu and L_s; the view set has its own gradients.
  std::vector<double> offset_grad(r.dl_doffsets.values().begin(), r.dl_doffsets.values().end());
  auto probe = s.offsets;
  const auto f = [&] {
    LossInputs in = s.inputs();
    in.offsets = &probe;
    return total_loss(in, w).terms.total;
  };
  expect_fd(f, probe.values(), offset_grad);
  for (std::size_t k = 0; k < s.views.size(); ++k)
    expect_fd([&] { return total_loss(s.inputs(), w).terms.total; }, s.views[k].values(), r.dl_dview[k].values());
}

TEST(TotalLoss, NegativeWeightIsConfigError) {
  const TotalLossScene s;
  LossWeights w;
  w.ssim = -1;
  EXPECT_THROW(total_loss(s.inputs(), w), ConfigError);
}

TEST(WeightMap, UniformLabelsGiveConstantMap) {
  auto mesh = make_test_head(0);
  const auto table = bake_raster_table(mesh, 32, 32);
  std::fill(mesh.face_region.begin(), mesh.face_region.end(), 1.0f);
  for (std::size_t p = 0; p < table.mask.size(); ++p)
    ASSERT_EQ(default_weight_map(mesh, table).values[p], table.mask[p] ? 1.0 : 0.0);
  std::fill(mesh.face_region.begin(), mesh.face_region.end(), 0.0f);
  for (std::size_t p = 0; p < table.mask.size(); ++p)
    ASSERT_EQ(default_weight_map(mesh, table).values[p], table.mask[p] ? 0.1 : 0.0);
}

TEST(WeightMap, FlippedLabelsFlipValues) {
  auto mesh = make_test_head(0);
  const auto table = bake_raster_table(mesh, 48, 48);
  const auto a = default_weight_map(mesh, table);
  for (auto& f : mesh.face_region) f = 1.0f - f;
  const auto b = default_weight_map(mesh, table);
  std::size_t face = 0;
  for (std::size_t p = 0; p < table.mask.size(); ++p) {
    if (!table.mask[p]) continue;
    face += a.values[p] == 1.0;
    ASSERT_EQ(a.values[p] == 1.0, b.values[p] == 0.1);
  }
  EXPECT_GT(face, 0u);
  EXPECT_LT(face, table.valid_count());
}

TEST(WeightMap, TestHeadGoldenHash) {
  const auto mesh = make_test_head(0);
  const auto wm = default_weight_map(mesh, bake_raster_table(mesh, 64, 64));
  std::vector<std::uint8_t> bytes(wm.values.size() * sizeof(double));
  std::memcpy(bytes.data(), wm.values.data(), bytes.size());
  EXPECT_EQ(fnv1a64(bytes), kWeightMap64Hash);
}

}  // namespace

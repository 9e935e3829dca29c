#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "uvavatar/camera.hpp"
#include "uvavatar/dataset.hpp"
#include "uvavatar/head_mesh.hpp"
#include "uvavatar/image.hpp"
#include "uvavatar/optimize.hpp"
#include "uvavatar/render.hpp"
#include "uvavatar/rng.hpp"
#include "uvavatar/test_head.hpp"

namespace uvavatar {

/// A ground-truth avatar rendered from known rectifications.
struct SynthOptions {
  std::uint64_t seed = 0;
  int uv_size = 48;
  int image_size = 128;
  int train_views = 20;
  int eval_views = 5;
  double distance = 0.8;
  /// Two-expression variant: training frames alternate between two
  /// expressions with distinct ground-truth rectifications; evaluation uses
  /// a third, held-out expression.
  bool two_expressions = false;
  Vec3 background{1.0, 1.0, 1.0};
};

struct SynthFixture {
  SynthOptions options;
  std::shared_ptr<const HeadMeshModel> mesh;
  std::vector<double> beta_id;
  RectificationSet truth;        // Stage 1 truth, or Stage 2 truth with D = 2
  Stage truth_stage = Stage::Global;
  std::vector<Frame> train;
  std::vector<Frame> eval;
};

/// Optimizer settings used with the fixture: 500 Stage 1 steps out of 1000.
inline OptimConfig synthetic_optim_config() {
  OptimConfig c;
  c.total_steps = 1000;
  c.stage_split = 0.5;
  c.batch_size = 8;
  c.blendmaps = 2;
  c.uv_size = 48;
  c.lr.position = 1.6e-4;
  c.lr.rotation = 1e-2;
  c.lr.scale = 2e-2;
  c.lr.alpha = 5e-2;
  c.lr.color = 1e-2;
  return c;
}

namespace detail {

/// Smooth random scalar field on the unit UV square, roughly in [-1, 1].
class UVField {
 public:
  UVField(DeterministicRng& rng, int terms, double max_freq) {
    for (int t = 0; t < terms; ++t)
      terms_.push_back({rng.normal(), rng.uniform(0.5, max_freq), rng.uniform(0.0, 2.0 * std::numbers::pi),
                        rng.uniform(0.5, max_freq), rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  double operator()(double u, double v) const {
    double s = 0.0;
    for (const auto& t : terms_) s += t.a * std::sin(t.fu * u * 2.0 * std::numbers::pi + t.pu) * std::sin(t.fv * v * 2.0 * std::numbers::pi + t.pv);
    return s / std::sqrt(static_cast<double>(terms_.size()));
  }

 private:
  struct Term {
    double a, fu, pu, fv, pv;
  };
  std::vector<Term> terms_;
};

inline std::pair<double, double> pixel_uv(const UVLayout& layout, std::size_t i) {
  const auto pix = layout.pixels[i];
  const int x = static_cast<int>(pix % static_cast<std::uint32_t>(layout.width));
  const int y = static_cast<int>(pix / static_cast<std::uint32_t>(layout.width));
  return {(x + 0.5) / layout.width, (y + 0.5) / layout.height};
}

/// Ground-truth rectification: opaque, few-millimeter, mildly anisotropic
/// Gaussians with smooth colors. Positions are left unchanged.
inline UVOffsets truth_offsets(const std::shared_ptr<const UVLayout>& layout, const InitConstants& init,
                               DeterministicRng& rng) {
  const double target_log_scale = std::log(0.004);
  const double target_alpha = logit(0.9);
  std::vector<UVField> color;
  for (int c = 0; c < 3; ++c) color.emplace_back(rng, 6, 4.0);
  std::vector<UVField> rot;
  for (int c = 0; c < 3; ++c) rot.emplace_back(rng, 3, 2.0);
  const UVField size(rng, 4, 3.0);
  const Vec3 aniso{0.15, 0.0, -0.4};

  UVOffsets out(layout);
  for (std::size_t i = 0; i < layout->valid_count(); ++i) {
    const auto [u, v] = pixel_uv(*layout, i);
    auto g = out.gaussian(i);
    for (int c = 0; c < 3; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      g[channel::kLogScale + cc] = target_log_scale - init.log_scale + aniso[c] + 0.15 * size(u, v);
      g[channel::kRotation + cc] = 0.3 * rot[cc](u, v);
      g[channel::kColor + cc] = std::clamp(0.5 + 0.3 * color[cc](u, v), 0.05, 0.95);
    }
    g[channel::kAlpha] = target_alpha - logit(init.alpha);
  }
  return out;
}

/// Expression-specific change: a color shift over the lower half of the chart.
inline UVOffsets expression_delta(const UVOffsets& base, DeterministicRng& rng, double amplitude) {
  std::vector<UVField> color;
  for (int c = 0; c < 3; ++c) color.emplace_back(rng, 4, 3.0);
  UVOffsets out = base;
  const auto& layout = *base.layout();
  for (std::size_t i = 0; i < layout.valid_count(); ++i) {
    const auto [u, v] = pixel_uv(layout, i);
    auto g = out.gaussian(i);
    for (int c = 0; c < 3; ++c) {
      const auto ch = channel::kColor + static_cast<std::size_t>(c);
      g[ch] = std::clamp(g[ch] + amplitude * color[static_cast<std::size_t>(c)](u, v), 0.02, 0.98);
    }
  }
  return out;
}

inline Image quantize_8bit(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = static_cast<double>(to_u8(v)) / 255.0;
  return out;
}

}  // namespace detail

/// Renders one frame of the ground truth, with a mask from transmittance.
inline Frame render_truth_frame(const MapBuilder& builder, const RectificationSet& truth, Stage stage,
                                std::vector<double> beta_exp, const Vec3& jaw, const Camera& cam, const Vec3& background,
                                const RenderConfig& cfg = {}) {
  const UVGaussianMap map = assemble(builder.build(beta_exp, jaw), truth, beta_exp, stage);
  const RenderOutput out = render(map, cam, background, cfg);
  Frame f;
  f.mask = Image(cam.width, cam.height, 1);
  for (std::size_t p = 0; p < f.mask.data.size(); ++p) f.mask.data[p] = out.transmittance.data[p] < 0.5 ? 1.0 : 0.0;
  // Stored like a PNG on disk: 8-bit, with the background outside the mask.
  f.image = detail::quantize_8bit(composite_over(out.image, f.mask, background));
  f.beta_exp = std::move(beta_exp);
  f.beta_jaw = jaw;
  f.camera = cam;
  return f;
}

inline SynthFixture make_synth_fixture(const SynthOptions& opt) {
  if (opt.train_views < 1 || opt.eval_views < 0 || opt.image_size < 8 || opt.uv_size < 4)
    throw ConfigError("synth fixture: invalid sizes");
  SynthFixture fx;
  fx.options = opt;
  fx.mesh = std::make_shared<const HeadMeshModel>(make_test_head(opt.seed));
  DeterministicRng rng(opt.seed * 0xD1B54A32D192ED03ull + 17);
  fx.beta_id.resize(static_cast<std::size_t>(fx.mesh->identity_count));
  for (auto& b : fx.beta_id) b = detail::round_f32(0.5 * rng.normal());
  const MapBuilder builder(fx.mesh, opt.uv_size, opt.uv_size, fx.beta_id);

  const UVOffsets global = detail::truth_offsets(builder.layout(), builder.init(), rng);
  fx.truth = RectificationSet::zeros(builder.layout());
  const auto expressions = static_cast<std::size_t>(fx.mesh->expression_count);
  std::vector<double> neutral(expressions, 0.0), beta_a = neutral, beta_b = neutral, beta_c = neutral;
  if (opt.two_expressions) {
    fx.truth.global = global;
    fx.truth.blend = {detail::expression_delta(global, rng, 0.25), detail::expression_delta(global, rng, 0.25)};
    fx.truth_stage = Stage::Blend;
    beta_a[0] = 1.5, beta_a[1] = -1.5;
    beta_b[0] = -1.5, beta_b[1] = 1.5;
    beta_c[0] = 2.5, beta_c[1] = -2.5;
  } else {
    fx.truth.global = global;
  }

  auto make_view = [&](double az_lo, double az_hi, double el_lo, double el_hi) {
    const double az = detail::round_f32(rng.uniform(az_lo, az_hi));
    const double el = detail::round_f32(rng.uniform(el_lo, el_hi));
    return orbit_camera(az, el, opt.distance, opt.image_size, opt.image_size);
  };
  for (int i = 0; i < opt.train_views; ++i) {
    const auto& beta = opt.two_expressions ? (i % 2 == 0 ? beta_a : beta_b) : neutral;
    fx.train.push_back(render_truth_frame(builder, fx.truth, fx.truth_stage, beta, {}, make_view(-60, 60, -15, 25),
                                          opt.background));
  }
  for (int i = 0; i < opt.eval_views; ++i) {
    const auto& beta = opt.two_expressions ? beta_c : neutral;
    fx.eval.push_back(render_truth_frame(builder, fx.truth, fx.truth_stage, beta, {}, make_view(-50, 50, -10, 20),
                                         opt.background));
  }
  return fx;
}

/// Writes the mesh model, frame PNGs, masks and a manifest (frames tagged
/// train/eval) into `dir`. Returns the manifest path.
inline std::filesystem::path write_synth_fixture(const SynthFixture& fx, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());
  save_mesh_model(dir / "head.uvhm", *fx.mesh);
  Manifest m;
  m.mesh_model = "head.uvhm";
  m.beta_id = fx.beta_id;
  auto add = [&](const Frame& f, const std::string& split, std::size_t index) {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%03zu", split.c_str(), index);
    FrameRecord r;
    r.image_path = std::string("frames/") + name + ".png";
    r.mask_path = std::string("frames/") + name + "_mask.png";
    write_png(dir / r.image_path, f.image);
    write_png(dir / r.mask_path, f.mask);
    r.beta_exp = f.beta_exp;
    r.beta_jaw = f.beta_jaw;
    r.camera = f.camera;
    r.split = split;
    m.frames.push_back(std::move(r));
  };
  for (std::size_t i = 0; i < fx.train.size(); ++i) add(fx.train[i], "train", i);
  for (std::size_t i = 0; i < fx.eval.size(); ++i) add(fx.eval[i], "eval", i);
  const auto manifest = dir / "manifest.json";
  write_json(manifest, manifest_to_json(m));
  OptimConfig cfg = synthetic_optim_config();
  cfg.uv_size = fx.options.uv_size;
  cfg.background = fx.options.background;
  if (!fx.options.two_expressions) cfg.blendmaps = 1;
  write_json(dir / "config.json", nlohmann::json(cfg));
  return manifest;
}

}  // namespace uvavatar

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "uvavatar/dataset.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/head_mesh.hpp"
#include "uvavatar/losses.hpp"
#include "uvavatar/render.hpp"
#include "uvavatar/render_backward.hpp"
#include "uvavatar/rng.hpp"
#include "uvavatar/uv_map.hpp"

namespace uvavatar {

/// softmax(beta_exp[0:D]).
inline std::vector<double> blending_weights(std::span<const double> beta_exp, int d) {
  if (d < 1) throw ConfigError("blending_weights: D must be at least 1");
  if (beta_exp.size() < static_cast<std::size_t>(d))
    throw ConfigError("blending_weights: need " + std::to_string(d) + " expression coefficients, got " +
                      std::to_string(beta_exp.size()));
  const auto n = static_cast<std::size_t>(d);
  const double top = *std::max_element(beta_exp.begin(), beta_exp.begin() + d);
  std::vector<double> w(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += (w[i] = std::exp(beta_exp[i] - top));
  for (auto& v : w) v /= sum;
  return w;
}

/// Elementwise mean of per-frame offsets; an empty list gives zeros.
inline UVOffsets mean_offsets(std::span<const UVOffsets> per_frame, std::shared_ptr<const UVLayout> layout) {
  UVOffsets out(std::move(layout));
  if (per_frame.empty()) return out;
  auto dst = out.values();
  for (const auto& o : per_frame) {
    if (!o.same_layout(out)) throw ConfigError("mean_offsets: layout mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += o.values()[i];
  }
  const double inv = 1.0 / static_cast<double>(per_frame.size());
  for (auto& v : dst) v *= inv;
  return out;
}

enum class Stage { Global = 1, Blend = 2 };

/// Learnable rectification state on one UV layout.
struct RectificationSet {
  UVOffsets mean_offset;           // fixed input, zero unless supplied
  UVOffsets global;
  std::vector<UVOffsets> blend;    // empty until Stage 2 starts

  static RectificationSet zeros(const std::shared_ptr<const UVLayout>& layout, int blendmaps = 0) {
    RectificationSet r{UVOffsets(layout), UVOffsets(layout), {}};
    for (int i = 0; i < blendmaps; ++i) r.blend.emplace_back(layout);
    return r;
  }

  int blendmap_count() const { return static_cast<int>(blend.size()); }

  void validate() const {
    if (!global.same_layout(mean_offset)) throw ConfigError("rectification: layout mismatch");
    for (const auto& b : blend)
      if (!b.same_layout(global)) throw ConfigError("rectification: blendmap layout mismatch");
  }
};

/// Total offset on top of U_init for a frame with expression `beta_exp`.
inline UVOffsets effective_offset(const RectificationSet& rect, std::span<const double> beta_exp, Stage stage) {
  rect.validate();
  if (stage == Stage::Global) {
    UVOffsets out = rect.mean_offset;
    auto dst = out.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += rect.global.values()[i];
    return out;
  }
  if (rect.blend.empty()) throw ConfigError("assemble: Stage 2 needs at least one blendmap");
  const auto b = blending_weights(beta_exp, rect.blendmap_count());
  UVOffsets out = blend_offsets(rect.blend, b);
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += rect.mean_offset.values()[i];
  return out;
}

/// Stage 1: U_init + mean + global. Stage 2: U_init + mean + sum_i b_i blend_i.
inline UVGaussianMap assemble(const UVGaussianMap& map_init, const RectificationSet& rect,
                              std::span<const double> beta_exp, Stage stage) {
  const UVOffsets off = effective_offset(rect, beta_exp, stage);
  return apply_offsets(map_init, {&off});
}

/// Builds U_init for a frame from its mesh parameters through a baked,
/// topology-fixed raster table.
class MapBuilder {
 public:
  MapBuilder(std::shared_ptr<const HeadMeshModel> mesh, int uv_height, int uv_width, std::vector<double> beta_id,
             InitConstants init = {})
      : mesh_(std::move(mesh)), beta_id_(std::move(beta_id)), init_(init) {
    if (!mesh_) throw ConfigError("MapBuilder: no mesh model");
    mesh_->validate();
    if (beta_id_.size() != static_cast<std::size_t>(mesh_->identity_count))
      throw ConfigError("MapBuilder: beta_id has " + std::to_string(beta_id_.size()) + " entries, model expects " +
                        std::to_string(mesh_->identity_count));
    table_ = std::make_shared<const UVRasterTable>(bake_raster_table(*mesh_, uv_height, uv_width));
    layout_ = UVLayout::from_table(*table_);
    if (layout_->valid_count() == 0) throw ConfigError("MapBuilder: UV chart covers no pixels");
    weight_map_ = default_weight_map(*mesh_, *table_);
  }

  const std::shared_ptr<const HeadMeshModel>& mesh() const { return mesh_; }
  const UVRasterTable& table() const { return *table_; }
  const std::shared_ptr<const UVLayout>& layout() const { return layout_; }
  const std::vector<double>& beta_id() const { return beta_id_; }
  const InitConstants& init() const { return init_; }
  const WeightMapMu& weight_map() const { return weight_map_; }

  MeshParams params(std::span<const double> beta_exp, const Vec3& jaw) const {
    return MeshParams{beta_id_, std::vector<double>(beta_exp.begin(), beta_exp.end()), jaw};
  }

  UVGaussianMap build(std::span<const double> beta_exp, const Vec3& jaw) const {
    const auto vertices = build_mesh(*mesh_, params(beta_exp, jaw));
    const auto positions = interpolate_valid_positions(*table_, *mesh_, vertices);
    return init_map(layout_, positions, init_);
  }

 private:
  std::shared_ptr<const HeadMeshModel> mesh_;
  std::vector<double> beta_id_;
  InitConstants init_;
  std::shared_ptr<const UVRasterTable> table_;
  std::shared_ptr<const UVLayout> layout_;
  WeightMapMu weight_map_;
};

/// Per channel-group learning rates.
struct LearningRates {
  double position = 1.6e-4;
  double rotation = 1e-3;
  double scale = 5e-3;
  double alpha = 5e-2;
  double color = 2.5e-3;

  std::array<double, channel::kCount> per_channel() const {
    std::array<double, channel::kCount> lr{};
    for (int c = 0; c < 3; ++c) {
      lr[static_cast<std::size_t>(channel::kPosition + c)] = position;
      lr[static_cast<std::size_t>(channel::kLogScale + c)] = scale;
      lr[static_cast<std::size_t>(channel::kRotation + c)] = rotation;
      lr[static_cast<std::size_t>(channel::kColor + c)] = color;
    }
    lr[channel::kAlpha] = alpha;
    return lr;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update. `lr` is indexed by i % lr.size(), which
/// for UV tensors is the channel.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      std::span<const double> lr, const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ConfigError("adam_step: size mismatch");
  if (lr.empty()) throw ConfigError("adam_step: no learning rate");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr[i % lr.size()] * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

struct OptimConfig {
  int total_steps = 3000;
  double stage_split = 0.3;  // fraction of steps spent in Stage 1
  int batch_size = 8;
  int blendmaps = 10;
  LearningRates lr;
  double lr_final_scale = 1.0;  // multiplier reached at the end of each stage (exponential decay)
  AdamConfig adam;
  LossWeights weights;
  Vec3 background{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  int uv_size = 320;
  InitConstants init;
  RenderConfig render;

  void validate() const {
    if (total_steps < 0) throw ConfigError("optim: total_steps must be non-negative");
    if (!(stage_split > 0.0 && stage_split < 1.0)) throw ConfigError("optim: stage split must lie in (0, 1)");
    if (batch_size < 1) throw ConfigError("optim: batch size must be at least 1");
    if (blendmaps < 1) throw ConfigError("optim: D must be at least 1");
    if (uv_size < 1) throw ConfigError("optim: uv_size must be positive");
    if (!(lr_final_scale > 0.0)) throw ConfigError("optim: lr_final_scale must be positive");
    for (double v : {lr.position, lr.rotation, lr.scale, lr.alpha, lr.color})
      if (!(v >= 0.0)) throw ConfigError("optim: learning rates must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0))
      throw ConfigError("optim: invalid Adam parameters");
    if (!(render.max_alpha < 1.0)) throw ConfigError("optim: training needs max_alpha < 1");
    weights.validate();
  }

  int stage1_steps() const {
    return static_cast<int>(std::ceil(stage_split * static_cast<double>(total_steps) - 1e-9));
  }
  int stage2_steps() const { return total_steps - stage1_steps(); }
};

inline void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{
      {"total_steps", c.total_steps},
      {"stage_split", c.stage_split},
      {"batch_size", c.batch_size},
      {"blendmaps", c.blendmaps},
      {"lr",
       {{"position", c.lr.position},
        {"rotation", c.lr.rotation},
        {"scale", c.lr.scale},
        {"alpha", c.lr.alpha},
        {"color", c.lr.color}}},
      {"lr_final_scale", c.lr_final_scale},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
      {"weights",
       {{"rgb", c.weights.rgb},
        {"lpips", c.weights.lpips},
        {"ssim", c.weights.ssim},
        {"position", c.weights.position},
        {"scale", c.weights.scale},
        {"view", c.weights.view}}},
      {"background", {c.background.x, c.background.y, c.background.z}},
      {"seed", c.seed},
      {"uv_size", c.uv_size},
      {"init", {{"alpha", c.init.alpha}, {"log_scale", c.init.log_scale}}},
      {"render",
       {{"tile_size", c.render.tile_size},
        {"sigma_cutoff", c.render.sigma_cutoff},
        {"max_alpha", c.render.max_alpha},
        {"min_alpha", c.render.min_alpha},
        {"min_transmittance", c.render.min_transmittance},
        {"lowpass", c.render.lowpass},
        {"threads", c.render.threads}}}};
}

/// Missing keys keep their defaults, so a config file only lists overrides.
inline void from_json(const nlohmann::json& j, OptimConfig& c) {
  try {
    auto get = [](const nlohmann::json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get(j, "total_steps", c.total_steps);
    get(j, "stage_split", c.stage_split);
    get(j, "batch_size", c.batch_size);
    get(j, "blendmaps", c.blendmaps);
    get(j, "lr_final_scale", c.lr_final_scale);
    get(j, "seed", c.seed);
    get(j, "uv_size", c.uv_size);
    if (j.contains("lr")) {
      const auto& l = j.at("lr");
      get(l, "position", c.lr.position);
      get(l, "rotation", c.lr.rotation);
      get(l, "scale", c.lr.scale);
      get(l, "alpha", c.lr.alpha);
      get(l, "color", c.lr.color);
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      get(a, "beta1", c.adam.beta1);
      get(a, "beta2", c.adam.beta2);
      get(a, "epsilon", c.adam.epsilon);
    }
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      get(w, "rgb", c.weights.rgb);
      get(w, "lpips", c.weights.lpips);
      get(w, "ssim", c.weights.ssim);
      get(w, "position", c.weights.position);
      get(w, "scale", c.weights.scale);
      get(w, "view", c.weights.view);
    }
    if (j.contains("background")) {
      const auto bg = j.at("background").get<std::vector<double>>();
      if (bg.size() != 3) throw ConfigError("optim config: background needs 3 values");
      c.background = {bg[0], bg[1], bg[2]};
    }
    if (j.contains("init")) {
      get(j.at("init"), "alpha", c.init.alpha);
      get(j.at("init"), "log_scale", c.init.log_scale);
    }
    if (j.contains("render")) {
      const auto& r = j.at("render");
      get(r, "tile_size", c.render.tile_size);
      get(r, "sigma_cutoff", c.render.sigma_cutoff);
      get(r, "max_alpha", c.render.max_alpha);
      get(r, "min_alpha", c.render.min_alpha);
      get(r, "min_transmittance", c.render.min_transmittance);
      get(r, "lowpass", c.render.lowpass);
      get(r, "threads", c.render.threads);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("optim config: ") + e.what());
  }
}

/// Seeded shuffle of frame indices, reshuffled at every epoch boundary.
class BatchSampler {
 public:
  BatchSampler(std::size_t frame_count, std::uint64_t seed) : order_(frame_count), rng_(seed) {
    if (frame_count == 0) throw ConfigError("optimize: dataset has no frames");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<std::size_t> next(int batch) {
    std::vector<std::size_t> out;
    for (int i = 0; i < batch; ++i) {
      if (cursor_ == order_.size()) {
        shuffle();
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  DeterministicRng rng_;
};

/// Loss terms and dL/d(assembled map) for one frame.
struct FrameLoss {
  LossTerms terms;
  UVOffsets grad;
  Image pred;
};

/// The training target: the frame composited over the background outside
/// its foreground mask, matching how the render is composited.
inline Image training_target(const Frame& frame, const Vec3& background) {
  return composite_over(frame.image, frame.mask, background);
}

/// assemble -> render -> loss (lambda_view fixed to 0) -> backward.
inline FrameLoss frame_loss(const Frame& frame, const MapBuilder& builder, const RectificationSet& rect, Stage stage,
                            const OptimConfig& cfg, bool want_grad = true) {
  const UVGaussianMap base = builder.build(frame.beta_exp, frame.beta_jaw);
  const UVOffsets offset = effective_offset(rect, frame.beta_exp, stage);
  const UVGaussianMap map = apply_offsets(base, {&offset});
  const GaussianCloud cloud = to_cloud(map);
  RenderContext ctx = render_forward(cloud, frame.camera, cfg.background, cfg.render);
  const Image target = training_target(frame, cfg.background);

  LossWeights w = cfg.weights;
  w.view = 0.0;
  LossInputs in;
  in.pred = &ctx.output.image;
  in.target = &target;
  in.offsets = &offset;
  in.weight_map = &builder.weight_map();
  LossResult loss = total_loss(in, w);

  FrameLoss out;
  out.terms = loss.terms;
  if (want_grad) {
    out.grad = gradients_to_uv(render_backward(ctx, cloud, loss.dl_dimage), map.layout());
    auto g = out.grad.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += loss.dl_doffsets.values()[i];
  }
  out.pred = std::move(ctx.output.image);
  return out;
}

inline LossTerms& operator+=(LossTerms& a, const LossTerms& b) {
  a.rgb += b.rgb;
  a.lpips += b.lpips;
  a.ssim += b.ssim;
  a.position += b.position;
  a.scale += b.scale;
  a.view += b.view;
  a.total += b.total;
  return a;
}

inline LossTerms operator*(LossTerms a, double s) {
  for (double* v : {&a.rgb, &a.lpips, &a.ssim, &a.position, &a.scale, &a.view, &a.total}) *v *= s;
  return a;
}

struct BatchLoss {
  LossTerms terms;
  UVOffsets grad;
};

/// Mean loss and mean gradient over the frames at `indices`.
inline BatchLoss batch_loss(std::span<const Frame> frames, std::span<const std::size_t> indices,
                            const MapBuilder& builder, const RectificationSet& rect, Stage stage,
                            const OptimConfig& cfg) {
  BatchLoss out{{}, UVOffsets(builder.layout())};
  auto dst = out.grad.values();
  for (auto idx : indices) {
    const FrameLoss f = frame_loss(frames[idx], builder, rect, stage, cfg);
    out.terms += f.terms;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += f.grad.values()[i];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  out.terms = out.terms * inv;
  for (auto& v : dst) v *= inv;
  return out;
}

struct StepReport {
  Stage stage;
  int step;   // 0-based within the stage
  int steps;  // stage length
  LossTerms terms;
};

using ProgressFn = std::function<void(const StepReport&)>;

namespace detail {

inline double lr_multiplier(int step, int steps, double final_scale) {
  if (steps <= 1 || final_scale == 1.0) return 1.0;
  return std::pow(final_scale, static_cast<double>(step) / static_cast<double>(steps - 1));
}

inline void check_dataset(std::span<const Frame> frames, const MapBuilder& builder, const RectificationSet& rect) {
  if (frames.empty()) throw ConfigError("optimize: dataset has no frames");
  if (!rect.global.same_layout(UVOffsets(builder.layout())))
    throw ConfigError("optimize: rectification layout does not match the UV chart");
}

/// Shared step loop. `accumulate(frame, grad, inv_batch)` folds one frame's
/// gradient into the learnable state's gradient buffers; `apply(lr_scale)`
/// then takes the optimizer step.
template <class Accumulate, class Apply>
std::vector<LossTerms> run_stage(Stage stage, int steps, std::uint64_t seed, std::span<const Frame> frames,
                                 const MapBuilder& builder, RectificationSet& rect, const OptimConfig& cfg,
                                 const ProgressFn& progress, Accumulate&& accumulate, Apply&& apply) {
  std::vector<LossTerms> history;
  history.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  BatchSampler sampler(frames.size(), seed);
  const double inv = 1.0 / static_cast<double>(cfg.batch_size);
  auto fail = [&](int s, const std::string& what) {
    return NumericalError("stage " + std::to_string(static_cast<int>(stage)) + " step " + std::to_string(s) + ": " +
                          what);
  };
  for (int s = 0; s < steps; ++s) {
    LossTerms terms;
    for (auto idx : sampler.next(cfg.batch_size)) {
      FrameLoss f;
      try {
        f = frame_loss(frames[idx], builder, rect, stage, cfg);
      } catch (const NumericalError& e) {
        throw fail(s, e.what());
      }
      terms += f.terms;
      accumulate(frames[idx], f.grad, inv);
    }
    terms = terms * inv;
    if (!std::isfinite(terms.total)) throw fail(s, "non-finite loss");
    apply(lr_multiplier(s, steps, cfg.lr_final_scale));
    history.push_back(terms);
    if (progress) progress({stage, s, steps, terms});
  }
  return history;
}

/// Keeps assembled colors inside [0, 1] (U_init colors are zero). The
/// render-time clamp has zero gradient outside that range, so a color pushed
/// out of it would otherwise never come back.
inline void project_colors(UVOffsets& learned, const UVOffsets& mean_offset) {
  for (std::size_t i = 0; i < learned.valid_count(); ++i) {
    auto g = learned.gaussian(i);
    const auto m = mean_offset.gaussian(i);
    for (std::size_t c = channel::kColor; c < channel::kColor + 3; ++c) g[c] = std::clamp(m[c] + g[c], 0.0, 1.0) - m[c];
  }
}

inline std::array<double, channel::kCount> scaled_lr(const OptimConfig& cfg, double scale) {
  auto lr = cfg.lr.per_channel();
  for (auto& v : lr) v *= scale;
  return lr;
}

}  // namespace detail

/// Stage 1: learns the global rectification for ceil(split * total) steps.
inline std::vector<LossTerms> optimize_stage1(std::span<const Frame> frames, const MapBuilder& builder,
                                              RectificationSet& rect, const OptimConfig& cfg,
                                              const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(frames, builder, rect);
  const std::size_t n = rect.global.values().size();
  AdamState state(n);
  std::vector<double> grad(n, 0.0);
  return detail::run_stage(
      Stage::Global, cfg.stage1_steps(), cfg.seed, frames, builder, rect, cfg, progress,
      [&](const Frame&, const UVOffsets& g, double w) {
        for (std::size_t i = 0; i < n; ++i) grad[i] += w * g.values()[i];
      },
      [&](double scale) {
        adam_step(rect.global.values(), grad, state, detail::scaled_lr(cfg, scale), cfg.adam);
        detail::project_colors(rect.global, rect.mean_offset);
        std::fill(grad.begin(), grad.end(), 0.0);
      });
}

/// Replaces the blendmap stack with `d` copies of the global map.
inline void initialize_blendmaps(RectificationSet& rect, int d) {
  if (d < 1) throw ConfigError("initialize_blendmaps: D must be at least 1");
  rect.blend.assign(static_cast<std::size_t>(d), rect.global);
}

/// Stage 2: initializes the blendmaps from the global map and trains them
/// for the remaining steps. A frame contributes b_i times its map gradient
/// to blendmap i.
inline std::vector<LossTerms> optimize_stage2(std::span<const Frame> frames, const MapBuilder& builder,
                                              RectificationSet& rect, const OptimConfig& cfg,
                                              const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(frames, builder, rect);
  for (const auto& f : frames)
    if (f.beta_exp.size() < static_cast<std::size_t>(cfg.blendmaps))
      throw ConfigError("optimize: frames need at least D expression coefficients");
  initialize_blendmaps(rect, cfg.blendmaps);
  const std::size_t n = rect.global.values().size();
  const auto d = rect.blend.size();
  std::vector<AdamState> states(d, AdamState(n));
  std::vector<std::vector<double>> grads(d, std::vector<double>(n, 0.0));
  // Separate sampling stream, so Stage 2 batches do not depend on the
  // Stage 1 length.
  const std::uint64_t seed = cfg.seed ^ 0x9E3779B97F4A7C15ull;
  return detail::run_stage(
      Stage::Blend, cfg.stage2_steps(), seed, frames, builder, rect, cfg, progress,
      [&](const Frame& frame, const UVOffsets& g, double w) {
        const auto b = blending_weights(frame.beta_exp, static_cast<int>(d));
        for (std::size_t k = 0; k < d; ++k) {
          const double s = w * b[k];
          for (std::size_t i = 0; i < n; ++i) grads[k][i] += s * g.values()[i];
        }
      },
      [&](double scale) {
        const auto lr = detail::scaled_lr(cfg, scale);
        for (std::size_t k = 0; k < d; ++k) {
          adam_step(rect.blend[k].values(), grads[k], states[k], lr, cfg.adam);
          detail::project_colors(rect.blend[k], rect.mean_offset);
          std::fill(grads[k].begin(), grads[k].end(), 0.0);
        }
      });
}

/// Per-frame evaluation metrics.
struct EvalMetrics {
  double l1 = 0.0;
  double ssim = 0.0;  // structural similarity index (1 = identical)
  double psnr = 0.0;  // masked to the foreground
};

inline EvalMetrics evaluate_frame(const Frame& frame, const MapBuilder& builder, const RectificationSet& rect,
                                  Stage stage, const OptimConfig& cfg) {
  const UVGaussianMap map = assemble(builder.build(frame.beta_exp, frame.beta_jaw), rect, frame.beta_exp, stage);
  const Image pred = render(map, frame.camera, cfg.background, cfg.render).image;
  const Image target = training_target(frame, cfg.background);
  EvalMetrics m;
  m.l1 = loss_rgb(pred, target).value;
  m.ssim = 1.0 - loss_ssim(pred, target).value;
  m.psnr = masked_psnr(pred, target, &frame.mask);
  return m;
}

}  // namespace uvavatar

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uvavatar/camera.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/gaussian.hpp"
#include "uvavatar/image.hpp"
#include "uvavatar/parallel.hpp"
#include "uvavatar/uv_map.hpp"

namespace uvavatar {

/// Rasterizer knobs. Defaults follow the usual splatting recipe.
struct RenderConfig {
  int tile_size = 16;
  double sigma_cutoff = 3.0;          // footprint limited to this Mahalanobis radius
  double max_alpha = 0.99;            // per-splat alpha clip
  double min_alpha = 1.0 / 255.0;     // weaker contributions are skipped
  double min_transmittance = 1e-4;    // stop compositing a pixel below this
  double lowpass = 0.3;               // px^2 added to every 2D covariance
  unsigned threads = 0;               // 0 = hardware concurrency
};

/// A Gaussian projected to the image plane.
struct Splat2D {
  Vec2 mean;                       // pixels
  double cov_xx = 0, cov_xy = 0, cov_yy = 0;        // includes the low-pass term
  double conic_xx = 0, conic_xy = 0, conic_yy = 0;  // inverse of the 2D covariance
  double depth = 0;                // camera-space z
  double opacity = 0;              // activated alpha
  Vec3 color;                      // clamped to [0,1]
  std::uint32_t source = 0;        // index in the originating cloud
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds of the footprint

  /// Sets the conic and the clipped footprint bounds from the covariance.
  void finalize(const RenderConfig& cfg, int width, int height) {
    const double det = cov_xx * cov_yy - cov_xy * cov_xy;
    conic_xx = cov_yy / det;
    conic_xy = -cov_xy / det;
    conic_yy = cov_xx / det;
    const double hx = cfg.sigma_cutoff * std::sqrt(cov_xx);
    const double hy = cfg.sigma_cutoff * std::sqrt(cov_yy);
    // One pixel of slack so rounding at the ellipse boundary never loses a pixel.
    auto px = [](double v, int hi) { return static_cast<int>(std::clamp(v, -2.0, static_cast<double>(hi) + 2.0)); };
    x0 = std::max(0, px(std::ceil(mean.x - hx - 0.5), width) - 1);
    x1 = std::min(width - 1, px(std::floor(mean.x + hx - 0.5), width) + 1);
    y0 = std::max(0, px(std::ceil(mean.y - hy - 0.5), height) - 1);
    y1 = std::min(height - 1, px(std::floor(mean.y + hy - 0.5), height) + 1);
    if (!std::isfinite(hx + hy + mean.x + mean.y) || !(det > 0.0)) x1 = x0 - 1;
  }

  bool empty() const { return x1 < x0 || y1 < y0; }
};

struct RenderOutput {
  Image image;                              // RGB
  Image transmittance;                      // 1 channel, final T per pixel
  std::vector<std::uint32_t> contributors;  // splats composited per pixel
};

/// Per-pixel evaluation shared by the forward and backward passes. Returns
/// false when the splat does not touch pixel (px, py).
struct PixelSample {
  double dx, dy;
  double gauss;   // exp(-q/2)
  double alpha;   // after clipping
  bool clipped;
};

inline bool sample_splat(const Splat2D& s, int px, int py, const RenderConfig& cfg, PixelSample& out) {
  const double dx = (px + 0.5) - s.mean.x;
  const double dy = (py + 0.5) - s.mean.y;
  const double q = s.conic_xx * dx * dx + 2.0 * s.conic_xy * dx * dy + s.conic_yy * dy * dy;
  if (q > cfg.sigma_cutoff * cfg.sigma_cutoff) return false;
  const double g = std::exp(-0.5 * q);
  const double raw = s.opacity * g;
  if (raw < cfg.min_alpha) return false;
  out.dx = dx;
  out.dy = dy;
  out.gauss = g;
  out.clipped = raw > cfg.max_alpha;
  out.alpha = out.clipped ? cfg.max_alpha : raw;
  return true;
}

namespace detail {

inline void check_finite(const Gaussian3D& g, std::size_t i) {
  const double vals[] = {g.mean.x, g.mean.y, g.mean.z, g.log_scale.x, g.log_scale.y, g.log_scale.z,
                         g.rotation.x, g.rotation.y, g.rotation.z, g.alpha_logit, g.color.x, g.color.y, g.color.z};
  for (double v : vals)
    if (!std::isfinite(v)) throw NumericalError("render: Gaussian " + std::to_string(i) + " has non-finite parameters");
}

/// Camera-frame covariance W Sigma W^T and the projection Jacobian at t.
struct ProjectionTerms {
  Vec3 t;
  Mat3 cam_cov;
  double j00, j02, j11, j12;
};

inline ProjectionTerms projection_terms(const Gaussian3D& g, const Camera& cam) {
  ProjectionTerms p;
  p.t = cam.to_camera(g.mean);
  const Mat3 sigma = covariance(g.log_scale, quaternion_from_params(g.rotation));
  p.cam_cov = cam.rotation * sigma * cam.rotation.transposed();
  const double iz = 1.0 / p.t.z;
  p.j00 = cam.fx * iz;
  p.j02 = -cam.fx * p.t.x * iz * iz;
  p.j11 = cam.fy * iz;
  p.j12 = -cam.fy * p.t.y * iz * iz;
  return p;
}

}  // namespace detail

/// Activates and projects every Gaussian. Gaussians outside (near, far) or
/// whose footprint misses the image are culled. Output is in cloud order.
inline std::vector<Splat2D> project(const GaussianCloud& cloud, const Camera& cam, const RenderConfig& cfg = {}) {
  cam.validate();
  const std::size_t n = cloud.size();
  std::vector<Splat2D> all(n);
  std::vector<std::uint8_t> keep(n, 0);
  constexpr std::size_t kChunk = 2048;
  parallel_for((n + kChunk - 1) / kChunk, cfg.threads, [&](std::size_t chunk) {
    const std::size_t end = std::min(n, (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < end; ++i) {
      const Gaussian3D g = cloud[i];
      detail::check_finite(g, i);
      const Vec3 t = cam.to_camera(g.mean);
      if (!(t.z > cam.near_plane) || !(t.z < cam.far_plane)) continue;
      const auto p = detail::projection_terms(g, cam);
      const Mat3& m = p.cam_cov;
      Splat2D s;
      s.mean = {cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy};
      // J M J^T with J = [[j00, 0, j02], [0, j11, j12]].
      const double a0 = p.j00 * m(0, 0) + p.j02 * m(2, 0), a1 = p.j00 * m(0, 1) + p.j02 * m(2, 1),
                   a2 = p.j00 * m(0, 2) + p.j02 * m(2, 2);
      const double b1 = p.j11 * m(1, 1) + p.j12 * m(2, 1), b2 = p.j11 * m(1, 2) + p.j12 * m(2, 2);
      s.cov_xx = a0 * p.j00 + a2 * p.j02 + cfg.lowpass;
      s.cov_xy = a1 * p.j11 + a2 * p.j12;
      s.cov_yy = b1 * p.j11 + b2 * p.j12 + cfg.lowpass;
      s.depth = t.z;
      s.opacity = sigmoid(g.alpha_logit);
      s.color = {std::clamp(g.color.x, 0.0, 1.0), std::clamp(g.color.y, 0.0, 1.0), std::clamp(g.color.z, 0.0, 1.0)};
      s.source = static_cast<std::uint32_t>(i);
      s.finalize(cfg, cam.width, cam.height);
      if (s.empty()) continue;
      all[i] = s;
      keep[i] = 1;
    }
  });
  std::vector<Splat2D> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(all[i]);
  return out;
}

/// Splat indices grouped per screen tile (CSR). Within a tile, entries keep
/// the global front-to-back order.
struct TileBins {
  int tiles_x = 0;
  int tiles_y = 0;
  int tile_size = 16;
  std::vector<std::uint32_t> offsets;  // tiles_x * tiles_y + 1
  std::vector<std::uint32_t> entries;  // indices into the sorted splat list

  std::size_t tile_count() const { return static_cast<std::size_t>(tiles_x) * static_cast<std::size_t>(tiles_y); }
};

/// Sorts by (depth, source index).
inline void sort_front_to_back(std::vector<Splat2D>& splats) {
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.source < b.source;
  });
}

inline TileBins bin_splats(std::span<const Splat2D> sorted, int width, int height, int tile_size) {
  if (tile_size < 1) throw ConfigError("render: tile size must be positive");
  TileBins bins;
  bins.tile_size = tile_size;
  bins.tiles_x = (width + tile_size - 1) / tile_size;
  bins.tiles_y = (height + tile_size - 1) / tile_size;
  bins.offsets.assign(bins.tile_count() + 1, 0);
  auto for_tiles = [&](const Splat2D& s, auto&& fn) {
    for (int ty = s.y0 / tile_size; ty <= s.y1 / tile_size; ++ty)
      for (int tx = s.x0 / tile_size; tx <= s.x1 / tile_size; ++tx)
        fn(static_cast<std::size_t>(ty) * static_cast<std::size_t>(bins.tiles_x) + static_cast<std::size_t>(tx));
  };
  for (const auto& s : sorted) for_tiles(s, [&](std::size_t t) { ++bins.offsets[t + 1]; });
  for (std::size_t t = 0; t < bins.tile_count(); ++t) bins.offsets[t + 1] += bins.offsets[t];
  bins.entries.resize(bins.offsets.back());
  std::vector<std::uint32_t> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
  for (std::size_t i = 0; i < sorted.size(); ++i)
    for_tiles(sorted[i], [&](std::size_t t) { bins.entries[cursor[t]++] = static_cast<std::uint32_t>(i); });
  return bins;
}

/// Everything the backward pass needs from a forward render.
struct RenderContext {
  Camera camera;
  Vec3 background;
  RenderConfig config;
  std::vector<Splat2D> splats;         // sorted front to back
  TileBins bins;
  std::vector<std::uint32_t> last_entry;  // per pixel: 1 + bin position of the last contributor, 0 = none
  RenderOutput output;
};

namespace detail {

struct TileRect {
  int x0, x1, y0, y1;  // inclusive
};

inline TileRect tile_rect(const TileBins& bins, std::size_t tile, int width, int height) {
  const int tx = static_cast<int>(tile % static_cast<std::size_t>(bins.tiles_x));
  const int ty = static_cast<int>(tile / static_cast<std::size_t>(bins.tiles_x));
  return {tx * bins.tile_size, std::min(width, (tx + 1) * bins.tile_size) - 1, ty * bins.tile_size,
          std::min(height, (ty + 1) * bins.tile_size) - 1};
}

/// Front-to-back compositing of one tile. Splat-major loop; every pixel
/// still sees its splats in bin order, so results match a per-pixel loop.
inline void raster_tile(RenderContext& ctx, std::size_t tile) {
  const auto& cfg = ctx.config;
  const int width = ctx.camera.width, height = ctx.camera.height;
  const TileRect r = tile_rect(ctx.bins, tile, width, height);
  const int tw = r.x1 - r.x0 + 1, th = r.y1 - r.y0 + 1;
  const auto local = static_cast<std::size_t>(tw * th);
  std::vector<double> trans(local, 1.0), rgb(local * 3, 0.0);
  std::vector<std::uint32_t> last(local, 0), count(local, 0);
  std::vector<std::uint8_t> done(local, 0);
  std::size_t remaining = local;

  const std::uint32_t begin = ctx.bins.offsets[tile], end = ctx.bins.offsets[tile + 1];
  for (std::uint32_t e = begin; e < end && remaining > 0; ++e) {
    const Splat2D& s = ctx.splats[ctx.bins.entries[e]];
    const int x0 = std::max(s.x0, r.x0), x1 = std::min(s.x1, r.x1);
    const int y0 = std::max(s.y0, r.y0), y1 = std::min(s.y1, r.y1);
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const auto l = static_cast<std::size_t>((py - r.y0) * tw + (px - r.x0));
        if (done[l]) continue;
        PixelSample ps;
        if (!sample_splat(s, px, py, cfg, ps)) continue;
        const double w = ps.alpha * trans[l];
        rgb[l * 3] += s.color.x * w;
        rgb[l * 3 + 1] += s.color.y * w;
        rgb[l * 3 + 2] += s.color.z * w;
        trans[l] *= (1.0 - ps.alpha);
        last[l] = e - begin + 1;
        ++count[l];
        if (trans[l] < cfg.min_transmittance) {
          done[l] = 1;
          --remaining;
        }
      }
    }
  }

  auto& out = ctx.output;
  for (int py = r.y0; py <= r.y1; ++py) {
    for (int px = r.x0; px <= r.x1; ++px) {
      const auto l = static_cast<std::size_t>((py - r.y0) * tw + (px - r.x0));
      const auto p = static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px);
      for (int c = 0; c < 3; ++c)
        out.image.data[p * 3 + static_cast<std::size_t>(c)] = rgb[l * 3 + static_cast<std::size_t>(c)] + trans[l] * ctx.background[c];
      out.transmittance.data[p] = trans[l];
      out.contributors[p] = count[l];
      ctx.last_entry[p] = last[l];
    }
  }
}

inline RenderContext composite_context(std::vector<Splat2D> splats, const Camera& cam, const Vec3& background,
                                       const RenderConfig& cfg) {
  cam.validate();
  RenderContext ctx;
  ctx.camera = cam;
  ctx.background = background;
  ctx.config = cfg;
  ctx.splats = std::move(splats);
  sort_front_to_back(ctx.splats);
  ctx.bins = bin_splats(ctx.splats, cam.width, cam.height, cfg.tile_size);
  const auto pixels = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  ctx.output.image = Image(cam.width, cam.height, 3);
  ctx.output.transmittance = Image(cam.width, cam.height, 1);
  ctx.output.contributors.assign(pixels, 0);
  ctx.last_entry.assign(pixels, 0);
  parallel_for(ctx.bins.tile_count(), cfg.threads, [&](std::size_t tile) { raster_tile(ctx, tile); });
  return ctx;
}

}  // namespace detail

/// Alpha-composites projected splats front to back over `background`.
inline RenderOutput composite(std::vector<Splat2D> splats, const Camera& cam, const Vec3& background,
                              const RenderConfig& cfg = {}) {
  return std::move(detail::composite_context(std::move(splats), cam, background, cfg).output);
}

/// Forward render of a cloud, keeping the state needed for backward.
inline RenderContext render_forward(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
                                    const RenderConfig& cfg = {}) {
  return detail::composite_context(project(cloud, cam, cfg), cam, background, cfg);
}

inline RenderOutput render(const GaussianCloud& cloud, const Camera& cam, const Vec3& background,
                           const RenderConfig& cfg = {}) {
  return std::move(render_forward(cloud, cam, background, cfg).output);
}

inline RenderOutput render(const UVGaussianMap& map, const Camera& cam, const Vec3& background,
                           const RenderConfig& cfg = {}) {
  return render(to_cloud(map), cam, background, cfg);
}

}  // namespace uvavatar

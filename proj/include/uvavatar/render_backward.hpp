#pragma once

#include <array>
#include <vector>

#include "uvavatar/render.hpp"

namespace uvavatar {

/// dL/d(parameter) for every Gaussian of a cloud, same layout as the cloud
/// (gradients are taken w.r.t. the stored, pre-activation values).
using CloudGradients = GaussianCloud;

inline CloudGradients zero_gradients(std::size_t n) {
  CloudGradients g;
  g.mean.assign(n, {});
  g.log_scale.assign(n, {});
  g.rotation.assign(n, {});
  g.alpha_logit.assign(n, 0.0);
  g.color.assign(n, {});
  return g;
}

namespace detail {

/// Screen-space gradient of one splat: mean(2), conic(xx, xy, yy),
/// opacity, color(3).
struct SplatGrad {
  std::array<double, 9> v{};
  SplatGrad& operator+=(const SplatGrad& o) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
};

/// Back-to-front pass over one tile. Recovers each contributor's
/// transmittance by dividing out (1 - alpha) and tracks the color composited
/// behind it. Writes one SplatGrad per bin entry.
inline void backward_tile(const RenderContext& ctx, const Image& dl_dimage, std::size_t tile,
                          std::vector<SplatGrad>& entry_grads) {
  const auto& cfg = ctx.config;
  const int width = ctx.camera.width, height = ctx.camera.height;
  const TileRect r = tile_rect(ctx.bins, tile, width, height);
  const int tw = r.x1 - r.x0 + 1, th = r.y1 - r.y0 + 1;
  const auto local = static_cast<std::size_t>(tw * th);
  std::vector<double> trans(local), behind(local * 3);
  std::vector<std::uint32_t> last(local);
  for (int py = r.y0; py <= r.y1; ++py)
    for (int px = r.x0; px <= r.x1; ++px) {
      const auto l = static_cast<std::size_t>((py - r.y0) * tw + (px - r.x0));
      const auto p = static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px);
      trans[l] = ctx.output.transmittance.data[p];
      last[l] = ctx.last_entry[p];
      for (int c = 0; c < 3; ++c) behind[l * 3 + static_cast<std::size_t>(c)] = ctx.background[c];
    }

  const std::uint32_t begin = ctx.bins.offsets[tile], end = ctx.bins.offsets[tile + 1];
  for (std::uint32_t e = end; e-- > begin;) {
    const Splat2D& s = ctx.splats[ctx.bins.entries[e]];
    const std::uint32_t pos = e - begin + 1;
    SplatGrad acc;
    auto& g = acc.v;
    const int x0 = std::max(s.x0, r.x0), x1 = std::min(s.x1, r.x1);
    const int y0 = std::max(s.y0, r.y0), y1 = std::min(s.y1, r.y1);
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const auto l = static_cast<std::size_t>((py - r.y0) * tw + (px - r.x0));
        if (pos > last[l]) continue;
        PixelSample ps;
        if (!sample_splat(s, px, py, cfg, ps)) continue;
        const auto p = static_cast<std::size_t>(py) * static_cast<std::size_t>(width) + static_cast<std::size_t>(px);
        const double* dl = &dl_dimage.data[p * 3];
        double* bh = &behind[l * 3];
        const double t_i = trans[l] / (1.0 - ps.alpha);
        const double w = ps.alpha * t_i;
        g[6] += w * dl[0];
        g[7] += w * dl[1];
        g[8] += w * dl[2];
        const double dl_dalpha =
            t_i * ((s.color.x - bh[0]) * dl[0] + (s.color.y - bh[1]) * dl[1] + (s.color.z - bh[2]) * dl[2]);
        bh[0] = ps.alpha * s.color.x + (1.0 - ps.alpha) * bh[0];
        bh[1] = ps.alpha * s.color.y + (1.0 - ps.alpha) * bh[1];
        bh[2] = ps.alpha * s.color.z + (1.0 - ps.alpha) * bh[2];
        trans[l] = t_i;
        if (ps.clipped) continue;
        g[5] += dl_dalpha * ps.gauss;
        // alpha = o * exp(-q/2)  =>  dL/dq = -1/2 * dL/dalpha * alpha
        const double dl_dq = -0.5 * dl_dalpha * s.opacity * ps.gauss;
        g[0] -= dl_dq * 2.0 * (s.conic_xx * ps.dx + s.conic_xy * ps.dy);
        g[1] -= dl_dq * 2.0 * (s.conic_xy * ps.dx + s.conic_yy * ps.dy);
        g[2] += dl_dq * ps.dx * ps.dx;
        g[3] += dl_dq * 2.0 * ps.dx * ps.dy;
        g[4] += dl_dq * ps.dy * ps.dy;
      }
    }
    entry_grads[e] = acc;
  }
}

/// Chains a splat's screen-space gradient back to the stored parameters of
/// its Gaussian: conic -> 2D covariance -> (camera covariance, Jacobian) ->
/// (mean, Sigma) -> (log-scale, rotation params), plus the activations.
inline void backward_gaussian(const Gaussian3D& gs, const Splat2D& s, const SplatGrad& sg, const Camera& cam,
                              CloudGradients& out, std::size_t i) {
  const auto& v = sg.v;
  // Color clamp passes gradient only inside [0,1].
  for (int c = 0; c < 3; ++c) out.color[i][c] = (gs.color[c] >= 0.0 && gs.color[c] <= 1.0) ? v[static_cast<std::size_t>(6 + c)] : 0.0;
  out.alpha_logit[i] = v[5] * s.opacity * (1.0 - s.opacity);

  // conic -> 2D covariance: G_cov = -Q G_Q Q, off-diagonal of G_Q split in two.
  const double qa = s.conic_xx, qb = s.conic_xy, qc = s.conic_yy;
  const double ga = v[2], gb = 0.5 * v[3], gc = v[4];
  // T = G_Q * Q
  const double t00 = ga * qa + gb * qb, t01 = ga * qb + gb * qc;
  const double t10 = gb * qa + gc * qb, t11 = gb * qb + gc * qc;
  const double c00 = -(qa * t00 + qb * t10);
  const double c01 = -(qa * t01 + qb * t11);
  const double c11 = -(qb * t01 + qc * t11);

  const auto p = projection_terms(gs, cam);
  const Mat3& m = p.cam_cov;
  const double J[2][3] = {{p.j00, 0.0, p.j02}, {0.0, p.j11, p.j12}};
  const double G2[2][2] = {{c00, c01}, {c01, c11}};

  // G_M = J^T G2 J
  Mat3 gm;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double acc = 0.0;
      for (int r = 0; r < 2; ++r)
        for (int q = 0; q < 2; ++q) acc += J[r][a] * G2[r][q] * J[q][b];
      gm(a, b) = acc;
    }
  // G_J = 2 G2 J M
  double gj[2][3];
  for (int r = 0; r < 2; ++r)
    for (int b = 0; b < 3; ++b) {
      double acc = 0.0;
      for (int q = 0; q < 2; ++q)
        for (int k = 0; k < 3; ++k) acc += G2[r][q] * J[q][k] * m(k, b);
      gj[r][b] = 2.0 * acc;
    }

  const Vec3& t = p.t;
  const double iz = 1.0 / t.z, iz2 = iz * iz, iz3 = iz2 * iz;
  Vec3 gt;
  gt.x += gj[0][2] * (-cam.fx * iz2);
  gt.y += gj[1][2] * (-cam.fy * iz2);
  gt.z += gj[0][0] * (-cam.fx * iz2) + gj[0][2] * (2.0 * cam.fx * t.x * iz3) + gj[1][1] * (-cam.fy * iz2) +
          gj[1][2] * (2.0 * cam.fy * t.y * iz3);
  // Projected mean.
  gt.x += v[0] * cam.fx * iz;
  gt.z += v[0] * (-cam.fx * t.x * iz2);
  gt.y += v[1] * cam.fy * iz;
  gt.z += v[1] * (-cam.fy * t.y * iz2);
  const Mat3 wt = cam.rotation.transposed();
  out.mean[i] = wt * gt;

  // Sigma = A A^T with A = R diag(s).
  const Mat3 g_sigma = wt * gm * cam.rotation;
  const Quaternion q = quaternion_from_params(gs.rotation);
  const Mat3 rot = q.to_rotation();
  const Vec3 scale{std::exp(gs.log_scale.x), std::exp(gs.log_scale.y), std::exp(gs.log_scale.z)};
  Mat3 a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a(r, c) = rot(r, c) * scale[c];
  const Mat3 ga_mat = (g_sigma + g_sigma.transposed()) * a;
  Mat3 gr;
  for (int c = 0; c < 3; ++c) {
    double gs_c = 0.0;
    for (int r = 0; r < 3; ++r) {
      gs_c += ga_mat(r, c) * rot(r, c);
      gr(r, c) = ga_mat(r, c) * scale[c];
    }
    out.log_scale[i][c] = gs_c * scale[c];
  }

  // Rotation matrix -> unit quaternion (w, x, y, z).
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  const double gw = 2.0 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
  const double gx = 2.0 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2) +
                           z * gr(2, 0) + w * gr(2, 1) - 2.0 * x * gr(2, 2));
  const double gy = 2.0 * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) -
                           w * gr(2, 0) + z * gr(2, 1) - 2.0 * y * gr(2, 2));
  const double gz = 2.0 * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - 2.0 * z * gr(1, 1) +
                           y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1));
  // Through q = (1, r) / |(1, r)|.
  const double len = std::sqrt(1.0 + dot(gs.rotation, gs.rotation));
  const double proj = w * gw + x * gx + y * gy + z * gz;
  out.rotation[i] = {(gx - x * proj) / len, (gy - y * proj) / len, (gz - z * proj) / len};
}

}  // namespace detail

/// Gradient of a scalar loss w.r.t. every cloud parameter given dL/dimage
/// for a forward render held in `ctx`. Requires max_alpha < 1 so that each
/// contributor's transmittance can be recovered.
inline CloudGradients render_backward(const RenderContext& ctx, const GaussianCloud& cloud, const Image& dl_dimage) {
  if (dl_dimage.width != ctx.camera.width || dl_dimage.height != ctx.camera.height || dl_dimage.channels != 3)
    throw ConfigError("render_backward: dL/dimage shape does not match the render");
  if (!(ctx.config.max_alpha < 1.0)) throw ConfigError("render_backward: max_alpha must be below 1");

  std::vector<detail::SplatGrad> entry_grads(ctx.bins.entries.size());
  parallel_for(ctx.bins.tile_count(), ctx.config.threads,
               [&](std::size_t tile) { detail::backward_tile(ctx, dl_dimage, tile, entry_grads); });

  // Fixed-order reduction (tile order, then bin order) keeps the result
  // independent of the thread count.
  std::vector<detail::SplatGrad> splat_grads(ctx.splats.size());
  for (std::size_t e = 0; e < ctx.bins.entries.size(); ++e) splat_grads[ctx.bins.entries[e]] += entry_grads[e];

  CloudGradients out = zero_gradients(cloud.size());
  parallel_for(ctx.splats.size(), ctx.config.threads, [&](std::size_t k) {
    const Splat2D& s = ctx.splats[k];
    detail::backward_gaussian(cloud[s.source], s, splat_grads[k], ctx.camera, out, s.source);
  });
  return out;
}

/// Gradient as a UV tensor on the map's layout (zero at culled Gaussians;
/// invalid pixels carry nothing by construction).
inline UVOffsets gradients_to_uv(const CloudGradients& g, const std::shared_ptr<const UVLayout>& layout) {
  return retag<OffsetTag>(scatter_cloud(g, layout));
}

/// Renders `map` and back-propagates dL/dimage into UV layout.
inline UVOffsets render_backward(const UVGaussianMap& map, const Camera& cam, const Vec3& background,
                                 const Image& dl_dimage, const RenderConfig& cfg = {}) {
  const GaussianCloud cloud = to_cloud(map);
  const RenderContext ctx = render_forward(cloud, cam, background, cfg);
  return gradients_to_uv(render_backward(ctx, cloud, dl_dimage), map.layout());
}

}  // namespace uvavatar

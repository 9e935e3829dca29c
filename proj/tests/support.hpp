#pragma once

// Shared test fixtures and independent oracles. The oracles are written
// against Eigen and plain loops, deliberately not reusing library code
// paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uvavatar/camera.hpp"
#include "uvavatar/image.hpp"
#include "uvavatar/render.hpp"
#include "uvavatar/render_backward.hpp"
#include "uvavatar/rng.hpp"
#include "uvavatar/uv_map.hpp"

namespace testing_support {

using namespace uvavatar;

inline Camera test_camera(int w, int h, double az = 0.0, double el = 0.0, double distance = 2.0, double fov = 40.0) {
  return orbit_camera(az, el, distance, w, h, fov);
}

/// Random Gaussians around the origin, visible from a test_camera.
inline GaussianCloud random_cloud(DeterministicRng& rng, std::size_t n, double spread = 0.5,
                                  double log_scale_lo = -3.5, double log_scale_hi = -2.0) {
  GaussianCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian3D g;
    g.mean = {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
    g.log_scale = {rng.uniform(log_scale_lo, log_scale_hi), rng.uniform(log_scale_lo, log_scale_hi),
                   rng.uniform(log_scale_lo, log_scale_hi)};
    g.rotation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    g.alpha_logit = rng.uniform(-2.0, 2.5);
    g.color = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    c.push_back(g);
  }
  return c;
}

inline Eigen::Matrix3d eigen_rotation(const Vec3& r) {
  Eigen::Quaterniond q(1.0, r.x, r.y, r.z);
  q.normalize();
  return q.toRotationMatrix();
}

inline Eigen::Matrix3d eigen_covariance(const Vec3& log_scale, const Vec3& r) {
  const Eigen::Matrix3d R = eigen_rotation(r);
  const Eigen::Vector3d s(std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z));
  const Eigen::Matrix3d A = R * s.asDiagonal();
  return A * A.transpose();
}

inline Eigen::Matrix3d eigen_mat(const Mat3& m) {
  Eigen::Matrix3d e;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) e(i, j) = m(i, j);
  return e;
}

/// Naive reference renderer: project with Eigen, global sort by (depth,
/// index), then for every pixel walk all splats front to back.
inline Image naive_render(const GaussianCloud& cloud, const Camera& cam, const Vec3& bg, const RenderConfig& cfg = {}) {
  struct S {
    double mx, my, a, b, c, depth, opacity;
    Eigen::Vector3d color;
    std::size_t index;
  };
  const Eigen::Matrix3d W = eigen_mat(cam.rotation);
  const Eigen::Vector3d tc(cam.translation.x, cam.translation.y, cam.translation.z);
  std::vector<S> splats;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Gaussian3D g = cloud[i];
    const Eigen::Vector3d t = W * Eigen::Vector3d(g.mean.x, g.mean.y, g.mean.z) + tc;
    if (!(t.z() > cam.near_plane) || !(t.z() < cam.far_plane)) continue;
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / t.z(), 0, -cam.fx * t.x() / (t.z() * t.z()), 0, cam.fy / t.z(), -cam.fy * t.y() / (t.z() * t.z());
    Eigen::Matrix2d cov = J * W * eigen_covariance(g.log_scale, g.rotation) * W.transpose() * J.transpose();
    cov += cfg.lowpass * Eigen::Matrix2d::Identity();
    if (!(cov.determinant() > 0.0)) continue;
    const Eigen::Matrix2d conic = cov.inverse();
    S s{cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy, conic(0, 0), conic(0, 1), conic(1, 1),
        t.z(), 1.0 / (1.0 + std::exp(-g.alpha_logit)),
        Eigen::Vector3d(std::clamp(g.color.x, 0.0, 1.0), std::clamp(g.color.y, 0.0, 1.0), std::clamp(g.color.z, 0.0, 1.0)),
        i};
    splats.push_back(s);
  }
  std::sort(splats.begin(), splats.end(),
            [](const S& l, const S& r) { return l.depth != r.depth ? l.depth < r.depth : l.index < r.index; });
  Image img(cam.width, cam.height, 3);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double T = 1.0;
      Eigen::Vector3d C = Eigen::Vector3d::Zero();
      for (const auto& s : splats) {
        const double dx = x + 0.5 - s.mx, dy = y + 0.5 - s.my;
        const double q = s.a * dx * dx + 2 * s.b * dx * dy + s.c * dy * dy;
        if (q > cfg.sigma_cutoff * cfg.sigma_cutoff) continue;
        double alpha = s.opacity * std::exp(-0.5 * q);
        if (alpha < cfg.min_alpha) continue;
        alpha = std::min(alpha, cfg.max_alpha);
        C += T * alpha * s.color;
        T *= 1.0 - alpha;
        if (T < cfg.min_transmittance) break;
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = C[c] + T * bg[c];
    }
  }
  return img;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// Central-difference derivative of f at x along coordinate `i` of `params`.
inline double central_difference(const std::function<double()>& f, double& param, double h) {
  const double saved = param;
  param = saved + h;
  const double fp = f();
  param = saved - h;
  const double fm = f();
  param = saved;
  return (fp - fm) / (2.0 * h);
}

/// Relative error with an absolute floor near zero.
inline bool gradients_match(double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  if (diff < abs_floor) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel;
}

/// Fixed random projection of an image onto a scalar: L = sum w_i * I_i.
inline Image random_weights(DeterministicRng& rng, int w, int h, int ch = 3) {
  Image g(w, h, ch);
  for (auto& v : g.data) v = rng.uniform(-1.0, 1.0);
  return g;
}

inline double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

/// Rasterizer settings with every hard gate pushed out of reach (no alpha
/// threshold, no early termination, negligible cutoff step), so finite
/// differences never straddle a discontinuity.
inline RenderConfig smooth_config(unsigned threads = 1) {
  RenderConfig cfg;
  cfg.sigma_cutoff = 8.0;
  cfg.min_alpha = 0.0;
  cfg.min_transmittance = 0.0;
  cfg.threads = threads;
  return cfg;
}

/// random_cloud for a test_camera at azimuth/elevation 0 (depth = distance
/// - z), redrawn until all depths differ by at least `min_gap` so
/// perturbations cannot reorder splats.
inline GaussianCloud separated_cloud(DeterministicRng& rng, std::size_t n, double min_gap = 1e-3) {
  for (;;) {
    GaussianCloud c = random_cloud(rng, n);
    std::vector<double> z;
    for (const auto& m : c.mean) z.push_back(m.z);
    std::sort(z.begin(), z.end());
    bool ok = true;
    for (std::size_t i = 1; i < z.size(); ++i) ok = ok && z[i] - z[i - 1] >= min_gap;
    if (ok) return c;
  }
}

inline double& cloud_param(GaussianCloud& c, std::size_t i, int p) {
  if (p < 3) return c.mean[i][p];
  if (p < 6) return c.log_scale[i][p - 3];
  if (p < 9) return c.rotation[i][p - 6];
  if (p == 9) return c.alpha_logit[i];
  return c.color[i][p - 10];
}

inline double cloud_param(const GaussianCloud& c, std::size_t i, int p) {
  return cloud_param(const_cast<GaussianCloud&>(c), i, p);
}

struct GradientReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;  // over entries above the absolute floor
};

inline void record(GradientReport& r, double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-6) {
  ++r.checked;
  if (!gradients_match(analytic, numeric, rel, abs_floor)) ++r.failed;
  const double diff = std::abs(analytic - numeric);
  if (diff >= abs_floor) r.worst_rel = std::max(r.worst_rel, diff / std::max(std::abs(analytic), std::abs(numeric)));
}

/// Central differences (step h) of L = <weights, render(cloud)> against the
/// analytic backward pass, over every parameter of every Gaussian.
inline GradientReport check_render_gradients(const GaussianCloud& cloud, const Camera& cam, const Vec3& bg,
                                             const Image& weights, const RenderConfig& cfg, double h = 1e-4) {
  const RenderContext ctx = render_forward(cloud, cam, bg, cfg);
  const CloudGradients g = render_backward(ctx, cloud, weights);
  GaussianCloud probe = cloud;
  const auto loss = [&] { return dot(weights, render(probe, cam, bg, cfg).image); };
  GradientReport r;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int p = 0; p < 13; ++p) {
      const double numeric = central_difference(loss, cloud_param(probe, i, p), h);
      record(r, cloud_param(g, i, p), numeric);
    }
  return r;
}

/// Unique scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("uvavatar_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support

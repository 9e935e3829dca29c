#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "uvavatar/head_mesh.hpp"
#include "uvavatar/rng.hpp"

namespace uvavatar {

struct TestHeadOptions {
  int longitude_segments = 64;
  int latitude_segments = 40;
  int identity_count = 100;
  int expression_count = 50;
};

namespace detail {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

/// Procedural ellipsoidal head (meters, face toward +z, up +y) standing in
/// for a licensed parametric head model. Latitude/longitude grid with a
/// cylindrical UV unwrap: u follows longitude (seam at the back), v runs
/// from the crown (v ~ 0) to the open bottom edge; there is no neck.
/// All stored values are exactly representable in f32 so the model
/// survives a UVHM round trip unchanged.
inline HeadMeshModel make_test_head(std::uint64_t seed, const TestHeadOptions& opt = {}) {
  using detail::round_f32;
  using detail::smoothstep;
  constexpr double kPi = std::numbers::pi;
  constexpr double kMaxPolar = 0.78 * kPi;
  const Vec3 radii{0.075, 0.105, 0.09};

  DeterministicRng rng(seed * 0x9E3779B97F4A7C15ull + 0x5EEDull);
  HeadMeshModel m;
  const int nlon = opt.longitude_segments, nlat = opt.latitude_segments;
  const auto cols = static_cast<std::size_t>(nlon + 1);
  const std::size_t n = cols * static_cast<std::size_t>(nlat + 1);

  std::vector<double> polar(n), azimuth(n);  // azimuth 0 = facing +z
  std::vector<Vec3> normals(n);
  m.template_vertices.resize(n);
  m.uvs.resize(n);
  for (int j = 0; j <= nlat; ++j) {
    for (int i = 0; i <= nlon; ++i) {
      const std::size_t v = static_cast<std::size_t>(j) * cols + static_cast<std::size_t>(i);
      const double theta = kMaxPolar * j / nlat;
      const double phi = 2.0 * kPi * i / nlon - kPi;
      const Vec3 dir{std::sin(theta) * std::sin(phi), std::cos(theta), std::sin(theta) * std::cos(phi)};
      polar[v] = theta;
      azimuth[v] = phi;
      // Flatten the back of the head slightly and push the face forward.
      const double front = std::max(0.0, dir.z);
      const Vec3 p{radii.x * dir.x, radii.y * dir.y, radii.z * dir.z * (1.0 + 0.08 * front)};
      m.template_vertices[v] = {round_f32(p.x), round_f32(p.y), round_f32(p.z)};
      normals[v] = normalized(Vec3{dir.x / radii.x, dir.y / radii.y, dir.z / radii.z});
      m.uvs[v] = {round_f32(0.01 + 0.98 * i / nlon), round_f32(0.01 + 0.98 * j / nlat)};
    }
  }
  for (int j = 0; j < nlat; ++j) {
    for (int i = 0; i < nlon; ++i) {
      const auto a = static_cast<std::uint32_t>(j * (nlon + 1) + i);
      const auto b = a + 1;
      const auto c = a + static_cast<std::uint32_t>(nlon + 1);
      const auto d = c + 1;
      m.triangles.push_back({a, c, b});
      m.triangles.push_back({b, c, d});
    }
  }

  // Smooth random fields: products of low-order harmonics in (polar,
  // azimuth), periodic in azimuth so the seam stays closed.
  struct Harmonic {
    double a, lat_freq, lat_phase;
    int lon_freq;
    double lon_phase;
  };
  auto random_field = [&](int terms) {
    std::vector<Harmonic> h;
    for (int t = 0; t < terms; ++t)
      h.push_back({rng.normal(), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2.0 * kPi),
                   static_cast<int>(rng.below(4)), rng.uniform(0.0, 2.0 * kPi)});
    return h;
  };
  auto eval_field = [](const std::vector<Harmonic>& h, double theta, double phi) {
    double s = 0.0;
    for (const auto& t : h) s += t.a * std::sin(t.lat_freq * theta + t.lat_phase) * std::cos(t.lon_freq * phi + t.lon_phase);
    return s / std::sqrt(static_cast<double>(h.size()));
  };

  m.identity_count = opt.identity_count;
  m.identity_basis.assign(n * 3 * static_cast<std::size_t>(opt.identity_count), 0.0);
  for (int k = 0; k < opt.identity_count; ++k) {
    const double amp = 0.004 / (1.0 + k / 4.0);
    const auto field = random_field(4);
    for (std::size_t v = 0; v < n; ++v) {
      const double s = amp * eval_field(field, polar[v], azimuth[v]);
      for (int c = 0; c < 3; ++c)
        m.identity_basis[(v * 3 + static_cast<std::size_t>(c)) * static_cast<std::size_t>(opt.identity_count) +
                         static_cast<std::size_t>(k)] = round_f32(s * normals[v][c]);
    }
  }

  // Expression displacements live on the face: a window around the front
  // of the head between brow and chin.
  m.expression_count = opt.expression_count;
  m.expression_basis.assign(n * 3 * static_cast<std::size_t>(opt.expression_count), 0.0);
  for (int k = 0; k < opt.expression_count; ++k) {
    const double amp = 0.006 / (1.0 + k / 6.0);
    const auto normal_field = random_field(3);
    const auto tangent_field = random_field(3);
    for (std::size_t v = 0; v < n; ++v) {
      const double window = std::exp(-azimuth[v] * azimuth[v] / (2.0 * 0.6 * 0.6)) *
                            smoothstep(0.25 * kPi, 0.4 * kPi, polar[v]) *
                            (1.0 - smoothstep(0.68 * kPi, 0.76 * kPi, polar[v]));
      if (window < 1e-6) continue;
      const double sn = amp * window * eval_field(normal_field, polar[v], azimuth[v]);
      const double st = 0.5 * amp * window * eval_field(tangent_field, polar[v], azimuth[v]);
      const Vec3 d = normals[v] * sn + Vec3{0.0, st, 0.0};
      for (int c = 0; c < 3; ++c)
        m.expression_basis[(v * 3 + static_cast<std::size_t>(c)) * static_cast<std::size_t>(opt.expression_count) +
                           static_cast<std::size_t>(k)] = round_f32(d[c]);
    }
  }

  // Jaw: front-lower region below a latitude line, hinged near the ears.
  m.jaw_pivot = {0.0, round_f32(-0.02), round_f32(-0.01)};
  m.jaw_axis = {1.0, 0.0, 0.0};
  m.jaw_weights.resize(n);
  m.face_region.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    const double front = std::cos(azimuth[v]);
    m.jaw_weights[v] = round_f32(smoothstep(0.58 * kPi, 0.64 * kPi, polar[v]) * smoothstep(0.0, 0.5, front));
    m.face_region[v] = (std::abs(azimuth[v]) < 1.2 && polar[v] > 0.3 * kPi) ? 1.0 : 0.0;
  }
  return m;
}

}  // namespace uvavatar

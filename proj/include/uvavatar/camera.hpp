#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "json.hpp"

#include "uvavatar/error.hpp"
#include "uvavatar/math.hpp"

namespace uvavatar {

/// Pinhole camera. Extrinsics map world to camera: x_cam = R x_world + t.
/// Camera frame: +x right, +y down, +z forward. Pixel (i, j) has its center
/// at image coordinates (i + 0.5, j + 0.5).
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Mat3 rotation = Mat3::identity();
  Vec3 translation;
  double near_plane = 0.01;
  double far_plane = 100.0;

  /// Throws ConfigError when intrinsics, clipping planes, or rotation are invalid.
  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw ConfigError("camera: image size must be positive");
    if (!(near_plane > 0.0) || !(near_plane < far_plane)) throw ConfigError("camera: need 0 < near < far");
    const Mat3 rrt = rotation * rotation.transposed();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (std::abs(rrt(i, j) - (i == j ? 1.0 : 0.0)) > 1e-6)
          throw ConfigError("camera: rotation is not orthonormal");
    for (double v : rotation.m)
      if (!std::isfinite(v)) throw ConfigError("camera: non-finite rotation");
    for (int i = 0; i < 3; ++i)
      if (!std::isfinite(translation[i])) throw ConfigError("camera: non-finite translation");
  }

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
};

/// Camera at `distance` from `target`, looking at it, world +y up.
/// Azimuth and elevation in degrees; azimuth 0 / elevation 0 views the
/// +z side of the target.
inline Camera orbit_camera(double azimuth_deg, double elevation_deg, double distance, int width, int height,
                           double fov_y_deg = 20.0, Vec3 target = {}) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double az = azimuth_deg * kDeg, el = elevation_deg * kDeg;
  const Vec3 center = target + Vec3{std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)} * distance;
  const Vec3 forward = normalized(target - center);
  Vec3 right = cross(forward, Vec3{0.0, 1.0, 0.0});
  if (norm(right) < 1e-9) right = {1.0, 0.0, 0.0};
  right = normalized(right);
  const Vec3 down = cross(forward, right);
  Camera cam;
  cam.rotation = Mat3::from_rows(right, down, forward);
  cam.translation = -(cam.rotation * center);
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * kDeg);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.near_plane = 0.01;
  cam.far_plane = 100.0;
  return cam;
}

inline void to_json(nlohmann::json& j, const Camera& c) {
  j = nlohmann::json{{"fx", c.fx},         {"fy", c.fy},         {"cx", c.cx},
                     {"cy", c.cy},         {"width", c.width},   {"height", c.height},
                     {"R", c.rotation.m},  {"t", {c.translation.x, c.translation.y, c.translation.z}},
                     {"near", c.near_plane}, {"far", c.far_plane}};
}

inline void from_json(const nlohmann::json& j, Camera& c) {
  try {
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw ConfigError("camera: R must have 9 and t 3 entries");
    std::copy(r.begin(), r.end(), c.rotation.m.begin());
    c.translation = {t[0], t[1], t[2]};
    c.near_plane = j.value("near", 0.01);
    c.far_plane = j.value("far", 100.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("camera json: ") + e.what());
  }
}

}  // namespace uvavatar

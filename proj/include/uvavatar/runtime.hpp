#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "uvavatar/asset.hpp"
#include "uvavatar/camera.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/head_mesh.hpp"
#include "uvavatar/optimize.hpp"
#include "uvavatar/render.hpp"

namespace uvavatar {

/// Orbit parameters (degrees, world units) around the origin.
struct OrbitParams {
  double azimuth = 0.0;
  double elevation = 0.0;
  double distance = 0.8;
  std::optional<int> width;   // default: the asset's default camera
  std::optional<int> height;
  double fov_y = 20.0;
};

/// Everything needed to render one animation frame.
struct PoseRequest {
  std::vector<double> beta_exp;
  Vec3 beta_jaw;
  std::optional<Camera> camera;
  std::optional<OrbitParams> orbit;
  std::optional<Vec3> background;
};

namespace detail {

inline double finite_number(const nlohmann::json& j, const char* what) {
  if (!j.is_number()) throw ConfigError(std::string("pose: ") + what + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(std::string("pose: ") + what + " is not finite");
  return v;
}

inline Vec3 vec3_field(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string("pose: ") + what + " needs 3 numbers");
  return {finite_number(j[0], what), finite_number(j[1], what), finite_number(j[2], what)};
}

}  // namespace detail

/// Parses and validates a pose. Either "camera" (full pinhole camera) or
/// "orbit" may be given; with neither, the asset's default camera is used.
inline PoseRequest pose_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("pose: expected a JSON object");
  PoseRequest p;
  if (j.contains("beta_exp")) {
    const auto& b = j.at("beta_exp");
    if (!b.is_array()) throw ConfigError("pose: beta_exp must be an array");
    for (const auto& v : b) p.beta_exp.push_back(detail::finite_number(v, "beta_exp"));
  }
  if (j.contains("beta_jaw")) p.beta_jaw = detail::vec3_field(j.at("beta_jaw"), "beta_jaw");
  if (j.contains("camera") && j.contains("orbit")) throw ConfigError("pose: give either camera or orbit, not both");
  if (j.contains("camera")) {
    Camera c = j.at("camera").get<Camera>();
    c.validate();
    p.camera = c;
  }
  if (j.contains("orbit")) {
    const auto& o = j.at("orbit");
    if (!o.is_object()) throw ConfigError("pose: orbit must be an object");
    OrbitParams op;
    if (o.contains("azimuth")) op.azimuth = detail::finite_number(o["azimuth"], "orbit.azimuth");
    if (o.contains("elevation")) op.elevation = detail::finite_number(o["elevation"], "orbit.elevation");
    if (o.contains("distance")) op.distance = detail::finite_number(o["distance"], "orbit.distance");
    if (o.contains("fov_y")) op.fov_y = detail::finite_number(o["fov_y"], "orbit.fov_y");
    if (o.contains("width")) op.width = static_cast<int>(detail::finite_number(o["width"], "orbit.width"));
    if (o.contains("height")) op.height = static_cast<int>(detail::finite_number(o["height"], "orbit.height"));
    if (!(op.distance > 0.0)) throw ConfigError("pose: orbit.distance must be positive");
    if (!(op.fov_y > 0.0 && op.fov_y < 180.0)) throw ConfigError("pose: orbit.fov_y must lie in (0, 180)");
    if ((op.width && (*op.width < 1 || *op.width > 8192)) || (op.height && (*op.height < 1 || *op.height > 8192)))
      throw ConfigError("pose: orbit image size must lie in [1, 8192]");
    p.orbit = op;
  }
  if (j.contains("background")) {
    const Vec3 bg = detail::vec3_field(j.at("background"), "background");
    for (int c = 0; c < 3; ++c)
      if (bg[c] < 0.0 || bg[c] > 1.0) throw ConfigError("pose: background must lie in [0, 1]");
    p.background = bg;
  }
  return p;
}

inline nlohmann::json pose_to_json(const PoseRequest& p) {
  nlohmann::json j{{"beta_exp", p.beta_exp}, {"beta_jaw", {p.beta_jaw.x, p.beta_jaw.y, p.beta_jaw.z}}};
  if (p.camera) j["camera"] = *p.camera;
  if (p.orbit) {
    nlohmann::json o{{"azimuth", p.orbit->azimuth},
                     {"elevation", p.orbit->elevation},
                     {"distance", p.orbit->distance},
                     {"fov_y", p.orbit->fov_y}};
    if (p.orbit->width) o["width"] = *p.orbit->width;
    if (p.orbit->height) o["height"] = *p.orbit->height;
    j["orbit"] = o;
  }
  if (p.background) j["background"] = {p.background->x, p.background->y, p.background->z};
  return j;
}

/// Network-free animation of a loaded avatar. Immutable after
/// construction, so one instance may serve concurrent renders.
class AvatarRuntime {
 public:
  AvatarRuntime(AvatarAsset asset, std::shared_ptr<const HeadMeshModel> mesh)
      : asset_(std::move(asset)),
        builder_(std::move(mesh), asset_.layout->height, asset_.layout->width, asset_.beta_id, asset_.init) {
    if (!(*builder_.layout() == *asset_.layout))
      throw ConfigError("avatar: the mesh model's UV chart does not match the asset");
    asset_.rect.validate();
  }

  /// Loads the asset and the mesh model it references, checking the hash.
  static AvatarRuntime load(const std::filesystem::path& asset_path) {
    AvatarAsset asset = load_asset(asset_path);
    std::filesystem::path mesh_path(asset.mesh_path);
    if (mesh_path.is_relative()) mesh_path = asset_path.parent_path() / mesh_path;
    const auto bytes = read_file_bytes(mesh_path);
    if (fnv1a64(bytes) != asset.mesh_hash)
      throw IoError("avatar: mesh model " + mesh_path.string() + " does not match the hash stored in the asset");
    auto mesh = std::make_shared<const HeadMeshModel>(parse_mesh_model(bytes));
    return AvatarRuntime(std::move(asset), std::move(mesh));
  }

  const AvatarAsset& asset() const { return asset_; }
  const MapBuilder& builder() const { return builder_; }
  int blendmap_count() const { return asset_.blendmap_count(); }
  int expression_count() const { return builder_.mesh()->expression_count; }
  Stage stage() const { return asset_.rect.blend.empty() ? Stage::Global : Stage::Blend; }

  /// Expression coefficients padded with zeros to the model's count.
  std::vector<double> expression(const PoseRequest& pose) const {
    const auto k = static_cast<std::size_t>(expression_count());
    if (pose.beta_exp.size() > k)
      throw ConfigError("pose: " + std::to_string(pose.beta_exp.size()) + " expression coefficients, model has " +
                        std::to_string(k));
    if (stage() == Stage::Blend && !pose.beta_exp.empty() && pose.beta_exp.size() < static_cast<std::size_t>(blendmap_count()))
      throw ConfigError("pose: need at least " + std::to_string(blendmap_count()) + " expression coefficients");
    std::vector<double> beta = pose.beta_exp;
    beta.resize(k, 0.0);
    return beta;
  }

  Camera camera(const PoseRequest& pose) const {
    if (pose.camera) return *pose.camera;
    if (!pose.orbit) return asset_.default_camera;
    const auto& o = *pose.orbit;
    return orbit_camera(o.azimuth, o.elevation, o.distance, o.width.value_or(asset_.default_camera.width),
                        o.height.value_or(asset_.default_camera.height), o.fov_y);
  }

  UVGaussianMap assemble_pose(const PoseRequest& pose) const {
    const auto beta = expression(pose);
    return assemble(builder_.build(beta, pose.beta_jaw), asset_.rect, beta, stage());
  }

  /// Rebuild U_init for the pose, apply the rectification, render.
  RenderOutput animate(const PoseRequest& pose, const RenderConfig& cfg = {}) const {
    const Camera cam = camera(pose);
    cam.validate();
    return render(assemble_pose(pose), cam, pose.background.value_or(asset_.background), cfg);
  }

  nlohmann::json meta() const {
    return nlohmann::json{{"D", blendmap_count()},
                          {"uv_dims", {asset_.layout->height, asset_.layout->width}},
                          {"gaussians", asset_.layout->valid_count()},
                          {"expression_count", expression_count()},
                          {"default_camera", asset_.default_camera},
                          {"background", {asset_.background.x, asset_.background.y, asset_.background.z}}};
  }

 private:
  AvatarAsset asset_;
  MapBuilder builder_;
};

/// Pose sequence file: a JSON array of poses.
inline std::vector<PoseRequest> poses_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("pose sequence: expected a JSON array");
  std::vector<PoseRequest> out;
  for (const auto& p : j) out.push_back(pose_from_json(p));
  return out;
}

}  // namespace uvavatar

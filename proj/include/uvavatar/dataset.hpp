#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "uvavatar/camera.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/head_mesh.hpp"
#include "uvavatar/image.hpp"

namespace uvavatar {

enum class Split { Train, Eval, All };

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  if (s == "all") return Split::All;
  throw ConfigError("unknown split '" + s + "' (expected train, eval, or all)");
}

/// One training observation as listed in a manifest.
struct FrameRecord {
  std::string image_path;
  std::string mask_path;
  std::vector<double> beta_exp;
  Vec3 beta_jaw;
  Camera camera;
  std::string split;  // "train", "eval", or empty (positional 90/10 split)
};

/// A decoded frame.
struct Frame {
  Image image;  // RGB
  Image mask;   // 1 channel, 1 = foreground
  std::vector<double> beta_exp;
  Vec3 beta_jaw;
  Camera camera;
};

/// Frames of one subject plus the mesh model and the shared identity code.
struct Dataset {
  std::shared_ptr<const HeadMeshModel> mesh;
  std::string mesh_path;
  std::vector<double> beta_id;
  std::vector<Frame> frames;
};

struct Manifest {
  std::string mesh_model;
  std::vector<double> beta_id;
  std::vector<FrameRecord> frames;
};

inline void to_json(nlohmann::json& j, const FrameRecord& f) {
  j = nlohmann::json{{"image", f.image_path},
                     {"mask", f.mask_path},
                     {"beta_exp", f.beta_exp},
                     {"beta_jaw", {f.beta_jaw.x, f.beta_jaw.y, f.beta_jaw.z}},
                     {"camera", f.camera}};
  if (!f.split.empty()) j["split"] = f.split;
}

inline void from_json(const nlohmann::json& j, FrameRecord& f) {
  f.image_path = j.at("image").get<std::string>();
  f.mask_path = j.at("mask").get<std::string>();
  f.beta_exp = j.at("beta_exp").get<std::vector<double>>();
  const auto jaw = j.value("beta_jaw", std::vector<double>{0.0, 0.0, 0.0});
  if (jaw.size() != 3) throw ConfigError("manifest: beta_jaw needs 3 values");
  f.beta_jaw = {jaw[0], jaw[1], jaw[2]};
  f.camera = j.at("camera").get<Camera>();
  f.split = j.value("split", std::string{});
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
  return nlohmann::json{{"mesh_model", m.mesh_model}, {"beta_id", m.beta_id}, {"frames", m.frames}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.mesh_model = j.at("mesh_model").get<std::string>();
    m.beta_id = j.value("beta_id", std::vector<double>{});
    m.frames = j.at("frames").get<std::vector<FrameRecord>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Indices of the frames in `split`. Frames carrying an explicit split tag
/// use it; otherwise the first 90% (rounded up) are training frames.
inline std::vector<std::size_t> split_indices(const std::vector<FrameRecord>& frames, Split split) {
  std::vector<std::size_t> out;
  const bool tagged = std::any_of(frames.begin(), frames.end(), [](const auto& f) { return !f.split.empty(); });
  const auto train_count = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(frames.size())));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool is_train = tagged ? frames[i].split != "eval" : i < train_count;
    if (split == Split::All || (split == Split::Train) == is_train) out.push_back(i);
  }
  return out;
}

/// Loads the mesh model and decodes the selected frames. Relative paths
/// resolve against the manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path, Split split) {
  const Manifest m = manifest_from_json(read_json(manifest_path));
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  Dataset d;
  d.mesh_path = resolve(m.mesh_model).string();
  d.mesh = std::make_shared<const HeadMeshModel>(load_mesh_model(d.mesh_path));
  d.beta_id = m.beta_id;
  if (d.beta_id.empty()) d.beta_id.assign(static_cast<std::size_t>(d.mesh->identity_count), 0.0);
  for (auto i : split_indices(m.frames, split)) {
    const auto& rec = m.frames[i];
    rec.camera.validate();
    Frame f;
    f.image = read_png(resolve(rec.image_path));
    f.mask = read_png(resolve(rec.mask_path), /*want_gray=*/true);
    for (auto& v : f.mask.data) v = v >= 0.5 ? 1.0 : 0.0;
    if (f.image.width != rec.camera.width || f.image.height != rec.camera.height || f.mask.width != f.image.width ||
        f.mask.height != f.image.height)
      throw ConfigError("manifest frame " + std::to_string(i) + ": image/mask size does not match its camera");
    f.beta_exp = rec.beta_exp;
    f.beta_jaw = rec.beta_jaw;
    f.camera = rec.camera;
    d.frames.push_back(std::move(f));
  }
  return d;
}

}  // namespace uvavatar

#pragma once

// Avatar asset (UVGA) file: the tensor container with
//   UV_DIMS     u32 [2]            H, W
//   MASK        u8  [ceil(H*W/8)]  validity bits, row-major, LSB first
//   BETA_ID     f32 [K_id]
//   BASE        f32 [N, 13]        U_init at the neutral expression
//   MEAN_OFFSET f32 [N, 13]
//   GLOBAL      f32 [N, 13]
//   BLEND       f32 [D, N, 13]     D may be 0 (Stage 2 not run)
//   META        u8  [len]          JSON: mesh reference and hash, init
//                                  constants, D, default camera, background,
//                                  config hash

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "uvavatar/camera.hpp"
#include "uvavatar/error.hpp"
#include "uvavatar/optimize.hpp"
#include "uvavatar/tensor_file.hpp"
#include "uvavatar/uv_map.hpp"

namespace uvavatar {

struct AvatarAsset {
  std::string mesh_path;  // as stored; relative paths resolve against the asset's directory
  std::uint64_t mesh_hash = 0;
  std::shared_ptr<const UVLayout> layout;
  InitConstants init;
  std::vector<double> beta_id;
  UVGaussianMap base;
  RectificationSet rect;
  Camera default_camera;
  Vec3 background{1.0, 1.0, 1.0};
  std::string config_hash;

  int blendmap_count() const { return rect.blendmap_count(); }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw IoError("asset: malformed hash '" + s + "'");
  return std::stoull(s, nullptr, 16);
}

/// Hash of a mesh-model file's bytes, used to tie assets to their mesh.
inline std::uint64_t mesh_file_hash(const std::filesystem::path& path) { return fnv1a64(read_file_bytes(path)); }

inline std::string config_hash(const OptimConfig& cfg) {
  const std::string dump = nlohmann::json(cfg).dump();
  return hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(dump.data()), dump.size())));
}

/// Camera framing the test-head-sized avatar from the front.
inline Camera default_avatar_camera(int size = 512) { return orbit_camera(0.0, 0.0, 0.8, size, size); }

/// Asset holding `rect` on the builder's chart. The base map is U_init at
/// the neutral expression.
inline AvatarAsset make_asset(const MapBuilder& builder, std::string mesh_path, std::uint64_t mesh_hash,
                              RectificationSet rect, const OptimConfig& cfg, Camera default_camera = default_avatar_camera()) {
  rect.validate();
  if (!rect.global.same_layout(UVOffsets(builder.layout())))
    throw ConfigError("asset: rectification layout does not match the chart");
  AvatarAsset a;
  a.mesh_path = std::move(mesh_path);
  a.mesh_hash = mesh_hash;
  a.layout = builder.layout();
  a.init = builder.init();
  a.beta_id = builder.beta_id();
  const std::vector<double> neutral(static_cast<std::size_t>(builder.mesh()->expression_count), 0.0);
  a.base = builder.build(neutral, {});
  a.rect = std::move(rect);
  a.default_camera = default_camera;
  a.background = cfg.background;
  a.config_hash = config_hash(cfg);
  return a;
}

inline std::vector<std::uint8_t> serialize_asset(const AvatarAsset& a) {
  const auto& layout = *a.layout;
  const std::uint64_t n = layout.valid_count();
  const auto d = static_cast<std::uint64_t>(a.rect.blendmap_count());
  TensorFile f;
  f.magic = {'U', 'V', 'G', 'A'};
  f.version = 1;

  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(layout.height), static_cast<std::uint32_t>(layout.width)};
  f.tensors.push_back(Tensor::u32("UV_DIMS", {2}, dims));
  std::vector<std::uint8_t> bits((layout.mask.size() + 7) / 8, 0);
  for (std::size_t p = 0; p < layout.mask.size(); ++p)
    if (layout.mask[p]) bits[p / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
  f.tensors.push_back(Tensor::u8("MASK", {bits.size()}, bits));
  f.tensors.push_back(Tensor::f32("BETA_ID", {a.beta_id.size()}, a.beta_id));
  f.tensors.push_back(Tensor::f32("BASE", {n, 13}, a.base.values()));
  f.tensors.push_back(Tensor::f32("MEAN_OFFSET", {n, 13}, a.rect.mean_offset.values()));
  f.tensors.push_back(Tensor::f32("GLOBAL", {n, 13}, a.rect.global.values()));
  std::vector<double> blend;
  blend.reserve(d * n * 13);
  for (const auto& b : a.rect.blend) blend.insert(blend.end(), b.values().begin(), b.values().end());
  f.tensors.push_back(Tensor::f32("BLEND", {d, n, 13}, blend));

  const nlohmann::json meta{{"mesh_model", a.mesh_path},
                            {"mesh_hash", hex64(a.mesh_hash)},
                            {"init", {{"alpha", a.init.alpha}, {"log_scale", a.init.log_scale}}},
                            {"blendmaps", d},
                            {"default_camera", a.default_camera},
                            {"background", {a.background.x, a.background.y, a.background.z}},
                            {"config_hash", a.config_hash}};
  const std::string text = meta.dump();
  f.tensors.push_back(Tensor::u8("META", {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())));
  return f.serialize();
}

inline AvatarAsset parse_asset(std::span<const std::uint8_t> bytes) {
  const auto f = TensorFile::parse(bytes, "UVGA");
  if (f.version != 1) throw IoError("UVGA: unsupported version " + std::to_string(f.version));
  AvatarAsset a;

  const auto dims = f.get("UV_DIMS").as_u32();
  if (dims.size() != 2 || dims[0] == 0 || dims[1] == 0) throw IoError("UVGA: bad UV_DIMS");
  const int h = static_cast<int>(dims[0]), w = static_cast<int>(dims[1]);
  const auto pixels = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const auto& bits = f.get("MASK").as_u8();
  if (bits.size() != (pixels + 7) / 8) throw IoError("UVGA: MASK size does not match UV_DIMS");
  std::vector<std::uint8_t> mask(pixels);
  for (std::size_t p = 0; p < pixels; ++p) mask[p] = (bits[p / 8] >> (p % 8)) & 1u;
  a.layout = UVLayout::from_mask(h, w, std::move(mask));
  const std::uint64_t n = a.layout->valid_count();

  auto load_map = [&](const char* name, auto& target) {
    const auto& t = f.get(name);
    if (t.dims != std::vector<std::uint64_t>{n, 13}) throw IoError(std::string("UVGA: ") + name + " has wrong shape");
    const auto v = t.as_f64();
    target = std::remove_reference_t<decltype(target)>(a.layout);
    std::copy(v.begin(), v.end(), target.values().begin());
  };
  a.beta_id = f.get("BETA_ID").as_f64();
  load_map("BASE", a.base);
  load_map("MEAN_OFFSET", a.rect.mean_offset);
  load_map("GLOBAL", a.rect.global);

  const auto& blend = f.get("BLEND");
  if (blend.dims.size() != 3 || blend.dims[1] != n || blend.dims[2] != 13) throw IoError("UVGA: BLEND has wrong shape");
  const auto bv = blend.as_f64();
  for (std::uint64_t k = 0; k < blend.dims[0]; ++k) {
    UVOffsets o(a.layout);
    std::copy(bv.begin() + static_cast<std::ptrdiff_t>(k * n * 13), bv.begin() + static_cast<std::ptrdiff_t>((k + 1) * n * 13),
              o.values().begin());
    a.rect.blend.push_back(std::move(o));
  }

  const auto& meta_bytes = f.get("META").as_u8();
  try {
    const auto meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
    a.mesh_path = meta.at("mesh_model").get<std::string>();
    a.mesh_hash = parse_hex64(meta.at("mesh_hash").get<std::string>());
    a.init.alpha = meta.at("init").at("alpha").get<double>();
    a.init.log_scale = meta.at("init").at("log_scale").get<double>();
    if (meta.at("blendmaps").get<std::uint64_t>() != blend.dims[0])
      throw IoError("UVGA: blendmap count in META does not match BLEND");
    a.default_camera = meta.at("default_camera").get<Camera>();
    const auto bg = meta.at("background").get<std::vector<double>>();
    if (bg.size() != 3) throw IoError("UVGA: background needs 3 values");
    a.background = {bg[0], bg[1], bg[2]};
    a.config_hash = meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("UVGA: bad META: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("UVGA: bad META: ") + e.what());
  }
  return a;
}

inline void save_asset(const std::filesystem::path& path, const AvatarAsset& a) { write_file_bytes(path, serialize_asset(a)); }

inline AvatarAsset load_asset(const std::filesystem::path& path) { return parse_asset(read_file_bytes(path)); }

}  // namespace uvavatar

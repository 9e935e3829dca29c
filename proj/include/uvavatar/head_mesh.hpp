#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uvavatar/error.hpp"
#include "uvavatar/math.hpp"
#include "uvavatar/tensor_file.hpp"

namespace uvavatar {

/// Linear blendshape head: template + identity/expression bases, a jaw
/// articulated by linear skinning, and a UV chart (one UV per vertex).
///
/// Basis layout is [vertex][xyz][k], so the displacement of vertex v along
/// axis c is sum_k basis[(v * 3 + c) * K + k] * beta[k].
struct HeadMeshModel {
  std::vector<Vec3> template_vertices;
  int identity_count = 0;
  int expression_count = 0;
  std::vector<double> identity_basis;
  std::vector<double> expression_basis;
  Vec3 jaw_pivot;
  Vec3 jaw_axis{1.0, 0.0, 0.0};  // opening hinge; beta_jaw = angle * jaw_axis opens the mouth
  std::vector<double> jaw_weights;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Vec2> uvs;
  std::vector<double> face_region;  // per vertex, 1 = face, 0 = scalp; empty means all face

  std::size_t vertex_count() const { return template_vertices.size(); }

  /// Checks array sizes and index ranges. Throws ConfigError.
  void validate() const {
    const std::size_t n = vertex_count();
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("head mesh: " + what);
    };
    need(identity_count >= 0 && expression_count >= 0, "negative basis size");
    need(identity_basis.size() == n * 3 * static_cast<std::size_t>(identity_count), "identity basis size");
    need(expression_basis.size() == n * 3 * static_cast<std::size_t>(expression_count), "expression basis size");
    need(jaw_weights.size() == n, "jaw weight count");
    need(uvs.size() == n, "uv count");
    need(face_region.empty() || face_region.size() == n, "face region label count");
    for (std::size_t t = 0; t < triangles.size(); ++t)
      for (auto idx : triangles[t])
        need(idx < n, "triangle " + std::to_string(t) + " references missing vertex " + std::to_string(idx));
  }
};

struct MeshParams {
  std::vector<double> identity;
  std::vector<double> expression;
  Vec3 jaw;  // axis-angle, radians
};

using VertexArray = std::vector<Vec3>;

/// V0 + B_id beta_id + B_exp beta_exp, then jaw vertices blended toward the
/// rotation of beta_jaw about the jaw pivot by their skinning weights.
inline VertexArray build_mesh(const HeadMeshModel& model, const MeshParams& params) {
  if (params.identity.size() != static_cast<std::size_t>(model.identity_count))
    throw ConfigError("build_mesh: expected " + std::to_string(model.identity_count) +
                      " identity coefficients, got " + std::to_string(params.identity.size()));
  if (params.expression.size() != static_cast<std::size_t>(model.expression_count))
    throw ConfigError("build_mesh: expected " + std::to_string(model.expression_count) +
                      " expression coefficients, got " + std::to_string(params.expression.size()));

  const std::size_t n = model.vertex_count();
  const auto kid = static_cast<std::size_t>(model.identity_count);
  const auto kexp = static_cast<std::size_t>(model.expression_count);
  VertexArray out = model.template_vertices;
  for (std::size_t v = 0; v < n; ++v) {
    for (int c = 0; c < 3; ++c) {
      const std::size_t row = v * 3 + static_cast<std::size_t>(c);
      double acc = 0.0;
      const double* bid = model.identity_basis.data() + row * kid;
      for (std::size_t k = 0; k < kid; ++k) acc += bid[k] * params.identity[k];
      const double* bexp = model.expression_basis.data() + row * kexp;
      for (std::size_t k = 0; k < kexp; ++k) acc += bexp[k] * params.expression[k];
      out[v][c] += acc;
    }
  }
  if (params.jaw.x != 0.0 || params.jaw.y != 0.0 || params.jaw.z != 0.0) {
    const Mat3 r = axis_angle_rotation(params.jaw);
    for (std::size_t v = 0; v < n; ++v) {
      const double w = model.jaw_weights[v];
      if (w == 0.0) continue;
      const Vec3 rotated = r * (out[v] - model.jaw_pivot) + model.jaw_pivot;
      out[v] += (rotated - out[v]) * w;
    }
  }
  return out;
}

/// Precomputed UV rasterization: for every covered pixel (row-major order)
/// its triangle and barycentric weights.
struct UVRasterTable {
  struct Entry {
    std::uint32_t pixel = 0;  // y * width + x
    std::uint32_t triangle = 0;
    std::array<double, 3> bary{};
  };

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // height * width, 1 = valid
  std::vector<Entry> entries;      // sorted by pixel

  std::size_t valid_count() const { return entries.size(); }
};

/// Pixel (x, y) samples UV point ((x + 0.5) / W, (y + 0.5) / H). A pixel
/// center on a shared edge goes to the lowest-index triangle.
inline UVRasterTable bake_raster_table(const HeadMeshModel& model, int height, int width) {
  if (height < 1 || width < 1) throw ConfigError("bake_raster_table: size must be at least 1x1");
  model.validate();
  UVRasterTable table;
  table.height = height;
  table.width = width;
  const auto pixels = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  table.mask.assign(pixels, 0);
  std::vector<std::int64_t> owner(pixels, -1);
  std::vector<std::array<double, 3>> bary(pixels);

  constexpr double kEdgeTolerance = 1e-12;
  for (std::size_t t = 0; t < model.triangles.size(); ++t) {
    const auto& tri = model.triangles[t];
    std::array<Vec2, 3> p;
    for (int k = 0; k < 3; ++k) {
      const Vec2 uv = model.uvs[tri[static_cast<std::size_t>(k)]];
      p[static_cast<std::size_t>(k)] = {uv.x * width, uv.y * height};
    }
    const double area2 = (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y);
    const double uv_area2 = area2 / (static_cast<double>(width) * height);
    if (!(std::abs(uv_area2) > 1e-14))
      throw ConfigError("bake_raster_table: degenerate UV triangle " + std::to_string(t));

    const double min_x = std::min({p[0].x, p[1].x, p[2].x}), max_x = std::max({p[0].x, p[1].x, p[2].x});
    const double min_y = std::min({p[0].y, p[1].y, p[2].y}), max_y = std::max({p[0].y, p[1].y, p[2].y});
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
        if (owner[pix] >= 0) continue;
        const double qx = x + 0.5, qy = y + 0.5;
        const double w0 = ((p[1].x - qx) * (p[2].y - qy) - (p[2].x - qx) * (p[1].y - qy)) / area2;
        const double w1 = ((p[2].x - qx) * (p[0].y - qy) - (p[0].x - qx) * (p[2].y - qy)) / area2;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -kEdgeTolerance || w1 < -kEdgeTolerance || w2 < -kEdgeTolerance) continue;
        std::array<double, 3> w{std::max(w0, 0.0), std::max(w1, 0.0), std::max(w2, 0.0)};
        const double s = w[0] + w[1] + w[2];
        for (auto& wi : w) wi /= s;
        owner[pix] = static_cast<std::int64_t>(t);
        bary[pix] = w;
      }
    }
  }
  for (std::size_t pix = 0; pix < pixels; ++pix) {
    if (owner[pix] < 0) continue;
    table.mask[pix] = 1;
    table.entries.push_back({static_cast<std::uint32_t>(pix), static_cast<std::uint32_t>(owner[pix]), bary[pix]});
  }
  return table;
}

/// Full-resolution H x W position image; invalid pixels are zero.
struct PositionMap {
  int height = 0;
  int width = 0;
  std::vector<Vec3> positions;
  std::vector<std::uint8_t> mask;
};

/// Barycentric interpolation of each covered pixel's triangle, compact
/// (one entry per valid pixel, row-major).
inline std::vector<Vec3> interpolate_valid_positions(const UVRasterTable& table, const HeadMeshModel& model,
                                                     const VertexArray& vertices) {
  std::vector<Vec3> out(table.entries.size());
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto& e = table.entries[i];
    const auto& tri = model.triangles[e.triangle];
    out[i] = vertices[tri[0]] * e.bary[0] + vertices[tri[1]] * e.bary[1] + vertices[tri[2]] * e.bary[2];
  }
  return out;
}

inline PositionMap rasterize_positions(const UVRasterTable& table, const HeadMeshModel& model,
                                       const VertexArray& vertices) {
  if (vertices.size() != model.vertex_count())
    throw ConfigError("rasterize_positions: vertex count does not match the mesh topology");
  PositionMap map{table.height, table.width, {}, table.mask};
  map.positions.assign(table.mask.size(), Vec3{});
  const auto compact = interpolate_valid_positions(table, model, vertices);
  for (std::size_t i = 0; i < compact.size(); ++i) map.positions[table.entries[i].pixel] = compact[i];
  return map;
}

// ---------------------------------------------------------------------------
// UVHM mesh-model file

inline std::vector<std::uint8_t> serialize_mesh_model(const HeadMeshModel& model) {
  model.validate();
  const std::uint64_t n = model.vertex_count();
  TensorFile f;
  f.magic = {'U', 'V', 'H', 'M'};
  f.version = 1;

  std::vector<double> flat;
  flat.reserve(n * 3);
  for (const auto& v : model.template_vertices) flat.insert(flat.end(), {v.x, v.y, v.z});
  f.tensors.push_back(Tensor::f32("V0", {n, 3}, flat));
  f.tensors.push_back(Tensor::f32("B_ID", {n, 3, static_cast<std::uint64_t>(model.identity_count)}, model.identity_basis));
  f.tensors.push_back(Tensor::f32("B_EXP", {n, 3, static_cast<std::uint64_t>(model.expression_count)}, model.expression_basis));
  const std::vector<double> jaw{model.jaw_pivot.x, model.jaw_pivot.y, model.jaw_pivot.z,
                                model.jaw_axis.x,  model.jaw_axis.y,  model.jaw_axis.z};
  f.tensors.push_back(Tensor::f32("JAW_AXIS", {2, 3}, jaw));
  f.tensors.push_back(Tensor::f32("JAW_W", {n}, model.jaw_weights));
  std::vector<std::uint32_t> tris;
  tris.reserve(model.triangles.size() * 3);
  for (const auto& t : model.triangles) tris.insert(tris.end(), t.begin(), t.end());
  f.tensors.push_back(Tensor::u32("TRIS", {model.triangles.size(), 3}, tris));
  flat.clear();
  for (const auto& uv : model.uvs) flat.insert(flat.end(), {uv.x, uv.y});
  f.tensors.push_back(Tensor::f32("UV", {n, 2}, flat));
  if (!model.face_region.empty()) f.tensors.push_back(Tensor::f32("REGION", {n}, model.face_region));
  return f.serialize();
}

inline HeadMeshModel parse_mesh_model(std::span<const std::uint8_t> bytes) {
  const auto f = TensorFile::parse(bytes, "UVHM");
  if (f.version != 1) throw IoError("UVHM: unsupported version " + std::to_string(f.version));
  HeadMeshModel m;
  const auto& v0 = f.get("V0");
  if (v0.dims.size() != 2 || v0.dims[1] != 3) throw IoError("UVHM: V0 must be [N,3]");
  const auto n = v0.dims[0];
  const auto v0d = v0.as_f64();
  m.template_vertices.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.template_vertices[i] = {v0d[i * 3], v0d[i * 3 + 1], v0d[i * 3 + 2]};

  auto basis = [&](const char* name, int& count, std::vector<double>& data) {
    const auto& t = f.get(name);
    if (t.dims.size() != 3 || t.dims[0] != n || t.dims[1] != 3) throw IoError(std::string("UVHM: ") + name + " must be [N,3,K]");
    count = static_cast<int>(t.dims[2]);
    data = t.as_f64();
  };
  basis("B_ID", m.identity_count, m.identity_basis);
  basis("B_EXP", m.expression_count, m.expression_basis);

  const auto jaw = f.get("JAW_AXIS").as_f64();
  if (jaw.size() != 6) throw IoError("UVHM: JAW_AXIS must be [2,3]");
  m.jaw_pivot = {jaw[0], jaw[1], jaw[2]};
  m.jaw_axis = {jaw[3], jaw[4], jaw[5]};
  m.jaw_weights = f.get("JAW_W").as_f64();

  const auto& tris = f.get("TRIS");
  if (tris.dims.size() != 2 || tris.dims[1] != 3) throw IoError("UVHM: TRIS must be [T,3]");
  const auto td = tris.as_u32();
  m.triangles.resize(tris.dims[0]);
  for (std::size_t t = 0; t < m.triangles.size(); ++t) m.triangles[t] = {td[t * 3], td[t * 3 + 1], td[t * 3 + 2]};

  const auto uv = f.get("UV").as_f64();
  if (uv.size() != n * 2) throw IoError("UVHM: UV must be [N,2]");
  m.uvs.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.uvs[i] = {uv[i * 2], uv[i * 2 + 1]};
  if (const auto* region = f.find("REGION")) m.face_region = region->as_f64();

  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("UVHM: ") + e.what());
  }
  return m;
}

inline void save_mesh_model(const std::filesystem::path& path, const HeadMeshModel& model) {
  write_file_bytes(path, serialize_mesh_model(model));
}

inline HeadMeshModel load_mesh_model(const std::filesystem::path& path) {
  return parse_mesh_model(read_file_bytes(path));
}

}  // namespace uvavatar

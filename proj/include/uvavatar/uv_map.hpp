#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uvavatar/error.hpp"
#include "uvavatar/gaussian.hpp"
#include "uvavatar/head_mesh.hpp"

namespace uvavatar {

/// Per-pixel channel layout of a UV Gaussian map.
namespace channel {
inline constexpr int kPosition = 0;  // 3
inline constexpr int kLogScale = 3;  // 3
inline constexpr int kRotation = 6;  // 3
inline constexpr int kAlpha = 9;     // 1, pre-sigmoid
inline constexpr int kColor = 10;    // 3
inline constexpr int kCount = 13;
}  // namespace channel

/// Which UV pixels carry a Gaussian. Shared (immutable) between every map
/// and offset tensor built on the same chart.
struct UVLayout {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;      // height * width
  std::vector<std::uint32_t> pixels;   // valid pixel indices, row-major

  std::size_t valid_count() const { return pixels.size(); }

  static std::shared_ptr<const UVLayout> from_mask(int height, int width, std::vector<std::uint8_t> mask) {
    if (mask.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw ConfigError("UVLayout: mask size does not match dimensions");
    auto layout = std::make_shared<UVLayout>();
    layout->height = height;
    layout->width = width;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      mask[p] = mask[p] ? 1 : 0;
      if (mask[p]) layout->pixels.push_back(static_cast<std::uint32_t>(p));
    }
    layout->mask = std::move(mask);
    return layout;
  }

  static std::shared_ptr<const UVLayout> from_table(const UVRasterTable& table) {
    return from_mask(table.height, table.width, table.mask);
  }

  friend bool operator==(const UVLayout& a, const UVLayout& b) {
    return a.height == b.height && a.width == b.width && a.mask == b.mask;
  }
};

/// H x W x 13 tensor stored compactly: only valid pixels, 13 values each, in
/// row-major pixel order. Invalid pixels are implicitly zero. The tag keeps
/// absolute maps and additive offsets apart in the type system.
template <class Tag>
class UVTensor {
 public:
  UVTensor() = default;
  explicit UVTensor(std::shared_ptr<const UVLayout> layout)
      : layout_(std::move(layout)), values_(layout_->valid_count() * channel::kCount, 0.0) {}

  const std::shared_ptr<const UVLayout>& layout() const { return layout_; }
  int height() const { return layout_ ? layout_->height : 0; }
  int width() const { return layout_ ? layout_->width : 0; }
  static constexpr int channels() { return channel::kCount; }
  std::size_t valid_count() const { return layout_ ? layout_->valid_count() : 0; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double, channel::kCount> gaussian(std::size_t i) {
    return std::span<double, channel::kCount>(values_.data() + i * channel::kCount, channel::kCount);
  }
  std::span<const double, channel::kCount> gaussian(std::size_t i) const {
    return std::span<const double, channel::kCount>(values_.data() + i * channel::kCount, channel::kCount);
  }

  /// Dense accessor; invalid pixels read as zero.
  double at(int y, int x, int c) const {
    const auto pix = static_cast<std::uint32_t>(y * layout_->width + x);
    if (!layout_->mask[pix]) return 0.0;
    const auto it = std::lower_bound(layout_->pixels.begin(), layout_->pixels.end(), pix);
    return values_[static_cast<std::size_t>(it - layout_->pixels.begin()) * channel::kCount + static_cast<std::size_t>(c)];
  }

  template <class OtherTag>
  bool same_layout(const UVTensor<OtherTag>& other) const {
    if (layout_ == other.layout()) return true;
    return layout_ && other.layout() && *layout_ == *other.layout();
  }

  friend bool operator==(const UVTensor& a, const UVTensor& b) {
    return a.same_layout(b) && a.values_ == b.values_;
  }

 private:
  std::shared_ptr<const UVLayout> layout_;
  std::vector<double> values_;
};

struct MapTag {};
struct OffsetTag {};
using UVGaussianMap = UVTensor<MapTag>;
using UVOffsets = UVTensor<OffsetTag>;

/// Reinterprets a tensor under another tag (e.g. a gradient as offsets).
template <class To, class From>
UVTensor<To> retag(const UVTensor<From>& src) {
  UVTensor<To> out(src.layout());
  std::copy(src.values().begin(), src.values().end(), out.values().begin());
  return out;
}

struct InitConstants {
  double alpha = 0.1;
  double log_scale = -8.3533;
};

/// Initial map from compact per-Gaussian positions: log-scale and alpha set
/// to the init constants (alpha stored as its logit), rotation and color zero.
inline UVGaussianMap init_map(std::shared_ptr<const UVLayout> layout, std::span<const Vec3> positions,
                              const InitConstants& init = {}) {
  if (positions.size() != layout->valid_count())
    throw ConfigError("init_map: got " + std::to_string(positions.size()) + " positions for " +
                      std::to_string(layout->valid_count()) + " valid pixels");
  UVGaussianMap map(std::move(layout));
  const double alpha_logit = logit(init.alpha);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    auto g = map.gaussian(i);
    for (int c = 0; c < 3; ++c) {
      g[static_cast<std::size_t>(channel::kPosition + c)] = positions[i][c];
      g[static_cast<std::size_t>(channel::kLogScale + c)] = init.log_scale;
    }
    g[channel::kAlpha] = alpha_logit;
  }
  return map;
}

inline UVGaussianMap init_map(const PositionMap& positions, const InitConstants& init = {}) {
  if (positions.positions.size() != positions.mask.size())
    throw ConfigError("init_map: position and mask shapes differ");
  auto layout = UVLayout::from_mask(positions.height, positions.width, positions.mask);
  std::vector<Vec3> compact;
  compact.reserve(layout->valid_count());
  for (auto pix : layout->pixels) compact.push_back(positions.positions[pix]);
  return init_map(std::move(layout), compact, init);
}

/// base + sum(offsets), valid pixels only.
inline UVGaussianMap apply_offsets(const UVGaussianMap& base, std::span<const UVOffsets* const> offsets) {
  UVGaussianMap out = base;
  auto dst = out.values();
  for (const UVOffsets* o : offsets) {
    if (!o->same_layout(base)) throw ConfigError("apply_offsets: offset layout does not match the base map");
    auto src = o->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

inline UVGaussianMap apply_offsets(const UVGaussianMap& base, std::initializer_list<const UVOffsets*> offsets) {
  return apply_offsets(base, std::span<const UVOffsets* const>(offsets.begin(), offsets.size()));
}

/// sum_i weights[i] * blendmaps[i]. Weights must sum to one.
inline UVOffsets blend_offsets(std::span<const UVOffsets> blendmaps, std::span<const double> weights) {
  if (blendmaps.empty()) throw ConfigError("blend_offsets: no blendmaps");
  if (blendmaps.size() != weights.size())
    throw ConfigError("blend_offsets: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(blendmaps.size()) + " blendmaps");
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("blend_offsets: weights sum to " + std::to_string(sum));
  UVOffsets out(blendmaps[0].layout());
  auto dst = out.values();
  for (std::size_t k = 0; k < blendmaps.size(); ++k) {
    if (!blendmaps[k].same_layout(blendmaps[0])) throw ConfigError("blend_offsets: blendmap layouts differ");
    auto src = blendmaps[k].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weights[k] * src[i];
  }
  return out;
}

/// Flattened renderable Gaussians in pre-activation form (structure of arrays).
struct GaussianCloud {
  std::vector<Vec3> mean;
  std::vector<Vec3> log_scale;
  std::vector<Vec3> rotation;
  std::vector<double> alpha_logit;
  std::vector<Vec3> color;

  std::size_t size() const { return mean.size(); }

  void push_back(const Gaussian3D& g) {
    mean.push_back(g.mean);
    log_scale.push_back(g.log_scale);
    rotation.push_back(g.rotation);
    alpha_logit.push_back(g.alpha_logit);
    color.push_back(g.color);
  }

  Gaussian3D operator[](std::size_t i) const { return {mean[i], log_scale[i], rotation[i], alpha_logit[i], color[i]}; }
};

/// Valid pixels in row-major order. No activations are applied.
inline GaussianCloud to_cloud(const UVGaussianMap& map) {
  GaussianCloud cloud;
  const std::size_t n = map.valid_count();
  cloud.mean.resize(n);
  cloud.log_scale.resize(n);
  cloud.rotation.resize(n);
  cloud.alpha_logit.resize(n);
  cloud.color.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto g = map.gaussian(i);
    cloud.mean[i] = {g[0], g[1], g[2]};
    cloud.log_scale[i] = {g[3], g[4], g[5]};
    cloud.rotation[i] = {g[6], g[7], g[8]};
    cloud.alpha_logit[i] = g[9];
    cloud.color[i] = {g[10], g[11], g[12]};
  }
  return cloud;
}

/// Inverse of to_cloud on a given layout.
inline UVGaussianMap scatter_cloud(const GaussianCloud& cloud, std::shared_ptr<const UVLayout> layout) {
  if (cloud.size() != layout->valid_count()) throw ConfigError("scatter_cloud: cloud size does not match layout");
  UVGaussianMap map(std::move(layout));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto g = map.gaussian(i);
    const Gaussian3D s = cloud[i];
    for (int c = 0; c < 3; ++c) {
      g[static_cast<std::size_t>(c)] = s.mean[c];
      g[static_cast<std::size_t>(3 + c)] = s.log_scale[c];
      g[static_cast<std::size_t>(6 + c)] = s.rotation[c];
      g[static_cast<std::size_t>(10 + c)] = s.color[c];
    }
    g[9] = s.alpha_logit;
  }
  return map;
}

/// Single-layout map holding an arbitrary cloud (one Gaussian per pixel of a
/// 1 x N chart). Handy for rendering clouds that did not come from a mesh.
inline UVGaussianMap map_from_cloud(const GaussianCloud& cloud) {
  const int n = static_cast<int>(cloud.size());
  auto layout = UVLayout::from_mask(1, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1));
  return scatter_cloud(cloud, std::move(layout));
}

}  // namespace uvavatar

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uvavatar/error.hpp"
#include "uvavatar/head_mesh.hpp"
#include "uvavatar/image.hpp"
#include "uvavatar/uv_map.hpp"

namespace uvavatar {

struct LossWeights {
  double rgb = 1.0;
  double lpips = 0.0;  // only used when a perceptual plugin is supplied
  double ssim = 0.05;
  double position = 0.5;
  double scale = 5e-5;
  double view = 0.1;

  void validate() const {
    for (double w : {rgb, lpips, ssim, position, scale, view})
      if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
};

/// Scalar loss of an image plus its gradient w.r.t. the (predicted) image.
struct ImageLoss {
  double value = 0.0;
  Image grad;
};

/// Scalar loss of a UV offset tensor plus its gradient.
struct OffsetLoss {
  double value = 0.0;
  UVOffsets grad;
};

/// Per-pixel position-regularizer weights (H x W), zero off the chart.
struct WeightMapMu {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

/// Mean absolute error over pixels with positive mask weight (mean over
/// channels too). `mask` is single-channel; nullptr means every pixel.
inline ImageLoss loss_rgb(const Image& pred, const Image& target, const Image* mask = nullptr) {
  if (!pred.same_shape(target)) throw ConfigError("loss_rgb: prediction and target shapes differ");
  if (mask && (mask->width != pred.width || mask->height != pred.height || mask->channels != 1))
    throw ConfigError("loss_rgb: mask shape differs");
  ImageLoss out{0.0, Image(pred.width, pred.height, pred.channels)};
  double weight_sum = 0.0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) weight_sum += mask ? mask->data[p] : 1.0;
  if (!(weight_sum > 0.0)) throw ConfigError("loss_rgb: empty mask");
  const double norm = 1.0 / (weight_sum * pred.channels);
  double acc = 0.0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    const double m = mask ? mask->data[p] : 1.0;
    if (m == 0.0) continue;
    for (int c = 0; c < pred.channels; ++c) {
      const std::size_t i = p * static_cast<std::size_t>(pred.channels) + static_cast<std::size_t>(c);
      const double d = pred.data[i] - target.data[i];
      acc += m * std::abs(d);
      out.grad.data[i] = m * norm * static_cast<double>((d > 0.0) - (d < 0.0));
    }
  }
  out.value = acc * norm;
  return out;
}

namespace detail {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Valid-mode separable Gaussian filtering of a single-channel plane:
/// (h, w) -> (h - 10, w - 10).
inline std::vector<double> filter_valid(const std::vector<double>& in, int h, int w) {
  const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> horiz(static_cast<std::size_t>(h * ow));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(y * w + x + i)];
      horiz[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[static_cast<std::size_t>(i)] * horiz[static_cast<std::size_t>((y + i) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

/// Adjoint of filter_valid: (h - 10, w - 10) -> (h, w).
inline std::vector<double> filter_valid_adjoint(const std::vector<double>& in, int h, int w) {
  const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> horiz(static_cast<std::size_t>(h * ow), 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = in[static_cast<std::size_t>(y * ow + x)];
      for (int i = 0; i < kSsimWindow; ++i) horiz[static_cast<std::size_t>((y + i) * ow + x)] += k[static_cast<std::size_t>(i)] * v;
    }
  std::vector<double> out(static_cast<std::size_t>(h * w), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = horiz[static_cast<std::size_t>(y * ow + x)];
      for (int i = 0; i < kSsimWindow; ++i) out[static_cast<std::size_t>(y * w + x + i)] += k[static_cast<std::size_t>(i)] * v;
    }
  return out;
}

}  // namespace detail

/// Single-scale SSIM loss, 1 - mean SSIM: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, windows fully inside the image, averaged over
/// channels. Gradient is w.r.t. `pred`.
inline ImageLoss loss_ssim(const Image& pred, const Image& target) {
  using namespace detail;
  if (!pred.same_shape(target)) throw ConfigError("loss_ssim: prediction and target shapes differ");
  if (pred.width < kSsimWindow || pred.height < kSsimWindow)
    throw ConfigError("loss_ssim: images must be at least 11x11, got " + std::to_string(pred.width) + "x" +
                      std::to_string(pred.height));
  const int w = pred.width, h = pred.height, ch = pred.channels;
  const auto n = pred.pixel_count();
  const auto positions = static_cast<std::size_t>((w - kSsimWindow + 1) * (h - kSsimWindow + 1));
  const double scale = 1.0 / (static_cast<double>(positions) * ch);
  ImageLoss out{0.0, Image(w, h, ch)};
  double ssim_sum = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = pred.data[p * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
      y[p] = target.data[p * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
    const auto exx = filter_valid(xx, h, w), eyy = filter_valid(yy, h, w), exy = filter_valid(xy, h, w);
    std::vector<double> d_mu(positions), d_exx(positions), d_exy(positions);
    for (std::size_t q = 0; q < positions; ++q) {
      const double a1 = 2.0 * mx[q] * my[q] + kSsimC1;
      const double a2 = 2.0 * (exy[q] - mx[q] * my[q]) + kSsimC2;
      const double b1 = mx[q] * mx[q] + my[q] * my[q] + kSsimC1;
      const double b2 = (exx[q] - mx[q] * mx[q]) + (eyy[q] - my[q] * my[q]) + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      ssim_sum += s;
      // d(1 - mean S) = -scale * dS
      d_mu[q] = -scale * (2.0 * my[q] * a2 / (b1 * b2) - 2.0 * my[q] * a1 / (b1 * b2) - s * 2.0 * mx[q] / b1 +
                          s * 2.0 * mx[q] / b2);
      d_exx[q] = -scale * (-s / b2);
      d_exy[q] = -scale * (2.0 * a1 / (b1 * b2));
    }
    const auto g_mu = filter_valid_adjoint(d_mu, h, w);
    const auto g_exx = filter_valid_adjoint(d_exx, h, w);
    const auto g_exy = filter_valid_adjoint(d_exy, h, w);
    for (std::size_t p = 0; p < n; ++p)
      out.grad.data[p * static_cast<std::size_t>(ch) + static_cast<std::size_t>(c)] = g_mu[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p];
  }
  out.value = 1.0 - ssim_sum * scale;
  return out;
}

namespace detail {

/// sqrt(sum v^2) with gradient v / norm, zero gradient below 1e-12.
inline double norm_with_grad(std::span<const double> v, std::span<double> grad) {
  double ss = 0.0;
  for (double e : v) ss += e * e;
  const double nrm = std::sqrt(ss);
  if (nrm > 1e-12)
    for (std::size_t i = 0; i < v.size(); ++i) grad[i] = v[i] / nrm;
  return nrm;
}

}  // namespace detail

/// || dU_mu o M ||_F over valid pixels, M broadcast over xyz. Reads the
/// position channels of `offsets`; the gradient touches only those.
inline OffsetLoss reg_position(const UVOffsets& offsets, const WeightMapMu& weights) {
  const auto& layout = *offsets.layout();
  if (weights.height != layout.height || weights.width != layout.width ||
      weights.values.size() != layout.mask.size())
    throw ConfigError("reg_position: weight map shape does not match the UV layout");
  const std::size_t n = offsets.valid_count();
  std::vector<double> weighted(n * 3), g(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = weights.values[layout.pixels[i]];
    for (int c = 0; c < 3; ++c)
      weighted[i * 3 + static_cast<std::size_t>(c)] = offsets.gaussian(i)[static_cast<std::size_t>(channel::kPosition + c)] * m;
  }
  OffsetLoss out{detail::norm_with_grad(weighted, g), UVOffsets(offsets.layout())};
  for (std::size_t i = 0; i < n; ++i) {
    const double m = weights.values[layout.pixels[i]];
    for (int c = 0; c < 3; ++c)
      out.grad.gaussian(i)[static_cast<std::size_t>(channel::kPosition + c)] = g[i * 3 + static_cast<std::size_t>(c)] * m;
  }
  return out;
}

/// || dU_s ||_F over valid pixels (log-scale channels).
inline OffsetLoss reg_scale(const UVOffsets& offsets) {
  const std::size_t n = offsets.valid_count();
  std::vector<double> v(n * 3), g(n * 3, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) v[i * 3 + static_cast<std::size_t>(c)] = offsets.gaussian(i)[static_cast<std::size_t>(channel::kLogScale + c)];
  OffsetLoss out{detail::norm_with_grad(v, g), UVOffsets(offsets.layout())};
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.grad.gaussian(i)[static_cast<std::size_t>(channel::kLogScale + c)] = g[i * 3 + static_cast<std::size_t>(c)];
  return out;
}

struct ViewLoss {
  double value = 0.0;
  std::vector<UVOffsets> grads;  // one per member
};

/// sum_k || dU_k - mean(dU) ||_F / |B| over all 13 channels. The gradient
/// includes every member's contribution through the mean.
inline ViewLoss reg_view(std::span<const UVOffsets> members) {
  if (members.size() < 2) throw ConfigError("reg_view: needs at least two offset maps");
  const std::size_t k = members.size();
  const std::size_t len = members[0].values().size();
  for (const auto& m : members)
    if (!m.same_layout(members[0])) throw ConfigError("reg_view: offset layouts differ");
  std::vector<double> mean(len, 0.0);
  for (const auto& m : members)
    for (std::size_t i = 0; i < len; ++i) mean[i] += m.values()[i];
  for (auto& v : mean) v /= static_cast<double>(k);

  ViewLoss out;
  std::vector<std::vector<double>> unit(k, std::vector<double>(len, 0.0));
  std::vector<double> diff(len);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < len; ++i) diff[i] = members[j].values()[i] - mean[i];
    out.value += detail::norm_with_grad(diff, unit[j]);
  }
  out.value /= static_cast<double>(k);
  std::vector<double> unit_mean(len, 0.0);
  for (const auto& u : unit)
    for (std::size_t i = 0; i < len; ++i) unit_mean[i] += u[i] / static_cast<double>(k);
  for (std::size_t j = 0; j < k; ++j) {
    UVOffsets g(members[0].layout());
    auto gv = g.values();
    for (std::size_t i = 0; i < len; ++i) gv[i] = (unit[j][i] - unit_mean[i]) / static_cast<double>(k);
    out.grads.push_back(std::move(g));
  }
  return out;
}

/// Optional perceptual term (image pair -> value + gradient w.r.t. pred).
using PerceptualLoss = std::function<ImageLoss(const Image& pred, const Image& target)>;

struct LossTerms {
  double rgb = 0.0;
  double lpips = 0.0;
  double ssim = 0.0;
  double position = 0.0;
  double scale = 0.0;
  double view = 0.0;
  double total = 0.0;
};

struct LossInputs {
  const Image* pred = nullptr;
  const Image* target = nullptr;
  const Image* mask = nullptr;              // nullptr = every pixel
  const UVOffsets* offsets = nullptr;       // effective offset from U_init; nullptr skips L_mu, L_s
  const WeightMapMu* weight_map = nullptr;  // required when offsets is set
  std::span<const UVOffsets> view_set;      // empty skips L_view
  const PerceptualLoss* perceptual = nullptr;
};

struct LossResult {
  LossTerms terms;
  Image dl_dimage;
  UVOffsets dl_doffsets;              // valid when inputs.offsets was set
  std::vector<UVOffsets> dl_dview;    // one per view-set member
};

/// Weighted sum of the photometric and regularization terms. L1 and the
/// regularizers are reported whenever their inputs are present (even at
/// weight zero); SSIM is evaluated only when its weight is positive.
inline LossResult total_loss(const LossInputs& in, const LossWeights& w) {
  w.validate();
  if (!in.pred || !in.target) throw ConfigError("total_loss: prediction and target are required");
  LossResult out;
  out.dl_dimage = Image(in.pred->width, in.pred->height, in.pred->channels);
  auto add_image_grad = [&](const Image& g, double weight) {
    for (std::size_t i = 0; i < g.data.size(); ++i) out.dl_dimage.data[i] += weight * g.data[i];
  };

  const auto rgb = loss_rgb(*in.pred, *in.target, in.mask);
  out.terms.rgb = rgb.value;
  add_image_grad(rgb.grad, w.rgb);

  if (w.ssim > 0.0) {
    const auto ssim = loss_ssim(*in.pred, *in.target);
    out.terms.ssim = ssim.value;
    add_image_grad(ssim.grad, w.ssim);
  }
  if (in.perceptual && *in.perceptual) {
    const auto lp = (*in.perceptual)(*in.pred, *in.target);
    out.terms.lpips = lp.value;
    add_image_grad(lp.grad, w.lpips);
  }

  if (in.offsets) {
    if (!in.weight_map) throw ConfigError("total_loss: position regularizer needs a weight map");
    const auto pos = reg_position(*in.offsets, *in.weight_map);
    const auto scl = reg_scale(*in.offsets);
    out.terms.position = pos.value;
    out.terms.scale = scl.value;
    out.dl_doffsets = UVOffsets(in.offsets->layout());
    auto g = out.dl_doffsets.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = w.position * pos.grad.values()[i] + w.scale * scl.grad.values()[i];
  }

  if (!in.view_set.empty()) {
    auto view = reg_view(in.view_set);
    out.terms.view = view.value;
    for (auto& g : view.grads)
      for (auto& v : g.values()) v *= w.view;
    out.dl_dview = std::move(view.grads);
  }

  out.terms.total = w.rgb * out.terms.rgb + w.ssim * out.terms.ssim + w.lpips * out.terms.lpips +
                    w.position * out.terms.position + w.scale * out.terms.scale + w.view * out.terms.view;
  return out;
}

/// Face pixels 1.0, scalp pixels 0.1, off-chart 0. A pixel takes the label
/// of its triangle's dominant corner (largest barycentric weight, first
/// corner on ties).
inline WeightMapMu default_weight_map(const HeadMeshModel& model, const UVRasterTable& table, double face = 1.0,
                                      double scalp = 0.1) {
  WeightMapMu map{table.height, table.width, std::vector<double>(table.mask.size(), 0.0)};
  for (const auto& e : table.entries) {
    const auto& tri = model.triangles[e.triangle];
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (e.bary[k] > e.bary[best]) best = k;
    const bool is_face = model.face_region.empty() || model.face_region[tri[best]] >= 0.5;
    map.values[e.pixel] = is_face ? face : scalp;
  }
  return map;
}

}  // namespace uvavatar

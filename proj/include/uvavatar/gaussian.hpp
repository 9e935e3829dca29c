#pragma once

#include <cmath>
#include <string>

#include "uvavatar/error.hpp"
#include "uvavatar/math.hpp"

namespace uvavatar {

/// One renderable Gaussian in its stored (pre-activation) parameterization.
///
///   mean        world-space center
///   log_scale   per-axis log standard deviation; exp() gives the axis lengths
///   rotation    raw params r; the rotation quaternion is normalize(1, r)
///   alpha_logit opacity before the sigmoid
///   color       degree-0 RGB, clamped to [0,1] only when rendered
struct Gaussian3D {
  Vec3 mean;
  Vec3 log_scale;
  Vec3 rotation;
  double alpha_logit = 0.0;
  Vec3 color;
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// normalize((1, r)) as a (w, x, y, z) quaternion.
inline Quaternion quaternion_from_params(const Vec3& r) {
  return Quaternion{1.0, r.x, r.y, r.z}.normalized();
}

/// R S S^T R^T with S = diag(exp(log_scale)). Always symmetric PSD.
inline Mat3 covariance(const Vec3& log_scale, const Quaternion& rotation) {
  const Mat3 r = rotation.to_rotation();
  const Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
  Mat3 m;  // R * S
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = r(i, j) * s[j];
  Mat3 out;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      const double v = m(i, 0) * m(j, 0) + m(i, 1) * m(j, 1) + m(i, 2) * m(j, 2);
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

inline constexpr double kCovarianceConditionLimit = 1e12;
inline constexpr double kCovarianceRegularizer = 1e-9;

/// Unnormalized Gaussian density exp(-1/2 (x-mu)^T cov^-1 (x-mu)).
///
/// Covariances with condition number above 1e12 get 1e-9 I added before
/// inversion. Throws InvalidGaussian if the result is still not positive
/// definite or not finite.
inline double gaussian_weight(const Vec3& x, const Vec3& mean, const Mat3& cov) {
  Mat3 c = cov;
  auto ev = symmetric_eigenvalues(c);
  const bool ill = !(ev[0] > 0.0) || ev[2] / ev[0] > kCovarianceConditionLimit;
  if (ill) {
    for (int i = 0; i < 3; ++i) c(i, i) += kCovarianceRegularizer;
    ev = symmetric_eigenvalues(c);
  }
  if (!(ev[0] > 0.0) || !std::isfinite(ev[2])) {
    throw InvalidGaussian("gaussian_weight: covariance is degenerate (smallest eigenvalue " +
                          std::to_string(ev[0]) + ")");
  }
  const Vec3 d = x - mean;
  const double mahalanobis = dot(d, c.inverse() * d);
  return std::exp(-0.5 * mahalanobis);
}

}  // namespace uvavatar

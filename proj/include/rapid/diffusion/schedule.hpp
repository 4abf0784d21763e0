#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "rapid/core/error.hpp"

namespace rapid::diffusion {

/// Cosine variance-preserving schedule: alpha = cos(pi t / 2), sigma = sin(pi t / 2).
/// The endpoints are returned exactly.
inline double alpha(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  return std::cos(0.5 * std::numbers::pi * t);
}

inline double sigma(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return std::sin(0.5 * std::numbers::pi * t);
}

inline constexpr const char* kScheduleId = "cosine-vp";

/// Training/evaluation time window, kept away from both endpoints.
struct TimeRange {
  double lo = 0.02;
  double hi = 0.98;

  void validate() const {
    require(0.0 < lo && lo < hi && hi < 1.0, errc::kConfig, "time range must satisfy 0 < lo < hi < 1");
  }
};

inline Eigen::VectorXd noise_sample(const Eigen::VectorXd& x0, double t, const Eigen::VectorXd& eps) {
  require(t >= 0.0 && t <= 1.0, errc::kDomain, "diffusion time must lie in [0, 1]");
  require(x0.size() == eps.size(), errc::kShape, "x0 and eps sizes differ");
  return alpha(t) * x0 + sigma(t) * eps;
}

inline constexpr int kTimeEmbeddingDim = 9;

/// (sin 2 pi k t, cos 2 pi k t) for k = 1..4, then t itself.
inline Eigen::VectorXd time_embedding(double t) {
  Eigen::VectorXd e(kTimeEmbeddingDim);
  for (int k = 1; k <= 4; ++k) {
    e[2 * (k - 1)] = std::sin(2.0 * std::numbers::pi * k * t);
    e[2 * (k - 1) + 1] = std::cos(2.0 * std::numbers::pi * k * t);
  }
  e[8] = t;
  return e;
}

}  // namespace rapid::diffusion

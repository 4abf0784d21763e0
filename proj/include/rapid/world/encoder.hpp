#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/world/scenario.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::world {

/// Per-coordinate affine normalization. `present` masks let encoders mark
/// padded entries; those are excluded from the statistics and encode to 0.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::Index dim() const { return mean.size(); }

  std::uint64_t id() const {
    return Fnv1a{}
        .f64s({mean.data(), static_cast<std::size_t>(mean.size())})
        .f64s({std.data(), static_cast<std::size_t>(std.size())})
        .value();
  }

  static FeatureStats identity(Eigen::Index n) {
    return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
  }

  /// Columns of `samples` are observations; `present` (same shape, optional)
  /// flags which entries count.
  static FeatureStats fit(const Eigen::MatrixXd& samples, const Eigen::MatrixXd* present = nullptr) {
    const Eigen::Index d = samples.rows();
    FeatureStats st{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
    for (Eigen::Index i = 0; i < d; ++i) {
      double n = 0.0, sum = 0.0;
      for (Eigen::Index j = 0; j < samples.cols(); ++j) {
        if (present && (*present)(i, j) == 0.0) continue;
        sum += samples(i, j);
        n += 1.0;
      }
      if (n == 0.0) continue;
      const double mean = sum / n;
      double ss = 0.0;
      for (Eigen::Index j = 0; j < samples.cols(); ++j) {
        if (present && (*present)(i, j) == 0.0) continue;
        ss += (samples(i, j) - mean) * (samples(i, j) - mean);
      }
      const double sd = std::sqrt(ss / n);
      st.mean[i] = mean;
      st.std[i] = sd > 1e-8 ? sd : 1.0;
    }
    return st;
  }

  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const { return (x - mean).cwiseQuotient(std); }
  Eigen::VectorXd denormalize(const Eigen::VectorXd& z) const { return z.cwiseProduct(std) + mean; }
  Eigen::MatrixXd normalize_cols(const Eigen::MatrixXd& x) const {
    return ((x.colwise() - mean).array().colwise() / std.array()).matrix();
  }
  Eigen::MatrixXd denormalize_cols(const Eigen::MatrixXd& z) const {
    return ((z.array().colwise() * std.array()).matrix()).colwise() + mean;
  }
};

struct RawFeatures {
  Eigen::VectorXd values;
  Eigen::VectorXd present;  // 1 where the entry carries information, 0 for padding
};

struct StateEncoding {
  Eigen::VectorXd features;
  std::uint64_t normalization_id = 0;
};

namespace feature {
inline constexpr int kSpeed = 0;
inline constexpr int kAccel = 1;
inline constexpr int kLateralOffset = 2;
inline constexpr int kHeadingError = 3;
inline constexpr int kGoalDistance = 4;
inline constexpr int kSpeedLimitGap = 5;
inline constexpr int kSpeedLimit = 6;
inline constexpr int kCorridor = 7;
inline constexpr int kCurvatureNear = 8;
inline constexpr int kCurvatureMid = 9;
inline constexpr int kCurvatureFar = 10;
inline constexpr int kYawRate = 11;
inline constexpr int kLateralRate = 12;
inline constexpr int kOldestSpeed = 13;
inline constexpr int kLeadGap = 14;
inline constexpr int kLeadSpeedDelta = 15;
inline constexpr int kAgentBase = 16;  // then (longitudinal, lateral, speed delta, valid) per slot
inline constexpr double kNoLeadGap = 100.0;
}  // namespace feature

/// Hand-built scene features in the ego frame. Pure function of the scene.
inline RawFeatures raw_features(const SceneContext& scene, const WorldConfig& cfg) {
  scene.validate(cfg);
  const Centerline& road = *scene.centerline;
  const VehicleState& ego = scene.ego();
  const VehicleState& prev = scene.ego_history[scene.ego_history.size() - 2];
  const Frenet f = road.project({ego.x, ego.y});
  const Frenet fp = road.project({prev.x, prev.y});

  RawFeatures out{Eigen::VectorXd::Zero(cfg.state_dim), Eigen::VectorXd::Ones(cfg.state_dim)};
  auto& v = out.values;
  using namespace feature;
  v[kSpeed] = ego.speed;
  v[kAccel] = ego.accel;
  v[kLateralOffset] = f.d;
  v[kHeadingError] = wrap_angle(ego.heading - f.heading);
  v[kGoalDistance] = std::clamp(scene.goal_arc_length - f.s, 0.0, 200.0);
  v[kSpeedLimitGap] = scene.speed_limit - ego.speed;
  v[kSpeedLimit] = scene.speed_limit;
  v[kCorridor] = scene.corridor_half_width;
  v[kCurvatureNear] = 100.0 * road.curvature_at(f.s + 10.0);
  v[kCurvatureMid] = 100.0 * road.curvature_at(f.s + 30.0);
  v[kCurvatureFar] = 100.0 * road.curvature_at(f.s + 60.0);
  v[kYawRate] = wrap_angle(ego.heading - prev.heading) / cfg.dt;
  v[kLateralRate] = (f.d - fp.d) / cfg.dt;
  v[kOldestSpeed] = scene.ego_history.front().speed;

  struct Rel {
    double dist, lon, lat, dv;
  };
  std::vector<Rel> rel;
  double lead_gap = kNoLeadGap;
  double lead_dv = 0.0;
  const double c = std::cos(ego.heading), s = std::sin(ego.heading);
  for (const auto& a : scene.agents) {
    if (!a.valid) continue;
    const double dx = a.state.x - ego.x, dy = a.state.y - ego.y;
    rel.push_back({std::hypot(dx, dy), c * dx + s * dy, -s * dx + c * dy, a.state.speed - ego.speed});
    const Frenet fa = road.project({a.state.x, a.state.y});
    const double gap = fa.s - f.s - a.half_length - cfg.ego_half_length;
    if (fa.s > f.s && std::abs(fa.d - f.d) < a.half_width + cfg.ego_half_width + 0.3 && gap < lead_gap) {
      lead_gap = std::max(gap, 0.0);
      lead_dv = a.state.speed - ego.speed;
    }
  }
  v[kLeadGap] = lead_gap;
  v[kLeadSpeedDelta] = lead_dv;

  std::stable_sort(rel.begin(), rel.end(), [](const Rel& a, const Rel& b) { return a.dist < b.dist; });
  for (int k = 0; k < cfg.nearest_agents; ++k) {
    const int base = kAgentBase + 4 * k;
    if (k < static_cast<int>(rel.size())) {
      v[base] = rel[static_cast<std::size_t>(k)].lon;
      v[base + 1] = rel[static_cast<std::size_t>(k)].lat;
      v[base + 2] = rel[static_cast<std::size_t>(k)].dv;
      v[base + 3] = 1.0;
    } else {
      out.present.segment(base, 3).setZero();
      v[base + 3] = 0.0;
    }
  }
  return out;
}

inline Eigen::VectorXd normalize_features(const RawFeatures& raw, const FeatureStats& stats) {
  require(raw.values.size() == stats.dim(), errc::kShape, "feature dimension differs from normalization stats");
  return stats.normalize(raw.values).cwiseProduct(raw.present);
}

inline StateEncoding encode_state(const SceneContext& scene, const WorldConfig& cfg, const FeatureStats& stats) {
  return {normalize_features(raw_features(scene, cfg), stats), stats.id()};
}

/// Trajectory -> action vector [x1, y1, h1, x2, ...] in the ego frame of `origin`.
inline Eigen::VectorXd trajectory_to_action(const Trajectory& traj, const Pose& origin) {
  Eigen::VectorXd a(3 * traj.horizon());
  const double c = std::cos(origin.heading), s = std::sin(origin.heading);
  for (int k = 0; k < traj.horizon(); ++k) {
    const auto& p = traj.poses[static_cast<std::size_t>(k)];
    const double dx = p.x - origin.x, dy = p.y - origin.y;
    a[3 * k] = c * dx + s * dy;
    a[3 * k + 1] = -s * dx + c * dy;
    a[3 * k + 2] = wrap_angle(p.heading - origin.heading);
  }
  return a;
}

inline Trajectory action_to_trajectory(const Eigen::VectorXd& a, const Pose& origin, double dt) {
  require(a.size() % 3 == 0 && a.size() >= 3, errc::kShape, "action length must be a positive multiple of 3");
  Trajectory t;
  t.dt = dt;
  const double c = std::cos(origin.heading), s = std::sin(origin.heading);
  for (Eigen::Index k = 0; k < a.size() / 3; ++k) {
    const double lx = a[3 * k], ly = a[3 * k + 1];
    t.poses.push_back({origin.x + c * lx - s * ly, origin.y + s * lx + c * ly, wrap_angle(origin.heading + a[3 * k + 2])});
  }
  return t;
}

}  // namespace rapid::world

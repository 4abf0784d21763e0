#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/world/geometry.hpp"

namespace rapid::world {

/// Shared constants of the toy world. Every stage reads the same instance.
struct WorldConfig {
  double wheelbase = 3.0;
  double v_max = 15.0;
  double steer_max = 0.5;
  double accel_min = -8.0;
  double accel_max = 3.0;
  double dt = 0.5;
  int horizon = 16;
  int history = 4;
  int state_dim = 32;
  int max_agents = 4;
  int nearest_agents = 4;
  double ego_half_length = 2.0;
  double ego_half_width = 1.0;
  double feasibility_margin = 0.5;  // meters per step on top of v_max * dt
  int episode_len = 20;             // simulation steps per scenario
  int executed_steps = 2;           // steps executed between replans

  int action_dim() const { return 3 * horizon; }

  void validate() const {
    require(wheelbase > 0 && v_max > 0 && steer_max > 0 && dt > 0, errc::kConfig, "world constants must be positive");
    require(horizon >= 3, errc::kConfig, "horizon must be >= 3");
    require(history >= 2, errc::kConfig, "history must be >= 2");
    require(max_agents >= 1 && nearest_agents >= 1 && nearest_agents <= max_agents, errc::kConfig,
            "agent slot counts invalid");
    require(state_dim == 16 + 4 * nearest_agents, errc::kConfig,
            "state_dim must equal 16 + 4 * nearest_agents for the feature encoder");
    require(executed_steps >= 1 && executed_steps <= horizon, errc::kConfig, "executed_steps out of range");
    require(episode_len >= executed_steps, errc::kConfig, "episode_len shorter than executed_steps");
    require(accel_min < 0 && accel_max > 0, errc::kConfig, "accel bounds must straddle zero");
  }

  std::uint64_t hash() const {
    return Fnv1a{}
        .f64(wheelbase).f64(v_max).f64(steer_max).f64(accel_min).f64(accel_max).f64(dt)
        .u64(static_cast<std::uint64_t>(horizon)).u64(static_cast<std::uint64_t>(history))
        .u64(static_cast<std::uint64_t>(state_dim)).u64(static_cast<std::uint64_t>(max_agents))
        .u64(static_cast<std::uint64_t>(nearest_agents)).f64(ego_half_length).f64(ego_half_width)
        .f64(feasibility_margin).u64(static_cast<std::uint64_t>(episode_len))
        .u64(static_cast<std::uint64_t>(executed_steps))
        .value();
  }
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double accel = 0.0;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const Pose&, const Pose&) = default;
};

/// H future poses at a uniform timestep; the pose at the current time is not
/// part of the trajectory.
struct Trajectory {
  std::vector<Pose> poses;
  double dt = 0.5;

  int horizon() const { return static_cast<int>(poses.size()); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;

  bool all_finite() const {
    for (const auto& p : poses)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.heading)) return false;
    return true;
  }
};

struct Control {
  double accel = 0.0;
  double steer = 0.0;
};

inline Pose pose_of(const VehicleState& s) { return {s.x, s.y, s.heading}; }

/// Per-step displacement bound, measured from `start` through every pose.
inline bool is_feasible(const Trajectory& traj, const Pose& start, const WorldConfig& cfg) {
  if (traj.dt <= 0.0 || !traj.all_finite()) return false;
  const double bound = cfg.v_max * traj.dt + cfg.feasibility_margin;
  Vec2 prev = start.position();
  for (const auto& p : traj.poses) {
    if ((p.position() - prev).norm() > bound) return false;
    prev = p.position();
  }
  return true;
}

/// Pulls each pose back toward its predecessor until the per-step
/// displacement bound holds.
inline Trajectory clamp_feasible(Trajectory traj, const Pose& start, const WorldConfig& cfg) {
  const double bound = cfg.v_max * traj.dt;
  Vec2 prev = start.position();
  for (auto& p : traj.poses) {
    Vec2 step = p.position() - prev;
    const double n = step.norm();
    if (n > bound) {
      step *= bound / n;
      p.x = prev.x() + step.x();
      p.y = prev.y() + step.y();
    }
    p.heading = wrap_angle(p.heading);
    prev = p.position();
  }
  return traj;
}

/// One step of the rear-axle kinematic bicycle. Steering is held constant over
/// the step, so the path is an exact circular arc (or line); the traveled
/// distance accounts for acceleration and the [0, v_max] speed clamp.
inline VehicleState bicycle_step(const VehicleState& s, const Control& u, double dt, const WorldConfig& cfg) {
  double v1 = s.speed + u.accel * dt;
  double dist;
  if (v1 < 0.0) {
    dist = u.accel < 0.0 ? s.speed * s.speed / (-2.0 * u.accel) : 0.0;
    v1 = 0.0;
  } else if (v1 > cfg.v_max) {
    const double t_sat = u.accel > 0.0 ? (cfg.v_max - s.speed) / u.accel : 0.0;
    dist = s.speed * t_sat + 0.5 * u.accel * t_sat * t_sat + cfg.v_max * (dt - t_sat);
    v1 = cfg.v_max;
  } else {
    dist = 0.5 * (s.speed + v1) * dt;
  }
  const double k = std::tan(u.steer) / cfg.wheelbase;
  const double dh = k * dist;
  VehicleState n = s;
  if (std::abs(dh) < 1e-9) {
    // second-order expansion of the arc for nearly straight motion
    n.x += dist * (std::cos(s.heading) - 0.5 * dh * std::sin(s.heading));
    n.y += dist * (std::sin(s.heading) + 0.5 * dh * std::cos(s.heading));
  } else {
    n.x += (std::sin(s.heading + dh) - std::sin(s.heading)) / k;
    n.y += (std::cos(s.heading) - std::cos(s.heading + dh)) / k;
  }
  n.heading = wrap_angle(s.heading + dh);
  n.speed = v1;
  n.accel = u.accel;
  return n;
}

inline Trajectory rollout_bicycle(const VehicleState& start, std::span<const Control> controls, double dt,
                                  const WorldConfig& cfg) {
  require(dt > 0.0, errc::kDomain, "rollout dt must be positive");
  Trajectory traj;
  traj.dt = dt;
  traj.poses.reserve(controls.size());
  VehicleState s = start;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    const auto& u = controls[k];
    if (!std::isfinite(u.accel) || !std::isfinite(u.steer))
      throw Error(errc::kNonFinite, "non-finite control at step " + std::to_string(k));
    require(std::abs(u.steer) <= cfg.steer_max + 1e-12, errc::kDomain,
            "steer " + std::to_string(u.steer) + " exceeds steer_max at step " + std::to_string(k));
    s = bicycle_step(s, u, dt, cfg);
    traj.poses.push_back(pose_of(s));
  }
  return traj;
}

}  // namespace rapid::world

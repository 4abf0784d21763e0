#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "rapid/world/scenario.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::world {

struct IdmParams {
  double headway = 2.0;      // s
  double max_accel = 2.0;    // m/s^2
  double comfort_decel = 3.0;
  double min_gap = 2.0;      // m, standstill bumper gap
  double exponent = 4.0;
};

/// Intelligent Driver Model acceleration. `gap` is bumper to bumper; pass an
/// infinite gap for free road.
inline double idm_accel(double speed, double desired_speed, double gap, double lead_speed, const IdmParams& p) {
  const double v0 = std::max(desired_speed, 0.1);
  double a = p.max_accel * (1.0 - std::pow(std::max(speed, 0.0) / v0, p.exponent));
  if (std::isfinite(gap)) {
    const double dv = speed - lead_speed;
    const double s_star =
        p.min_gap + std::max(0.0, speed * p.headway + speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
    const double g = std::max(gap, 0.1);
    a -= p.max_accel * (s_star / g) * (s_star / g);
  }
  return a;
}

struct ExpertConfig {
  IdmParams idm;
  double lookahead_min = 8.0;
  double lookahead_gain = 1.0;  // s, lookahead = max(min, gain * speed)
  double pass_clearance = 1.2;  // m between footprints while passing
  double pass_ramp = 20.0;      // m to shift onto / back from the passing offset
  double overlap_margin = 0.3;  // m, lateral slack when deciding who is in the way
  double stopped_speed = 0.5;   // agents slower than this are obstacles
};

namespace detail {

struct AgentOnRoad {
  Frenet f;
  double speed;
  double half_length;
  double half_width;
};

inline double smoothstep01(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace detail

/// Lateral reference used by the expert: zero, or a bump around one parked
/// agent when the corridor leaves room to pass on the side chosen by mode.
struct PassPlan {
  double obstacle_s = 0.0;
  double offset = 0.0;
  double hold = 0.0;
  double ramp = 20.0;

  double lateral_at(double s) const {
    const double u = std::abs(s - obstacle_s);
    if (u <= hold) return offset;
    return offset * (1.0 - detail::smoothstep01((u - hold) / ramp));
  }
};

inline int pass_side(std::uint64_t mode_seed) { return (mode_seed & 1u) == 0 ? 1 : -1; }

/// Scripted demonstrator: IDM on speed, pure pursuit on a mode-dependent
/// lateral reference, rolled out through the bicycle model. Other agents are
/// predicted at constant speed along the road.
inline Trajectory expert_demonstrate(const SceneContext& scene, std::uint64_t mode_seed, const WorldConfig& cfg,
                                     const ExpertConfig& ex = {}) {
  scene.validate(cfg);
  const Centerline& road = *scene.centerline;
  const VehicleState& start = scene.ego();
  const Frenet ego_f = road.project({start.x, start.y});

  std::vector<detail::AgentOnRoad> agents;
  for (const auto& a : scene.agents) {
    if (!a.valid) continue;
    agents.push_back({road.project({a.state.x, a.state.y}), a.state.speed, a.half_length, a.half_width});
  }

  std::optional<PassPlan> pass;
  for (const auto& a : agents) {
    const double hold = a.half_length + cfg.ego_half_length + 3.0;
    const bool ahead = a.f.s - ego_f.s > -(hold + ex.pass_ramp);
    const bool blocks = std::abs(a.f.d) < a.half_width + cfg.ego_half_width + ex.overlap_margin;
    if (!ahead || !blocks || a.speed > ex.stopped_speed) continue;
    const double offset = a.f.d + pass_side(mode_seed) * (a.half_width + cfg.ego_half_width + ex.pass_clearance);
    if (std::abs(offset) + cfg.ego_half_width > scene.corridor_half_width) continue;
    if (!pass || a.f.s < pass->obstacle_s) {
      pass = PassPlan{a.f.s, offset, hold, ex.pass_ramp};
    }
  }
  auto lateral_ref = [&](double s) { return pass ? pass->lateral_at(s) : 0.0; };

  std::vector<Control> controls;
  controls.reserve(static_cast<std::size_t>(cfg.horizon));
  VehicleState s = start;
  for (int k = 0; k < cfg.horizon; ++k) {
    const double t = k * cfg.dt;
    const Frenet f = road.project({s.x, s.y});

    double gap = std::numeric_limits<double>::infinity();
    double lead_speed = 0.0;
    for (const auto& a : agents) {
      const double a_s = a.f.s + a.speed * t;
      const double dist = a_s - f.s;
      if (dist <= 0.0) continue;
      if (std::abs(a.f.d - lateral_ref(a_s)) >= a.half_width + cfg.ego_half_width + ex.overlap_margin) continue;
      const double g = dist - a.half_length - cfg.ego_half_length;
      if (g < gap) {
        gap = g;
        lead_speed = a.speed;
      }
    }
    const double accel =
        std::clamp(idm_accel(s.speed, scene.speed_limit, gap, lead_speed, ex.idm), cfg.accel_min, cfg.accel_max);

    const double lookahead = std::max(ex.lookahead_min, ex.lookahead_gain * s.speed);
    const Vec2 target = road.to_world(f.s + lookahead, lateral_ref(f.s + lookahead));
    const double bearing = std::atan2(target.y() - s.y, target.x() - s.x) - s.heading;
    const double chord = std::max(std::hypot(target.x() - s.x, target.y() - s.y), 1e-3);
    const double steer =
        std::clamp(std::atan(2.0 * cfg.wheelbase * std::sin(bearing) / chord), -cfg.steer_max, cfg.steer_max);

    const Control u{accel, steer};
    controls.push_back(u);
    s = bicycle_step(s, u, cfg.dt, cfg);
  }
  return rollout_bicycle(start, controls, cfg.dt, cfg);
}

}  // namespace rapid::world

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rapid/core/error.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/world/geometry.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::world {

struct AgentSlot {
  VehicleState state;
  double half_length = 2.0;
  double half_width = 1.0;
  bool valid = false;
};

/// World snapshot at a decision time.
struct SceneContext {
  std::vector<VehicleState> ego_history;  // oldest first; back() is the current state
  std::vector<AgentSlot> agents;          // fixed size, padded with invalid slots
  std::shared_ptr<const Centerline> centerline;
  double corridor_half_width = 2.5;
  double speed_limit = 12.0;
  double goal_arc_length = 1e9;

  const VehicleState& ego() const { return ego_history.back(); }

  void validate(const WorldConfig& cfg) const {
    require(centerline && !centerline->empty(), errc::kDomain, "scene has an empty centerline");
    require(static_cast<int>(ego_history.size()) == cfg.history, errc::kShape,
            "ego history must hold " + std::to_string(cfg.history) + " states");
    require(static_cast<int>(agents.size()) == cfg.max_agents, errc::kShape,
            "agent slots must number " + std::to_string(cfg.max_agents));
    require(corridor_half_width > 0 && speed_limit > 0, errc::kDomain, "corridor and speed limit must be positive");
  }
};

enum class ScenarioKind { lane_follow, lead_stop, obstacle_pass, merge };

inline constexpr ScenarioKind kAllKinds[] = {ScenarioKind::lane_follow, ScenarioKind::lead_stop,
                                             ScenarioKind::obstacle_pass, ScenarioKind::merge};

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::lane_follow: return "lane_follow";
    case ScenarioKind::lead_stop: return "lead_stop";
    case ScenarioKind::obstacle_pass: return "obstacle_pass";
    case ScenarioKind::merge: return "merge";
  }
  return "?";
}

inline ScenarioKind parse_kind(std::string_view name) {
  for (auto k : kAllKinds)
    if (to_string(k) == name) return k;
  throw Error(errc::kDomain, "unknown scenario kind '" + std::string(name) + "'");
}

/// Agent position expressed along the road.
struct RoadState {
  double s = 0.0;
  double d = 0.0;
  double speed = 0.0;
  double accel = 0.0;
  double lateral_rate = 0.0;
};

enum class AgentBehavior { cruise, brake_to_stop, parked, merge };

/// Closed-form open-loop behaviour of one surrounding vehicle.
struct AgentScript {
  AgentBehavior behavior = AgentBehavior::cruise;
  double s0 = 0.0;
  double d0 = 0.0;
  double v0 = 0.0;
  double half_length = 2.0;
  double half_width = 1.0;
  double brake_time = 0.0;
  double decel = 3.0;
  double merge_time = 0.0;
  double merge_duration = 3.0;
  double d_target = 0.0;

  RoadState at(double t) const {
    RoadState r{s0, d0, v0, 0.0, 0.0};
    switch (behavior) {
      case AgentBehavior::parked:
        r.speed = 0.0;
        break;
      case AgentBehavior::cruise:
        r.s = s0 + v0 * t;
        break;
      case AgentBehavior::brake_to_stop: {
        if (t <= brake_time) {
          r.s = s0 + v0 * t;
          break;
        }
        const double tau = t - brake_time;
        const double t_stop = v0 / decel;
        const double s_b = s0 + v0 * brake_time;
        if (tau < t_stop) {
          r.s = s_b + v0 * tau - 0.5 * decel * tau * tau;
          r.speed = v0 - decel * tau;
          r.accel = -decel;
        } else {
          r.s = s_b + v0 * v0 / (2.0 * decel);
          r.speed = 0.0;
        }
        break;
      }
      case AgentBehavior::merge: {
        r.s = s0 + v0 * t;
        const double u = std::clamp((t - merge_time) / merge_duration, 0.0, 1.0);
        const double smooth = u * u * (3.0 - 2.0 * u);
        r.d = d0 + (d_target - d0) * smooth;
        r.lateral_rate = (u > 0.0 && u < 1.0) ? (d_target - d0) * 6.0 * u * (1.0 - u) / merge_duration : 0.0;
        break;
      }
    }
    return r;
  }

  /// Speed the agent would like to hold at time t (used by reactive agents).
  double desired_speed(double t) const { return at(t).speed; }
};

inline VehicleState to_vehicle_state(const Centerline& road, const RoadState& r) {
  const Vec2 p = road.to_world(r.s, r.d);
  const double slip = r.speed > 0.1 ? std::atan2(r.lateral_rate, r.speed) : 0.0;
  return {p.x(), p.y(), wrap_angle(road.heading_at(r.s) + slip), r.speed, r.accel};
}

/// A generated episode: road, ego start, and scripted agents.
struct Scenario {
  ScenarioKind kind = ScenarioKind::lane_follow;
  std::uint64_t seed = 0;
  std::uint64_t mode_seed = 0;
  std::shared_ptr<const Centerline> road;
  double corridor_half_width = 2.5;
  double speed_limit = 12.0;
  double goal_arc_length = 1e9;
  VehicleState ego_start;
  std::vector<AgentScript> scripts;
};

inline SceneContext make_scene(const Scenario& sc, std::vector<VehicleState> ego_history,
                               const std::vector<RoadState>& agent_states, const WorldConfig& cfg) {
  SceneContext scene;
  scene.ego_history = std::move(ego_history);
  scene.centerline = sc.road;
  scene.corridor_half_width = sc.corridor_half_width;
  scene.speed_limit = sc.speed_limit;
  scene.goal_arc_length = sc.goal_arc_length;
  scene.agents.assign(static_cast<std::size_t>(cfg.max_agents), AgentSlot{});
  for (std::size_t i = 0; i < sc.scripts.size() && i < scene.agents.size(); ++i) {
    auto& slot = scene.agents[i];
    slot.state = to_vehicle_state(*sc.road, agent_states[i]);
    slot.half_length = sc.scripts[i].half_length;
    slot.half_width = sc.scripts[i].half_width;
    slot.valid = true;
  }
  return scene;
}

inline std::vector<RoadState> scripted_states(const Scenario& sc, double t) {
  std::vector<RoadState> out;
  out.reserve(sc.scripts.size());
  for (const auto& a : sc.scripts) out.push_back(a.at(t));
  return out;
}

/// Ego history for the initial scene: constant-speed extrapolation backwards.
inline std::vector<VehicleState> initial_history(const VehicleState& ego, const WorldConfig& cfg) {
  std::vector<VehicleState> hist(static_cast<std::size_t>(cfg.history));
  for (int i = 0; i < cfg.history; ++i) {
    const double back = (cfg.history - 1 - i) * cfg.dt * ego.speed;
    VehicleState s = ego;
    s.x -= back * std::cos(ego.heading);
    s.y -= back * std::sin(ego.heading);
    s.accel = 0.0;
    hist[static_cast<std::size_t>(i)] = s;
  }
  return hist;
}

inline SceneContext initial_scene(const Scenario& sc, const WorldConfig& cfg) {
  return make_scene(sc, initial_history(sc.ego_start, cfg), scripted_states(sc, 0.0), cfg);
}

/// Scripted future poses of each agent slot for t0+dt .. t0+H*dt. Invalid
/// slots get an empty trajectory.
inline std::vector<Trajectory> agent_futures(const Scenario& sc, double t0, int horizon, const WorldConfig& cfg) {
  std::vector<Trajectory> out(static_cast<std::size_t>(cfg.max_agents));
  for (auto& f : out) f.dt = cfg.dt;
  for (std::size_t i = 0; i < sc.scripts.size() && i < out.size(); ++i) {
    for (int k = 1; k <= horizon; ++k) {
      out[i].poses.push_back(pose_of(to_vehicle_state(*sc.road, sc.scripts[i].at(t0 + k * cfg.dt))));
    }
  }
  return out;
}

constexpr double kEgoStartArc = 20.0;

/// Deterministic in (seed, kind). obstacle_pass blocks the lane with a parked
/// vehicle inside a wide corridor so that both sides can be used to pass.
inline Scenario generate_scenario(std::uint64_t seed, ScenarioKind kind, const WorldConfig& cfg) {
  Rng rng = make_stream(seed, std::string("scenario/") + std::string(to_string(kind)));
  Scenario sc;
  sc.kind = kind;
  sc.seed = seed;
  sc.mode_seed = rng();

  double curvature = 0.0;
  double lead_in = uniform(rng, 0.0, 40.0);
  double ego_speed = 0.0;
  const double d0 = uniform(rng, -0.15, 0.15);
  const double heading_err = uniform(rng, -0.02, 0.02);

  switch (kind) {
    case ScenarioKind::lane_follow: {
      curvature = uniform(rng, -1.0 / 250.0, 1.0 / 250.0);
      sc.speed_limit = uniform(rng, 10.0, 14.0);
      sc.corridor_half_width = 2.5;
      ego_speed = sc.speed_limit * uniform(rng, 0.6, 1.0);
      if (uniform(rng, 0.0, 1.0) < 0.5) {
        AgentScript lead;
        lead.behavior = AgentBehavior::cruise;
        lead.s0 = kEgoStartArc + uniform(rng, 40.0, 70.0);
        lead.v0 = sc.speed_limit * uniform(rng, 0.7, 1.0);
        sc.scripts.push_back(lead);
      }
      break;
    }
    case ScenarioKind::lead_stop: {
      curvature = uniform(rng, -1.0 / 400.0, 1.0 / 400.0);
      sc.speed_limit = uniform(rng, 10.0, 14.0);
      sc.corridor_half_width = 2.0;
      ego_speed = uniform(rng, 6.0, 11.0);
      AgentScript lead;
      lead.behavior = AgentBehavior::brake_to_stop;
      lead.s0 = kEgoStartArc + uniform(rng, 25.0, 45.0);
      lead.v0 = uniform(rng, 5.0, 9.0);
      lead.brake_time = uniform(rng, 0.5, 3.0);
      lead.decel = uniform(rng, 2.0, 4.0);
      sc.scripts.push_back(lead);
      break;
    }
    case ScenarioKind::obstacle_pass: {
      curvature = uniform(rng, -1.0 / 500.0, 1.0 / 500.0);
      sc.speed_limit = uniform(rng, 9.0, 12.0);
      sc.corridor_half_width = 5.0;
      ego_speed = uniform(rng, 6.0, 10.0);
      AgentScript obstacle;
      obstacle.behavior = AgentBehavior::parked;
      obstacle.s0 = kEgoStartArc + uniform(rng, 30.0, 50.0);
      obstacle.d0 = uniform(rng, -0.3, 0.3);
      sc.scripts.push_back(obstacle);
      break;
    }
    case ScenarioKind::merge: {
      curvature = uniform(rng, -1.0 / 400.0, 1.0 / 400.0);
      sc.speed_limit = uniform(rng, 10.0, 14.0);
      sc.corridor_half_width = 2.5;
      ego_speed = uniform(rng, 7.0, 11.0);
      AgentScript m;
      m.behavior = AgentBehavior::merge;
      m.s0 = kEgoStartArc + uniform(rng, 15.0, 35.0);
      m.d0 = (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0) * 3.5;
      m.v0 = uniform(rng, 5.0, 9.0);
      m.merge_time = uniform(rng, 0.0, 2.0);
      m.merge_duration = 3.0;
      m.d_target = 0.0;
      sc.scripts.push_back(m);
      break;
    }
  }

  sc.road = std::make_shared<const Centerline>(make_road(400.0, curvature, kEgoStartArc + lead_in));
  sc.goal_arc_length = kEgoStartArc + 250.0;
  const Vec2 p = sc.road->to_world(kEgoStartArc, d0);
  sc.ego_start = {p.x(), p.y(), wrap_angle(sc.road->heading_at(kEgoStartArc) + heading_err),
                  std::min(ego_speed, cfg.v_max), 0.0};
  return sc;
}

}  // namespace rapid::world

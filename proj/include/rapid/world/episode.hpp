#pragma once

#include <vector>

#include "rapid/core/error.hpp"
#include "rapid/world/scenario.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::world {

/// Executes the first `steps` poses of a plan with perfect tracking. Speed and
/// acceleration are recovered from the pose displacements.
inline std::vector<VehicleState> execute_prefix(const VehicleState& current, const Trajectory& plan, int steps) {
  require(steps >= 1 && steps <= plan.horizon(), errc::kShape, "cannot execute more steps than the plan holds");
  require(plan.all_finite(), errc::kNonFinite, "plan contains non-finite poses");
  std::vector<VehicleState> out;
  VehicleState prev = current;
  for (int k = 0; k < steps; ++k) {
    const Pose& p = plan.poses[static_cast<std::size_t>(k)];
    VehicleState s{p.x, p.y, p.heading, 0.0, 0.0};
    s.speed = std::hypot(p.x - prev.x, p.y - prev.y) / plan.dt;
    s.accel = (s.speed - prev.speed) / plan.dt;
    out.push_back(s);
    prev = s;
  }
  return out;
}

/// Appends executed states and keeps the most recent `cfg.history` entries.
inline std::vector<VehicleState> advance_history(std::vector<VehicleState> history,
                                                 const std::vector<VehicleState>& executed, const WorldConfig& cfg) {
  history.insert(history.end(), executed.begin(), executed.end());
  if (static_cast<int>(history.size()) > cfg.history)
    history.erase(history.begin(), history.end() - cfg.history);
  return history;
}

inline bool goal_reached(const SceneContext& scene) {
  const auto& e = scene.ego();
  return scene.centerline->project({e.x, e.y}).s >= scene.goal_arc_length;
}

}  // namespace rapid::world

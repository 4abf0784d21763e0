#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "rapid/core/error.hpp"
#include "rapid/world/scenario.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::pdm {

using world::SceneContext;
using world::Trajectory;
using world::VehicleState;
using world::WorldConfig;

struct MetricBreakdown {
  double no_collision = 1.0;
  double drivable_area = 1.0;
  double direction = 1.0;
  double speed_limit = 1.0;
  double progress = 1.0;
  double ttc = 1.0;
  double comfort = 1.0;
  double lane_following = 1.0;
  double proximity = 1.0;

  static constexpr std::array<std::string_view, 9> kNames = {
      "no_collision", "drivable_area", "direction", "speed_limit",  "progress",
      "ttc",          "comfort",       "lane_following", "proximity"};

  std::array<double, 9> values() const {
    return {no_collision, drivable_area, direction, speed_limit, progress, ttc, comfort, lane_following, proximity};
  }
  static MetricBreakdown from_values(const std::array<double, 9>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
  }
};

/// Multipliers (no_collision, drivable_area, direction) gate the score; these
/// weights form the weighted mean of the remaining metrics.
struct ScorerWeights {
  double ttc = 5.0;
  double comfort = 5.0;
  double proximity = 5.0;
  double progress = 2.0;
  double speed_limit = 4.0;
  double lane_following = 2.0;

  double total() const { return ttc + comfort + proximity + progress + speed_limit + lane_following; }

  void validate() const {
    require(ttc >= 0 && comfort >= 0 && proximity >= 0 && progress >= 0 && speed_limit >= 0 && lane_following >= 0,
            errc::kConfig, "scorer weights must be non-negative");
    require(total() > 0, errc::kConfig, "scorer weighted set is empty");
  }
};

struct ScorerConfig {
  ScorerWeights weights;
  double ttc_critical = 0.95;  // s
  double ttc_safe = 3.0;       // s
  double max_accel = 4.0;      // m/s^2
  double max_jerk = 8.0;       // m/s^3
  double max_yaw_rate = 0.8;   // rad/s
  double proximity_base = 3.0;       // m
  double proximity_headway = 2.0;    // d_comfort = headway * speed * dt + base
  double direction_tolerance = 0.5;  // m of total backwards travel scored 0.5
  double lane_tolerance = 1.0;       // m
  double reference_accel = 2.0;      // m/s^2, progress reference rollout
  double overlap_margin = 0.3;       // m, lateral slack for lead selection

  void validate() const {
    weights.validate();
    require(ttc_critical > 0 && ttc_safe > ttc_critical, errc::kConfig, "need 0 < ttc_critical < ttc_safe");
    require(max_accel > 0 && max_jerk > 0 && max_yaw_rate > 0, errc::kConfig, "comfort bounds must be positive");
    require(lane_tolerance > 0 && proximity_base > 0, errc::kConfig, "lane/proximity scales must be positive");
  }
};

struct ScoreResult {
  double score = 0.0;
  MetricBreakdown breakdown;
};

inline double aggregate(const MetricBreakdown& m, const ScorerWeights& w) {
  const double weighted = w.ttc * m.ttc + w.comfort * m.comfort + w.proximity * m.proximity +
                          w.progress * m.progress + w.speed_limit * m.speed_limit +
                          w.lane_following * m.lane_following;
  return m.no_collision * m.drivable_area * m.direction * (weighted / w.total());
}

/// Time to collision from a centre-to-centre gap along the road under
/// constant speeds; infinite when the gap is not closing.
inline double time_to_collision(double gap, double ego_speed, double lead_speed) {
  const double closing = ego_speed - lead_speed;
  if (closing <= 0.0) return std::numeric_limits<double>::infinity();
  return std::max(gap, 0.0) / closing;
}

/// 1 at or above the safe threshold, 0 below the critical one, linear between.
inline double ttc_contribution(double ttc, const ScorerConfig& cfg) {
  if (ttc >= cfg.ttc_safe) return 1.0;
  if (ttc < cfg.ttc_critical) return 0.0;
  return (ttc - cfg.ttc_critical) / (cfg.ttc_safe - cfg.ttc_critical);
}

namespace detail {

// Ego path including the current state at index 0.
struct EgoPath {
  std::vector<world::Vec2> pos;
  std::vector<double> heading;
  std::vector<double> s;
  std::vector<double> d;
  std::vector<double> arc_speed;  // index k>=1: (s_k - s_{k-1}) / dt; index 0: current speed
  std::vector<double> speed;      // index k>=1: |p_k - p_{k-1}| / dt
  double dt = 0.5;
  int steps() const { return static_cast<int>(pos.size()) - 1; }
};

inline EgoPath build_path(const SceneContext& scene, const Trajectory& traj) {
  require(traj.dt > 0.0, errc::kDomain, "trajectory dt must be positive");
  require(traj.all_finite(), errc::kNonFinite, "trajectory contains non-finite poses");
  const auto& road = *scene.centerline;
  const VehicleState& ego = scene.ego();
  EgoPath p;
  p.dt = traj.dt;
  p.pos.push_back({ego.x, ego.y});
  p.heading.push_back(ego.heading);
  for (const auto& q : traj.poses) {
    p.pos.push_back(q.position());
    p.heading.push_back(q.heading);
  }
  for (const auto& x : p.pos) {
    const auto f = road.project(x);
    p.s.push_back(f.s);
    p.d.push_back(f.d);
  }
  p.arc_speed.push_back(ego.speed);
  p.speed.push_back(ego.speed);
  for (std::size_t k = 1; k < p.pos.size(); ++k) {
    p.arc_speed.push_back((p.s[k] - p.s[k - 1]) / p.dt);
    p.speed.push_back((p.pos[k] - p.pos[k - 1]).norm() / p.dt);
  }
  return p;
}

struct AgentPath {
  std::vector<world::Vec2> pos;  // index 0 = current
  std::vector<double> heading;
  std::vector<double> s, d, arc_speed;
  double half_length = 2.0;
  double half_width = 1.0;
};

inline std::vector<AgentPath> build_agents(const SceneContext& scene, const std::vector<Trajectory>& futures,
                                           const Trajectory& traj) {
  require(futures.size() == scene.agents.size(), errc::kShape,
          "agent_futures must have one entry per agent slot");
  const auto& road = *scene.centerline;
  std::vector<AgentPath> out;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const auto& slot = scene.agents[i];
    if (!slot.valid) continue;
    const auto& fut = futures[i];
    require(fut.horizon() == traj.horizon(), errc::kShape,
            "agent future horizon " + std::to_string(fut.horizon()) + " != trajectory horizon " +
                std::to_string(traj.horizon()));
    require(std::abs(fut.dt - traj.dt) < 1e-12, errc::kShape, "agent future dt differs from trajectory dt");
    AgentPath a;
    a.half_length = slot.half_length;
    a.half_width = slot.half_width;
    a.pos.push_back({slot.state.x, slot.state.y});
    a.heading.push_back(slot.state.heading);
    for (const auto& q : fut.poses) {
      a.pos.push_back(q.position());
      a.heading.push_back(q.heading);
    }
    for (const auto& x : a.pos) {
      const auto f = road.project(x);
      a.s.push_back(f.s);
      a.d.push_back(f.d);
    }
    a.arc_speed.push_back(slot.state.speed);
    for (std::size_t k = 1; k < a.pos.size(); ++k) a.arc_speed.push_back((a.s[k] - a.s[k - 1]) / traj.dt);
    out.push_back(std::move(a));
  }
  return out;
}

// Nearest agent ahead of the ego along the road whose lateral extent overlaps the ego's.
inline const AgentPath* lead_at(const EgoPath& ego, const std::vector<AgentPath>& agents, std::size_t k,
                                const WorldConfig& wc, const ScorerConfig& sc) {
  const AgentPath* best = nullptr;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto& a : agents) {
    const double gap = a.s[k] - ego.s[k];
    if (gap <= 0.0) continue;
    if (std::abs(a.d[k] - ego.d[k]) >= a.half_width + wc.ego_half_width + sc.overlap_margin) continue;
    if (gap < best_gap) {
      best_gap = gap;
      best = &a;
    }
  }
  return best;
}

inline std::array<world::Vec2, 2> disc_centers(const world::Vec2& c, double heading, double half_length,
                                                double half_width) {
  const double off = std::max(half_length - half_width, 0.0);
  const world::Vec2 u(std::cos(heading), std::sin(heading));
  return {c + off * u, c - off * u};
}

inline bool footprints_overlap(const world::Vec2& c1, double h1, double hl1, double hw1, const world::Vec2& c2,
                               double h2, double hl2, double hw2) {
  const double r = std::sqrt(2.0) * (hw1 + hw2);
  for (const auto& a : disc_centers(c1, h1, hl1, hw1))
    for (const auto& b : disc_centers(c2, h2, hl2, hw2))
      if ((a - b).norm() < r) return true;
  return false;
}

inline double no_collision(const EgoPath& ego, const std::vector<AgentPath>& agents, const WorldConfig& wc) {
  for (int k = 1; k <= ego.steps(); ++k)
    for (const auto& a : agents)
      if (footprints_overlap(ego.pos[k], ego.heading[k], wc.ego_half_length, wc.ego_half_width, a.pos[k],
                             a.heading[k], a.half_length, a.half_width))
        return 0.0;
  return 1.0;
}

inline double drivable_area(const EgoPath& ego, const SceneContext& scene) {
  for (int k = 1; k <= ego.steps(); ++k)
    if (std::abs(ego.d[k]) > scene.corridor_half_width) return 0.0;
  return 1.0;
}

inline double direction(const EgoPath& ego, const ScorerConfig& sc) {
  double back = 0.0;
  for (int k = 1; k <= ego.steps(); ++k) back += std::max(0.0, ego.s[k - 1] - ego.s[k]);
  if (back <= 0.0) return 1.0;
  return back <= sc.direction_tolerance ? 0.5 : 0.0;
}

inline double progress(const EgoPath& ego, const SceneContext& scene, const ScorerConfig& sc) {
  double v = scene.ego().speed;
  double reference = 0.0;
  for (int k = 0; k < ego.steps(); ++k) {
    const double v1 = std::min(v + sc.reference_accel * ego.dt, scene.speed_limit);
    reference += 0.5 * (v + std::max(v1, 0.0)) * ego.dt;
    v = v1;
  }
  reference = std::min(reference, scene.goal_arc_length - ego.s[0]);
  if (reference <= 1e-6) return 1.0;
  return std::clamp((ego.s.back() - ego.s[0]) / reference, 0.0, 1.0);
}

inline double speed_limit(const EgoPath& ego, const SceneContext& scene) {
  double sum = 0.0;
  for (int k = 1; k <= ego.steps(); ++k)
    sum += std::clamp(1.0 - std::max(0.0, ego.speed[k] - scene.speed_limit) / scene.speed_limit, 0.0, 1.0);
  return sum / ego.steps();
}

inline double lane_following(const EgoPath& ego, const ScorerConfig& sc) {
  double sum = 0.0;
  for (int k = 1; k <= ego.steps(); ++k) sum += std::clamp(1.0 - std::abs(ego.d[k]) / sc.lane_tolerance, 0.0, 1.0);
  return sum / ego.steps();
}

inline double ttc(const EgoPath& ego, const std::vector<AgentPath>& agents, const WorldConfig& wc,
                  const ScorerConfig& sc) {
  double min_ttc = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= ego.steps(); ++k) {
    const auto* lead = lead_at(ego, agents, static_cast<std::size_t>(k), wc, sc);
    if (!lead) continue;
    min_ttc = std::min(min_ttc, time_to_collision(lead->s[k] - ego.s[k], ego.arc_speed[k], lead->arc_speed[k]));
  }
  return ttc_contribution(min_ttc, sc);
}

inline double proximity(const EgoPath& ego, const std::vector<AgentPath>& agents, const WorldConfig& wc,
                        const ScorerConfig& sc) {
  double sum = 0.0;
  for (int k = 1; k <= ego.steps(); ++k) {
    const auto* lead = lead_at(ego, agents, static_cast<std::size_t>(k), wc, sc);
    if (!lead) {
      sum += 1.0;
      continue;
    }
    const double gap = lead->s[k] - ego.s[k] - lead->half_length - wc.ego_half_length;
    const double comfort = sc.proximity_headway * ego.speed[k] * ego.dt + sc.proximity_base;
    sum += std::clamp(gap / comfort, 0.0, 1.0);
  }
  return sum / ego.steps();
}

// Fraction of steps within all comfort bounds; derivatives by finite differences.
inline double comfort(const std::vector<world::Vec2>& pos, const std::vector<double>& heading, double dt,
                      std::optional<VehicleState> start, const ScorerConfig& sc) {
  const std::size_t n = pos.size();
  const std::size_t first = 1;
  std::vector<double> v(n, 0.0), a(n, 0.0), j(n, 0.0), w(n, 0.0);
  std::vector<bool> has_a(n, false), has_j(n, false);
  if (start) {
    v[0] = start->speed;
    a[0] = start->accel;
    has_a[0] = true;
  }
  for (std::size_t k = first; k < n; ++k) {
    v[k] = (pos[k] - pos[k - 1]).norm() / dt;
    w[k] = world::wrap_angle(heading[k] - heading[k - 1]) / dt;
    if (k >= 2 || start) {
      a[k] = (v[k] - v[k - 1]) / dt;
      has_a[k] = true;
    }
    if (has_a[k] && has_a[k - 1]) {
      j[k] = (a[k] - a[k - 1]) / dt;
      has_j[k] = true;
    }
  }
  int ok = 0;
  for (std::size_t k = first; k < n; ++k) {
    const bool good = std::abs(w[k]) <= sc.max_yaw_rate && (!has_a[k] || std::abs(a[k]) <= sc.max_accel) &&
                      (!has_j[k] || std::abs(j[k]) <= sc.max_jerk);
    ok += good ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(n - first);
}

}  // namespace detail

/// Comfort of a trajectory on its own (H-1 finite-difference steps).
inline double comfort_metric(const Trajectory& traj, const ScorerConfig& sc = {}) {
  require(traj.horizon() >= 3, errc::kDomain, "comfort needs at least 3 poses");
  std::vector<world::Vec2> pos;
  std::vector<double> heading;
  for (const auto& p : traj.poses) {
    pos.push_back(p.position());
    heading.push_back(p.heading);
  }
  return detail::comfort(pos, heading, traj.dt, std::nullopt, sc);
}

/// Comfort including the transition out of the current state (H steps).
inline double comfort_metric(const Trajectory& traj, const VehicleState& start, const ScorerConfig& sc) {
  require(traj.horizon() >= 3, errc::kDomain, "comfort needs at least 3 poses");
  std::vector<world::Vec2> pos{{start.x, start.y}};
  std::vector<double> heading{start.heading};
  for (const auto& p : traj.poses) {
    pos.push_back(p.position());
    heading.push_back(p.heading);
  }
  return detail::comfort(pos, heading, traj.dt, start, sc);
}

inline double ttc_metric(const SceneContext& scene, const Trajectory& traj, const std::vector<Trajectory>& futures,
                         const WorldConfig& wc, const ScorerConfig& sc = {}) {
  const auto ego = detail::build_path(scene, traj);
  return detail::ttc(ego, detail::build_agents(scene, futures, traj), wc, sc);
}

inline double proximity_metric(const SceneContext& scene, const Trajectory& traj,
                               const std::vector<Trajectory>& futures, const WorldConfig& wc,
                               const ScorerConfig& sc = {}) {
  const auto ego = detail::build_path(scene, traj);
  return detail::proximity(ego, detail::build_agents(scene, futures, traj), wc, sc);
}

inline double progress_metric(const SceneContext& scene, const Trajectory& traj, const ScorerConfig& sc = {}) {
  return detail::progress(detail::build_path(scene, traj), scene, sc);
}
inline double drivable_area_check(const SceneContext& scene, const Trajectory& traj) {
  return detail::drivable_area(detail::build_path(scene, traj), scene);
}
inline double direction_check(const SceneContext& scene, const Trajectory& traj, const ScorerConfig& sc = {}) {
  return detail::direction(detail::build_path(scene, traj), sc);
}
inline double speed_limit_metric(const SceneContext& scene, const Trajectory& traj) {
  return detail::speed_limit(detail::build_path(scene, traj), scene);
}
inline double lane_following_metric(const SceneContext& scene, const Trajectory& traj, const ScorerConfig& sc = {}) {
  return detail::lane_following(detail::build_path(scene, traj), sc);
}

/// Composite score: product of the three multipliers times the weighted mean
/// of the six weighted metrics. `agent_futures` has one entry per agent slot.
inline ScoreResult score(const SceneContext& scene, const Trajectory& traj, const std::vector<Trajectory>& futures,
                         const WorldConfig& wc, const ScorerConfig& sc = {}) {
  require(traj.horizon() >= 3, errc::kDomain, "scoring needs at least 3 poses");
  const auto ego = detail::build_path(scene, traj);
  const auto agents = detail::build_agents(scene, futures, traj);
  ScoreResult r;
  auto& m = r.breakdown;
  m.no_collision = detail::no_collision(ego, agents, wc);
  m.drivable_area = detail::drivable_area(ego, scene);
  m.direction = detail::direction(ego, sc);
  m.speed_limit = detail::speed_limit(ego, scene);
  m.progress = detail::progress(ego, scene, sc);
  m.ttc = detail::ttc(ego, agents, wc, sc);
  m.comfort = detail::comfort(ego.pos, ego.heading, ego.dt, scene.ego(), sc);
  m.lane_following = detail::lane_following(ego, sc);
  m.proximity = detail::proximity(ego, agents, wc, sc);
  r.score = aggregate(m, sc.weights);
  return r;
}

}  // namespace rapid::pdm

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "rapid/core/error.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/data/dataset.hpp"
#include "rapid/diffusion/prior.hpp"
#include "rapid/pdm/scorer.hpp"
#include "rapid/srpo/policy.hpp"
#include "rapid/world/encoder.hpp"
#include "rapid/world/episode.hpp"
#include "rapid/world/expert.hpp"
#include "rapid/world/scenario.hpp"

namespace rapid::eval {

/// Anything that maps a scene to a trajectory. The scenario is passed so the
/// scripted expert can read its mode; learned planners ignore it. `rng` is
/// only consumed by stochastic planners.
struct Planner {
  std::string name;
  std::function<world::Trajectory(const world::SceneContext&, const world::Scenario&, Rng&)> plan;
};

inline Planner policy_planner(std::string name, srpo::DeployedPolicy p, world::WorldConfig wc) {
  return {std::move(name), [p = std::move(p), wc](const world::SceneContext& scene, const world::Scenario&, Rng&) {
            return srpo::plan(p, scene, wc);
          }};
}

/// Denoiser plus the normalization and clamp box it was trained under.
struct DeployedPrior {
  diffusion::Denoiser net;
  world::FeatureStats state_stats;
  world::FeatureStats action_stats;
  Eigen::VectorXd box;
  int n_steps = 20;
};

inline world::Trajectory sample_plan(const DeployedPrior& p, const world::SceneContext& scene,
                                     const world::WorldConfig& wc, Rng& rng) {
  const auto enc = world::encode_state(scene, wc, p.state_stats);
  const Eigen::VectorXd a = p.action_stats.denormalize(diffusion::ddpm_sample(p.net, enc.features, p.n_steps, p.box, rng));
  const auto origin = world::pose_of(scene.ego());
  return world::clamp_feasible(world::action_to_trajectory(a, origin, wc.dt), origin, wc);
}

inline Planner diffusion_planner(DeployedPrior p, world::WorldConfig wc) {
  const std::string name = "diffusion";
  return {name, [p = std::move(p), wc](const world::SceneContext& scene, const world::Scenario&, Rng& rng) {
            return sample_plan(p, scene, wc, rng);
          }};
}

inline Planner expert_planner(world::WorldConfig wc, world::ExpertConfig ex = {}) {
  return {"expert", [wc, ex](const world::SceneContext& scene, const world::Scenario& sc, Rng&) {
            return world::expert_demonstrate(scene, sc.mode_seed, wc, ex);
          }};
}

/// Holds the current heading and speed.
inline world::Trajectory constant_velocity_plan(const world::SceneContext& scene, const world::WorldConfig& wc) {
  const auto& e = scene.ego();
  world::Trajectory t;
  t.dt = wc.dt;
  for (int k = 1; k <= wc.horizon; ++k) {
    const double d = e.speed * wc.dt * k;
    t.poses.push_back({e.x + d * std::cos(e.heading), e.y + d * std::sin(e.heading), e.heading});
  }
  return t;
}

inline Planner constant_velocity_planner(world::WorldConfig wc) {
  return {"constant_velocity", [wc](const world::SceneContext& scene, const world::Scenario&, Rng&) {
            return constant_velocity_plan(scene, wc);
          }};
}

struct EvalConfig {
  int episode_len = 20;
  int replan_every = 2;
  bool reactive = false;
  world::IdmParams idm;
  double lane_margin = 0.3;  // m, lateral slack when deciding if the ego is in an agent's lane

  void validate() const {
    require(episode_len >= 1 && replan_every >= 1, errc::kConfig, "episode_len and replan_every must be >= 1");
    require(idm.max_accel > 0 && idm.comfort_decel > 0 && idm.headway > 0, errc::kConfig,
            "IDM parameters must be positive");
  }
};

struct EpisodeResult {
  world::ScenarioKind kind = world::ScenarioKind::lane_follow;
  std::uint64_t seed = 0;
  double composite = 0.0;
  pdm::MetricBreakdown breakdown;
  bool collided = false;
  bool failed = false;
  int steps = 0;
  std::vector<world::VehicleState> ego_trace;             // executed states, start excluded
  std::vector<std::vector<world::VehicleState>> agents;   // per agent, aligned with ego_trace
  std::vector<int> plan_ids;                              // replan index each executed step came from

  friend bool operator==(const EpisodeResult& a, const EpisodeResult& b) {
    const auto same = [](const world::VehicleState& x, const world::VehicleState& y) {
      return x.x == y.x && x.y == y.y && x.heading == y.heading && x.speed == y.speed && x.accel == y.accel;
    };
    const auto same_trace = [&](const std::vector<world::VehicleState>& x, const std::vector<world::VehicleState>& y) {
      return std::equal(x.begin(), x.end(), y.begin(), y.end(), same);
    };
    if (a.agents.size() != b.agents.size()) return false;
    for (std::size_t i = 0; i < a.agents.size(); ++i)
      if (!same_trace(a.agents[i], b.agents[i])) return false;
    return a.kind == b.kind && a.seed == b.seed && a.composite == b.composite &&
           a.breakdown.values() == b.breakdown.values() && a.collided == b.collided && a.failed == b.failed &&
           a.steps == b.steps && same_trace(a.ego_trace, b.ego_trace) && a.plan_ids == b.plan_ids;
  }
};

namespace detail {

/// Reactive agents keep to their script's speed profile and lateral motion but
/// brake for the ego, via IDM, when it sits ahead of them in their lane.
/// Accelerations are clamped to [accel_min, idm.max_accel] and speeds to >= 0.
struct ReactiveAgents {
  std::vector<world::RoadState> state;

  void step(const world::Scenario& sc, double t, const world::VehicleState& ego, const world::WorldConfig& wc,
            const EvalConfig& ec) {
    const auto ego_f = sc.road->project({ego.x, ego.y});
    const double dt = wc.dt;
    for (std::size_t i = 0; i < state.size(); ++i) {
      const auto& script = sc.scripts[i];
      auto& r = state[i];
      const auto next = script.at(t + dt);
      if (script.behavior == world::AgentBehavior::parked) {
        r = next;
        continue;
      }
      double a = (next.speed - r.speed) / dt;
      const bool same_lane = std::abs(ego_f.d - r.d) < script.half_width + wc.ego_half_width + ec.lane_margin;
      if (same_lane && ego_f.s > r.s) {
        const double gap = ego_f.s - r.s - script.half_length - wc.ego_half_length;
        a = std::min(a, world::idm_accel(r.speed, std::max(script.desired_speed(t), r.speed), gap, ego.speed, ec.idm));
      }
      a = std::clamp(a, wc.accel_min, ec.idm.max_accel);
      double v = r.speed + a * dt;
      if (v < 0.0) {
        v = 0.0;
        a = -r.speed / dt;
      }
      r.s += 0.5 * (r.speed + v) * dt;
      r.speed = v;
      r.accel = a;
      r.d = next.d;
      r.lateral_rate = next.lateral_rate;
    }
  }
};

inline bool collides(const world::VehicleState& ego, const std::vector<world::VehicleState>& agents,
                     const world::Scenario& sc, const world::WorldConfig& wc) {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& a = agents[i];
    if (pdm::detail::footprints_overlap({ego.x, ego.y}, ego.heading, wc.ego_half_length, wc.ego_half_width, {a.x, a.y},
                                        a.heading, sc.scripts[i].half_length, sc.scripts[i].half_width))
      return true;
  }
  return false;
}

}  // namespace detail

/// Receding-horizon rollout: plan, execute `replan_every` poses with perfect
/// tracking, advance the agents, repeat. The episode is scored once, on the
/// executed ego trace against the realised agent motion, from the opening
/// scene. A collision ends the episode and zeroes the score; so does a plan
/// with non-finite poses.
inline EpisodeResult run_episode(const Planner& planner, const world::Scenario& sc, const world::WorldConfig& wc,
                                 const pdm::ScorerConfig& pc, const EvalConfig& ec, Rng& rng) {
  ec.validate();
  EpisodeResult res;
  res.kind = sc.kind;
  res.seed = sc.seed;
  res.agents.resize(sc.scripts.size());

  const auto opening = world::initial_scene(sc, wc);
  auto history = opening.ego_history;
  detail::ReactiveAgents reactive{world::scripted_states(sc, 0.0)};
  auto agents_now = reactive.state;
  const int chunk = std::min(ec.replan_every, wc.horizon);

  for (int plan_id = 0; res.steps < ec.episode_len; ++plan_id) {
    const double t = res.steps * wc.dt;
    const auto scene = world::make_scene(sc, history, agents_now, wc);
    if (plan_id > 0 && world::goal_reached(scene)) break;
    world::Trajectory plan;
    try {
      plan = planner.plan(scene, sc, rng);
    } catch (const Error&) {
      res.failed = true;
    }
    if (res.failed || plan.horizon() < chunk || !plan.all_finite()) {
      res.failed = true;
      break;
    }
    const int n = std::min(chunk, ec.episode_len - res.steps);
    const auto executed = world::execute_prefix(scene.ego(), plan, n);
    for (int k = 0; k < n; ++k) {
      const double tk = t + k * wc.dt;
      if (ec.reactive) {
        reactive.step(sc, tk, k == 0 ? scene.ego() : executed[static_cast<std::size_t>(k - 1)], wc, ec);
        agents_now = reactive.state;
      } else {
        agents_now = world::scripted_states(sc, tk + wc.dt);
      }
      std::vector<world::VehicleState> poses;
      for (std::size_t i = 0; i < agents_now.size(); ++i) {
        poses.push_back(world::to_vehicle_state(*sc.road, agents_now[i]));
        res.agents[i].push_back(poses.back());
      }
      res.ego_trace.push_back(executed[static_cast<std::size_t>(k)]);
      res.plan_ids.push_back(plan_id);
      ++res.steps;
      if (detail::collides(executed[static_cast<std::size_t>(k)], poses, sc, wc)) {
        res.collided = true;
        break;
      }
    }
    if (res.collided) break;
    history = world::advance_history(history, {executed.begin(), executed.begin() + n}, wc);
  }

  if (res.failed) {
    res.composite = 0.0;
    res.breakdown = pdm::MetricBreakdown::from_values({0, 0, 0, 0, 0, 0, 0, 0, 0});
    return res;
  }
  if (res.steps >= 3) {
    world::Trajectory trace;
    trace.dt = wc.dt;
    for (const auto& s : res.ego_trace) trace.poses.push_back(world::pose_of(s));
    std::vector<world::Trajectory> futures(static_cast<std::size_t>(wc.max_agents));
    for (auto& f : futures) f.dt = wc.dt;
    for (std::size_t i = 0; i < res.agents.size() && i < futures.size(); ++i)
      for (const auto& s : res.agents[i]) futures[i].poses.push_back(world::pose_of(s));
    const auto scored = pdm::score(opening, trace, futures, wc, pc);
    res.composite = scored.score;
    res.breakdown = scored.breakdown;
  }
  if (res.collided) {
    res.breakdown.no_collision = 0.0;
    res.composite = 0.0;
  }
  return res;
}

struct SuiteConfig {
  std::vector<world::ScenarioKind> kinds{std::begin(world::kAllKinds), std::end(world::kAllKinds)};
  int scenarios_per_kind = 10;
  std::uint64_t seed = 0;
  int threads = 0;
};

struct SuiteSummary {
  int episodes = 0;
  double mean_composite = 0.0;
  pdm::MetricBreakdown mean_breakdown;
  double collision_rate = 0.0;
  int failures = 0;
};

struct SuiteResult {
  std::string planner;
  bool reactive = false;
  std::vector<EpisodeResult> episodes;
  SuiteSummary summary;
};

inline SuiteSummary summarize(const std::vector<EpisodeResult>& eps) {
  SuiteSummary s;
  s.episodes = static_cast<int>(eps.size());
  if (eps.empty()) return s;
  std::array<double, 9> acc{};
  for (const auto& e : eps) {
    s.mean_composite += e.composite;
    s.collision_rate += e.collided ? 1.0 : 0.0;
    s.failures += e.failed ? 1 : 0;
    const auto v = e.breakdown.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  const double n = static_cast<double>(eps.size());
  s.mean_composite /= n;
  s.collision_rate /= n;
  for (auto& x : acc) x /= n;
  s.mean_breakdown = pdm::MetricBreakdown::from_values(acc);
  return s;
}

/// Scenario seeds are derived from `cfg.seed` exactly as the dataset builder
/// does, so pass a root that differs from the training one. Episodes run in
/// parallel with their own streams and are returned in (kind, index) order.
inline SuiteResult evaluate_suite(const Planner& planner, const SuiteConfig& cfg, const world::WorldConfig& wc,
                                  const pdm::ScorerConfig& pc, const EvalConfig& ec) {
  require(cfg.scenarios_per_kind >= 1, errc::kConfig, "scenarios_per_kind must be >= 1");
  require(!cfg.kinds.empty(), errc::kConfig, "no scenario kinds requested");
  const int per = cfg.scenarios_per_kind;
  const int total = per * static_cast<int>(cfg.kinds.size());
  SuiteResult out;
  out.planner = planner.name;
  out.reactive = ec.reactive;
  out.episodes.resize(static_cast<std::size_t>(total));
  data::detail::parallel_for(total, cfg.threads, [&](int i) {
    const auto kind = cfg.kinds[static_cast<std::size_t>(i / per)];
    const auto seed = data::scenario_seed(cfg.seed, kind, i % per);
    const auto sc = world::generate_scenario(seed, kind, wc);
    Rng rng = make_stream(seed, "eval/" + planner.name);
    out.episodes[static_cast<std::size_t>(i)] = run_episode(planner, sc, wc, pc, ec, rng);
  });
  out.summary = summarize(out.episodes);
  return out;
}

inline const char* kEpisodeCsvHeader =
    "planner,reactive,kind,seed,composite,no_collision,drivable_area,direction,speed_limit,progress,ttc,comfort,"
    "lane_following,proximity,collided,failed,steps";

namespace detail {

inline void csv_metrics(std::ostream& os, double composite, const pdm::MetricBreakdown& m) {
  os << composite;
  for (double v : m.values()) os << ',' << v;
}

}  // namespace detail

/// One row per episode, then a summary row with kind "ALL" and seed 0 whose
/// collided column carries the collision rate and failed the failure count.
inline void write_csv(std::ostream& os, const SuiteResult& r, bool header = true) {
  const auto old_precision = os.precision(17);
  if (header) os << kEpisodeCsvHeader << '\n';
  for (const auto& e : r.episodes) {
    os << r.planner << ',' << (r.reactive ? 1 : 0) << ',' << world::to_string(e.kind) << ',' << e.seed << ',';
    detail::csv_metrics(os, e.composite, e.breakdown);
    os << ',' << (e.collided ? 1 : 0) << ',' << (e.failed ? 1 : 0) << ',' << e.steps << '\n';
  }
  os << r.planner << ',' << (r.reactive ? 1 : 0) << ",ALL,0,";
  detail::csv_metrics(os, r.summary.mean_composite, r.summary.mean_breakdown);
  os << ',' << r.summary.collision_rate << ',' << r.summary.failures << ',' << r.summary.episodes << '\n';
  os.precision(old_precision);
}

}  // namespace rapid::eval

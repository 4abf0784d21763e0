#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "rapid/eval/closed_loop.hpp"
#include "rapid/eval/latency.hpp"

using namespace rapid;
using namespace rapid::eval;

namespace {

const world::WorldConfig kCfg{};
const pdm::ScorerConfig kScorer{};

world::Scenario straight_road(double ego_speed, std::vector<world::AgentScript> scripts) {
  auto sc = world::generate_scenario(1, world::ScenarioKind::lane_follow, kCfg);
  sc.road = std::make_shared<const world::Centerline>(world::make_road(400.0, 0.0));
  sc.speed_limit = 14.0;
  const auto p = sc.road->to_world(world::kEgoStartArc, 0.0);
  sc.ego_start = {p.x(), p.y(), 0.0, ego_speed, 0.0};
  sc.scripts = std::move(scripts);
  return sc;
}

world::AgentScript braking_lead(double gap, double speed) {
  world::AgentScript a;
  a.behavior = world::AgentBehavior::brake_to_stop;
  a.s0 = world::kEgoStartArc + gap;
  a.v0 = speed;
  a.brake_time = 0.5;
  a.decel = 8.0;
  return a;
}

world::AgentScript tailgater(double behind, double speed) {
  world::AgentScript a;
  a.behavior = world::AgentBehavior::cruise;
  a.s0 = world::kEgoStartArc - behind;
  a.v0 = speed;
  return a;
}

EpisodeResult run(const Planner& p, const world::Scenario& sc, bool reactive, std::uint64_t seed = 1) {
  EvalConfig ec;
  ec.reactive = reactive;
  Rng rng(seed);
  return run_episode(p, sc, kCfg, kScorer, ec, rng);
}

world::Trajectory trace_of(const EpisodeResult& r) {
  world::Trajectory t;
  t.dt = kCfg.dt;
  for (const auto& s : r.ego_trace) t.poses.push_back(world::pose_of(s));
  return t;
}

}  // namespace

TEST(Episode, ExpertOnEmptyRoadScoresHigh) {
  const auto r = run(expert_planner(kCfg), straight_road(10.0, {}), false);
  EXPECT_FALSE(r.collided);
  EXPECT_FALSE(r.failed);
  EXPECT_EQ(r.steps, 20);
  EXPECT_GE(r.composite, 0.9);
}

TEST(Episode, ConstantSpeedIntoBrakingLeadCollides) {
  const auto r = run(constant_velocity_planner(kCfg), straight_road(10.0, {braking_lead(25.0, 10.0)}), false);
  EXPECT_TRUE(r.collided);
  EXPECT_EQ(r.composite, 0.0);
  EXPECT_EQ(r.breakdown.no_collision, 0.0);
  EXPECT_LT(r.steps, 20);
}

TEST(Episode, ExpertStopsForBrakingLead) {
  const auto r = run(expert_planner(kCfg), straight_road(10.0, {braking_lead(40.0, 10.0)}), false);
  EXPECT_FALSE(r.collided);
}

TEST(Episode, RepeatsExactly) {
  for (auto kind : world::kAllKinds) {
    const auto sc = world::generate_scenario(11, kind, kCfg);
    for (bool reactive : {false, true}) {
      EXPECT_TRUE(run(expert_planner(kCfg), sc, reactive) == run(expert_planner(kCfg), sc, reactive));
      EXPECT_TRUE(run(constant_velocity_planner(kCfg), sc, reactive) ==
                  run(constant_velocity_planner(kCfg), sc, reactive));
    }
  }
}

TEST(Episode, ExecutedTraceIsFeasible) {
  for (auto kind : world::kAllKinds)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto sc = world::generate_scenario(seed, kind, kCfg);
      const auto r = run(expert_planner(kCfg), sc, true);
      EXPECT_TRUE(world::is_feasible(trace_of(r), world::pose_of(sc.ego_start), kCfg))
          << world::to_string(kind) << " seed " << seed;
    }
}

TEST(Episode, NonReactiveAgentsIgnoreTheEgo) {
  for (auto kind : world::kAllKinds) {
    const auto sc = world::generate_scenario(5, kind, kCfg);
    const auto a = run(expert_planner(kCfg), sc, false);
    const auto b = run(constant_velocity_planner(kCfg), sc, false);
    ASSERT_EQ(a.agents.size(), b.agents.size());
    const int n = std::min(a.steps, b.steps);
    for (std::size_t i = 0; i < a.agents.size(); ++i)
      for (int k = 0; k < n; ++k) {
        const auto& x = a.agents[i][static_cast<std::size_t>(k)];
        const auto& y = b.agents[i][static_cast<std::size_t>(k)];
        EXPECT_EQ(x.x, y.x);
        EXPECT_EQ(x.y, y.y);
        EXPECT_EQ(x.speed, y.speed);
      }
  }
}

TEST(Episode, ReactiveAgentBrakesForSlowEgo) {
  const auto sc = straight_road(6.0, {tailgater(20.0, 13.0)});
  EXPECT_TRUE(run(constant_velocity_planner(kCfg), sc, false).collided);
  const auto r = run(constant_velocity_planner(kCfg), sc, true);
  EXPECT_FALSE(r.collided);
  double prev = 13.0;
  for (const auto& s : r.agents[0]) {
    EXPECT_GE(s.speed, 0.0);
    EXPECT_GE(s.accel, kCfg.accel_min - 1e-12);
    EXPECT_LE(s.accel, EvalConfig{}.idm.max_accel + 1e-12);
    EXPECT_NEAR(s.speed - prev, s.accel * kCfg.dt, 1e-9);
    prev = s.speed;
  }
}

TEST(Episode, ReactiveBoundsHoldAcrossSuite) {
  EvalConfig ec;
  ec.reactive = true;
  SuiteConfig cfg;
  cfg.scenarios_per_kind = 4;
  const auto r = evaluate_suite(constant_velocity_planner(kCfg), cfg, kCfg, kScorer, ec);
  for (const auto& e : r.episodes)
    for (const auto& agent : e.agents)
      for (const auto& s : agent) {
        EXPECT_GE(s.speed, 0.0);
        EXPECT_LE(s.accel, ec.idm.max_accel + 1e-12);
        EXPECT_GE(s.accel, kCfg.accel_min - 1e-12);
      }
}

TEST(Episode, NonFinitePlanFailsWithZero) {
  const Planner bad{"bad", [](const world::SceneContext& scene, const world::Scenario&, Rng&) {
                      auto t = constant_velocity_plan(scene, kCfg);
                      t.poses[0].x = std::nan("");
                      return t;
                    }};
  const auto r = run(bad, straight_road(10.0, {}), false);
  EXPECT_TRUE(r.failed);
  EXPECT_EQ(r.composite, 0.0);
}

TEST(Suite, SingleScenarioIsOneEpisode) {
  SuiteConfig cfg;
  cfg.kinds = {world::ScenarioKind::merge};
  cfg.scenarios_per_kind = 1;
  cfg.seed = 9;
  const auto suite = evaluate_suite(expert_planner(kCfg), cfg, kCfg, kScorer, {});
  ASSERT_EQ(suite.episodes.size(), 1u);
  const auto seed = data::scenario_seed(9, world::ScenarioKind::merge, 0);
  Rng rng = make_stream(seed, "eval/expert");
  const auto direct =
      run_episode(expert_planner(kCfg), world::generate_scenario(seed, world::ScenarioKind::merge, kCfg), kCfg,
                  kScorer, {}, rng);
  EXPECT_TRUE(suite.episodes[0] == direct);
  EXPECT_EQ(suite.summary.mean_composite, direct.composite);
}

TEST(Suite, SummaryIsArithmeticMeanAndThreadInvariant) {
  SuiteConfig cfg;
  cfg.scenarios_per_kind = 3;
  cfg.threads = 1;
  const auto a = evaluate_suite(expert_planner(kCfg), cfg, kCfg, kScorer, {});
  cfg.threads = 4;
  const auto b = evaluate_suite(expert_planner(kCfg), cfg, kCfg, kScorer, {});
  ASSERT_EQ(a.episodes.size(), 12u);
  for (std::size_t i = 0; i < a.episodes.size(); ++i) EXPECT_TRUE(a.episodes[i] == b.episodes[i]);

  double sum = 0.0, ttc = 0.0, coll = 0.0;
  for (const auto& e : a.episodes) {
    sum += e.composite;
    ttc += e.breakdown.ttc;
    coll += e.collided;
  }
  EXPECT_NEAR(a.summary.mean_composite, sum / 12.0, 1e-15);
  EXPECT_NEAR(a.summary.mean_breakdown.ttc, ttc / 12.0, 1e-15);
  EXPECT_NEAR(a.summary.collision_rate, coll / 12.0, 1e-15);
}

TEST(Suite, CsvHasFixedColumns) {
  SuiteConfig cfg;
  cfg.scenarios_per_kind = 1;
  const auto r = evaluate_suite(constant_velocity_planner(kCfg), cfg, kCfg, kScorer, {});
  std::ostringstream os;
  write_csv(os, r);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kEpisodeCsvHeader);
  const auto columns = std::count(line.begin(), line.end(), ',');
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  EXPECT_NE(os.str().find("constant_velocity,0,ALL,0,"), std::string::npos);
}

TEST(Latency, SummaryStatistics) {
  std::vector<std::int64_t> ns;
  for (int i = 1; i <= 100; ++i) ns.push_back(i);
  const auto s = summarize_latency("x", ns);
  EXPECT_DOUBLE_EQ(s.mean_ns, 50.5);
  EXPECT_DOUBLE_EQ(s.median_ns, 50.5);
  EXPECT_DOUBLE_EQ(s.p95_ns, 95.0);
}

TEST(Latency, SelfComparisonIsNearOne) {
  const auto sc = world::generate_scenario(2, world::ScenarioKind::lead_stop, kCfg);
  const auto scene = world::initial_scene(sc, kCfg);
  auto a = expert_planner(kCfg);
  auto b = a;
  b.name = "expert_again";
  const auto rep = bench_latency({a, b}, scene, sc);
  EXPECT_EQ(rep.at("expert").ns.size(), 200u);
  const double ratio = rep.ratio("expert", "expert_again");
  EXPECT_GE(ratio, 0.8);
  EXPECT_LE(ratio, 1.25);
  const auto j = to_json(rep);
  EXPECT_EQ(j["planners"].size(), 2u);
  EXPECT_THROW(bench_latency({a}, scene, sc, 50), Error);
}

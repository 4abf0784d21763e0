#include <cmath>
#include <cstring>
#include <numbers>

#include <gtest/gtest.h>

#include "rapid/pdm/scorer.hpp"
#include "rapid/world/encoder.hpp"
#include "rapid/world/expert.hpp"
#include "rapid/world/scenario.hpp"
#include "rapid/world/vehicle.hpp"

using namespace rapid;
using namespace rapid::world;

namespace {

const WorldConfig kCfg{};

SceneContext straight_scene(double ego_speed, double d_offset = 0.0) {
  Scenario sc;
  sc.road = std::make_shared<const Centerline>(make_road(400.0, 0.0));
  sc.speed_limit = 12.0;
  sc.corridor_half_width = 2.5;
  sc.ego_start = {0.0, d_offset, 0.0, ego_speed, 0.0};
  return initial_scene(sc, kCfg);
}

double peak_lateral(const Trajectory& t, const Centerline& road) {
  double best = 0.0;
  for (const auto& p : t.poses) {
    const double d = road.project(p.position()).d;
    if (std::abs(d) > std::abs(best)) best = d;
  }
  return best;
}

}  // namespace

TEST(Rollout, StraightLineConstantSpeed) {
  const std::vector<Control> controls(4);
  const auto t = rollout_bicycle({0, 0, 0, 10, 0}, controls, 0.5, kCfg);
  ASSERT_EQ(t.horizon(), 4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(t.poses[static_cast<std::size_t>(k)].x, 5.0 * (k + 1), 1e-12);
    EXPECT_NEAR(t.poses[static_cast<std::size_t>(k)].y, 0.0, 1e-12);
  }
}

TEST(Rollout, SpeedClampsAtZero) {
  const VehicleState start{3.0, -1.0, 0.7, 8.0, 0.0};
  std::vector<Control> controls(6);
  controls[0].accel = -start.speed / 0.5;
  const auto t = rollout_bicycle(start, controls, 0.5, kCfg);
  for (std::size_t k = 2; k < t.poses.size(); ++k) EXPECT_EQ(t.poses[k], t.poses[1]);
  EXPECT_GT(t.poses[0].x, start.x);
}

// Closed-form circle: rear axle starts at origin heading +x and turns about
// (0, R) with R = L / tan(steer).
TEST(Rollout, ConstantSteerFollowsClosedFormCircle) {
  const double steer = 0.2, speed = 10.0, duration = 4.0;
  const double R = kCfg.wheelbase / std::tan(steer);
  const double phi = speed * duration / R;
  const Vec2 expected(R * std::sin(phi), R * (1.0 - std::cos(phi)));
  for (double dt : {0.5, 0.01}) {
    const int n = static_cast<int>(std::lround(duration / dt));
    const std::vector<Control> controls(static_cast<std::size_t>(n), Control{0.0, steer});
    const auto t = rollout_bicycle({0, 0, 0, speed, 0}, controls, dt, kCfg);
    const Vec2 end = t.poses.back().position();
    EXPECT_LE((end - expected).norm() / expected.norm(), 1e-6) << "dt=" << dt;
    EXPECT_NEAR(t.poses.back().heading, wrap_angle(phi), 1e-9);
  }
}

TEST(Rollout, RandomControlsStayFeasible) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const VehicleState start{uniform(rng, -50, 50), uniform(rng, -50, 50), uniform(rng, -3.1, 3.1),
                             uniform(rng, 0.0, kCfg.v_max), 0.0};
    std::vector<Control> controls(static_cast<std::size_t>(kCfg.horizon));
    for (auto& c : controls) c = {uniform(rng, kCfg.accel_min, kCfg.accel_max), uniform(rng, -0.5, 0.5)};
    const auto t = rollout_bicycle(start, controls, kCfg.dt, kCfg);
    ASSERT_EQ(t.horizon(), kCfg.horizon);
    ASSERT_TRUE(is_feasible(t, pose_of(start), kCfg));
    for (const auto& p : t.poses) {
      ASSERT_GT(p.heading, -std::numbers::pi);
      ASSERT_LE(p.heading, std::numbers::pi);
    }
  }
}

TEST(Rollout, RejectsBadControls) {
  std::vector<Control> controls(3);
  controls[1].accel = std::nan("");
  EXPECT_THROW(rollout_bicycle({}, controls, 0.5, kCfg), Error);
  controls[1] = {0.0, 0.9};
  EXPECT_THROW(rollout_bicycle({}, controls, 0.5, kCfg), Error);
  EXPECT_THROW(rollout_bicycle({}, std::vector<Control>(3), 0.0, kCfg), Error);
}

TEST(Geometry, WrapAngleRange) {
  EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_DOUBLE_EQ(wrap_angle(-std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(3.0 * std::numbers::pi / 2.0), -std::numbers::pi / 2.0, 1e-12);
}

TEST(Geometry, CenterlineRejectsRepeatedPoints) {
  EXPECT_THROW(Centerline({{0, 0}, {1, 0}, {1, 0}}), Error);
}

TEST(Geometry, ProjectionOnArcRoad) {
  const auto road = make_road(300.0, 1.0 / 200.0, 20.0);
  for (double s : {11.0, 61.0, 151.0}) {
    const auto f = road.project(road.to_world(s, 1.5));
    EXPECT_NEAR(f.s, s, 1e-6);
    EXPECT_NEAR(f.d, 1.5, 1e-6);
  }
}

TEST(Encoder, CenteredAlignedEgoHasZeroOffsetFeatures) {
  const auto scene = straight_scene(10.0);
  const auto raw = raw_features(scene, kCfg);
  EXPECT_EQ(raw.values[feature::kLateralOffset], 0.0);
  EXPECT_EQ(raw.values[feature::kHeadingError], 0.0);
}

TEST(Encoder, DeterministicBitwise) {
  const auto sc = generate_scenario(3, ScenarioKind::merge, kCfg);
  const auto scene = initial_scene(sc, kCfg);
  const auto stats = FeatureStats::identity(kCfg.state_dim);
  const auto a = encode_state(scene, kCfg, stats).features;
  const auto b = encode_state(scene, kCfg, stats).features;
  ASSERT_EQ(a.size(), kCfg.state_dim);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())));
}

TEST(Encoder, LateralOffsetIsDistinguishable) {
  const auto stats = FeatureStats::identity(kCfg.state_dim);
  for (double d : {-1.5, -0.5, 0.0, 0.7}) {
    const auto a = encode_state(straight_scene(8.0, d), kCfg, stats).features;
    const auto b = encode_state(straight_scene(8.0, d + 0.5), kCfg, stats).features;
    EXPECT_GT((a - b).norm(), 0.1);
  }
}

TEST(Encoder, LeadGapNormalizedByFittedStats) {
  // Stats fitted over generated scenes, then a lead 30 m straight ahead.
  std::vector<RawFeatures> raws;
  for (std::uint64_t seed = 0; seed < 40; ++seed)
    for (auto kind : kAllKinds) raws.push_back(raw_features(initial_scene(generate_scenario(seed, kind, kCfg), kCfg), kCfg));
  Eigen::MatrixXd values(kCfg.state_dim, static_cast<Eigen::Index>(raws.size()));
  Eigen::MatrixXd present(kCfg.state_dim, static_cast<Eigen::Index>(raws.size()));
  for (std::size_t j = 0; j < raws.size(); ++j) {
    values.col(static_cast<Eigen::Index>(j)) = raws[j].values;
    present.col(static_cast<Eigen::Index>(j)) = raws[j].present;
  }
  const auto stats = FeatureStats::fit(values, &present);

  double sum = 0.0, n = 0.0;
  for (std::size_t j = 0; j < raws.size(); ++j)
    if (raws[j].present[feature::kAgentBase] != 0.0) {
      sum += raws[j].values[feature::kAgentBase];
      n += 1.0;
    }
  const double mean = sum / n;
  double ss = 0.0;
  for (std::size_t j = 0; j < raws.size(); ++j)
    if (raws[j].present[feature::kAgentBase] != 0.0) ss += std::pow(raws[j].values[feature::kAgentBase] - mean, 2);
  const double sd = std::sqrt(ss / n);

  auto scene = straight_scene(10.0);
  scene.agents[0].valid = true;
  scene.agents[0].state = {30.0, 0.0, 0.0, 5.0, 0.0};
  const auto enc = encode_state(scene, kCfg, stats);
  EXPECT_NEAR(enc.features[feature::kAgentBase], (30.0 - mean) / sd, 1e-9);
  EXPECT_EQ(enc.features[feature::kAgentBase + 4], 0.0);  // padded slot
  EXPECT_EQ(enc.normalization_id, stats.id());
}

TEST(Encoder, RejectsEmptyCenterline) {
  auto scene = straight_scene(5.0);
  scene.centerline.reset();
  EXPECT_THROW(raw_features(scene, kCfg), Error);
}

TEST(Actions, EgoFrameRoundTrip) {
  const auto sc = generate_scenario(5, ScenarioKind::lane_follow, kCfg);
  const auto scene = initial_scene(sc, kCfg);
  const auto traj = expert_demonstrate(scene, sc.mode_seed, kCfg);
  const Pose origin = pose_of(scene.ego());
  const auto back = action_to_trajectory(trajectory_to_action(traj, origin), origin, kCfg.dt);
  for (int k = 0; k < traj.horizon(); ++k) {
    EXPECT_NEAR(back.poses[static_cast<std::size_t>(k)].x, traj.poses[static_cast<std::size_t>(k)].x, 1e-9);
    EXPECT_NEAR(back.poses[static_cast<std::size_t>(k)].y, traj.poses[static_cast<std::size_t>(k)].y, 1e-9);
    EXPECT_NEAR(back.poses[static_cast<std::size_t>(k)].heading, traj.poses[static_cast<std::size_t>(k)].heading, 1e-9);
  }
}

TEST(Scenario, SeededDeterminism) {
  const auto a = initial_scene(generate_scenario(7, ScenarioKind::lane_follow, kCfg), kCfg);
  const auto b = initial_scene(generate_scenario(7, ScenarioKind::lane_follow, kCfg), kCfg);
  EXPECT_EQ(a.centerline->points(), b.centerline->points());
  EXPECT_EQ(a.ego().x, b.ego().x);
  EXPECT_EQ(a.ego().speed, b.ego().speed);
  EXPECT_EQ(a.speed_limit, b.speed_limit);
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    EXPECT_EQ(a.agents[i].valid, b.agents[i].valid);
    EXPECT_EQ(a.agents[i].state.x, b.agents[i].state.x);
  }
}

TEST(Scenario, LeadStopHasOneLeadOnCenterline) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto sc = generate_scenario(seed, ScenarioKind::lead_stop, kCfg);
    const auto scene = initial_scene(sc, kCfg);
    int valid = 0;
    for (const auto& a : scene.agents) {
      if (!a.valid) continue;
      ++valid;
      const auto f = scene.centerline->project({a.state.x, a.state.y});
      const auto e = scene.centerline->project({scene.ego().x, scene.ego().y});
      EXPECT_NEAR(f.d, 0.0, 1e-9);
      EXPECT_GT(f.s, e.s);
    }
    EXPECT_EQ(valid, 1);
  }
}

TEST(Scenario, UnknownKindRejected) { EXPECT_THROW(parse_kind("roundabout"), Error); }

TEST(Scenario, ObstaclePassDemonstrationsAreBimodal) {
  int left = 0, right = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto sc = generate_scenario(seed, ScenarioKind::obstacle_pass, kCfg);
    const auto scene = initial_scene(sc, kCfg);
    const auto traj = expert_demonstrate(scene, sc.mode_seed, kCfg);
    const double peak = peak_lateral(traj, *sc.road);
    if (peak > 0.5) ++left;
    if (peak < -0.5) ++right;
  }
  EXPECT_GE(left, 30);
  EXPECT_GE(right, 30);
}

TEST(Expert, TracksCenterlineOnEmptyRoad) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto sc = generate_scenario(seed, ScenarioKind::lane_follow, kCfg);
    sc.scripts.clear();
    const auto scene = initial_scene(sc, kCfg);
    const auto traj = expert_demonstrate(scene, sc.mode_seed, kCfg);
    EXPECT_LT(std::abs(peak_lateral(traj, *sc.road)), 0.2) << "seed " << seed;
  }
}

TEST(Expert, StopsBehindStoppedLead) {
  auto scene = straight_scene(8.0);
  scene.agents[0].valid = true;
  scene.agents[0].state = {15.0, 0.0, 0.0, 0.0, 0.0};
  const auto traj = expert_demonstrate(scene, 0, kCfg);
  const auto& last = traj.poses.back();
  const auto& prev = traj.poses[traj.poses.size() - 2];
  EXPECT_LT((last.position() - prev.position()).norm() / kCfg.dt, 1.0);
  for (const auto& p : traj.poses)
    EXPECT_FALSE(pdm::detail::footprints_overlap(p.position(), p.heading, kCfg.ego_half_length, kCfg.ego_half_width,
                                                 {15.0, 0.0}, 0.0, 2.0, 1.0));
}

TEST(Expert, PassModesGoOppositeWays) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sc = generate_scenario(seed, ScenarioKind::obstacle_pass, kCfg);
    const auto scene = initial_scene(sc, kCfg);
    const double a = peak_lateral(expert_demonstrate(scene, 0, kCfg), *sc.road);
    const double b = peak_lateral(expert_demonstrate(scene, 1, kCfg), *sc.road);
    EXPECT_LT(a * b, 0.0) << "seed " << seed;
  }
}

TEST(Expert, OutputIsFeasible) {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (auto kind : kAllKinds) {
      const auto sc = generate_scenario(seed, kind, kCfg);
      const auto scene = initial_scene(sc, kCfg);
      EXPECT_TRUE(is_feasible(expert_demonstrate(scene, sc.mode_seed, kCfg), pose_of(scene.ego()), kCfg));
    }
}

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "rapid/data/dataset.hpp"

using namespace rapid;
using namespace rapid::data;

namespace {

const world::WorldConfig kCfg{};

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rapid_test_" + name)).string();
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

const Dataset& mixed_dataset() {
  static const Dataset d = [] {
    BuildConfig bc;
    bc.scenarios_per_kind = 6;
    bc.seed = 7;
    return build_buffer(bc, kCfg).dataset;
  }();
  return d;
}

std::string expect_load_error(const std::string& path, const char* code) {
  try {
    load(path, kCfg);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code);
    return e.what();
  }
  ADD_FAILURE() << "load succeeded";
  return {};
}

}  // namespace

TEST(Build, LaneFollowRecordCountAndRewards) {
  BuildConfig bc;
  bc.scenarios_per_kind = 10;
  bc.kinds = {world::ScenarioKind::lane_follow};
  const auto res = build_buffer(bc, kCfg);
  EXPECT_EQ(res.skipped, 0);
  EXPECT_EQ(res.dataset.size(), 10 * (kCfg.episode_len / kCfg.executed_steps));
  EXPECT_GE(res.dataset.rewards.minCoeff(), 0.9);
}

TEST(Build, ObstaclePassActionsAreBimodal) {
  BuildConfig bc;
  bc.scenarios_per_kind = 60;
  bc.kinds = {world::ScenarioKind::obstacle_pass};
  const auto d = build_buffer(bc, kCfg).dataset;
  int left = 0, right = 0, episodes = 0;
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    if (d.tags[static_cast<std::size_t>(j)].step != 0) continue;
    ++episodes;
    const Eigen::VectorXd a = d.action_stats.denormalize(d.actions.col(j));
    double peak = 0.0;
    for (int k = 0; k < kCfg.horizon; ++k)
      if (std::abs(a[3 * k + 1]) > std::abs(peak)) peak = a[3 * k + 1];
    (peak > 0 ? left : right)++;
  }
  ASSERT_EQ(episodes, 60);
  EXPECT_GE(left, 18);
  EXPECT_GE(right, 18);
}

TEST(Build, DeterministicAcrossRunsAndThreadCounts) {
  BuildConfig bc;
  bc.scenarios_per_kind = 3;
  bc.seed = 5;
  bc.threads = 1;
  const auto a = serialize(build_buffer(bc, kCfg).dataset).bytes();
  bc.threads = 4;
  const auto b = serialize(build_buffer(bc, kCfg).dataset).bytes();
  const auto c = serialize(build_buffer(bc, kCfg).dataset).bytes();
  EXPECT_EQ(a, b);
  EXPECT_EQ(b, c);
}

TEST(Build, EpisodesEndWithDone) {
  const auto& d = mixed_dataset();
  for (Eigen::Index j = 0; j + 1 < d.size(); ++j) {
    const bool last = d.tags[static_cast<std::size_t>(j + 1)].step == 0;
    EXPECT_EQ(d.done[static_cast<std::size_t>(j)] != 0, last) << "record " << j;
  }
  EXPECT_EQ(d.done.back(), 1);
}

TEST(Build, StoredRewardsMatchRescoring) {
  const auto& d = mixed_dataset();
  Rng rng(3);
  const auto idx = sample_indices(d, 100, rng);
  for (auto j : idx) {
    const auto rec = regenerate(d.tags[static_cast<std::size_t>(j)], kCfg);
    const Eigen::VectorXd a = d.action_stats.denormalize(d.actions.col(j));
    const auto traj = world::action_to_trajectory(a, world::pose_of(rec.scene.ego()), kCfg.dt);
    EXPECT_NEAR(pdm::score(rec.scene, traj, rec.futures, kCfg).score, d.rewards[j], 1e-6) << "record " << j;
    EXPECT_NEAR((world::encode_state(rec.scene, kCfg, d.state_stats).features - d.states.col(j)).cwiseAbs().maxCoeff(),
                0.0, 1e-9);
  }
}

TEST(Build, NormalizationInverts) {
  const auto& d = mixed_dataset();
  for (Eigen::Index j = 0; j < d.size(); j += 7) {
    const Eigen::VectorXd a = d.action_stats.denormalize(d.actions.col(j));
    EXPECT_LE((d.action_stats.normalize(a) - d.actions.col(j)).cwiseAbs().maxCoeff(), 1e-12);
  }
  for (Eigen::Index j = 0; j < d.size(); ++j)
    EXPECT_TRUE((d.actions.col(j).cwiseAbs().array() <= d.action_box.array()).all());
}

TEST(File, RoundTrip) {
  const auto& d = mixed_dataset();
  const auto path = temp_path("roundtrip.bin");
  save(d, path);
  const auto back = load(path, kCfg);
  EXPECT_TRUE(back == d);
  EXPECT_EQ(serialize(back).bytes(), read_bytes(path));
  std::filesystem::remove(path);
}

TEST(File, TamperedMagicNamesField) {
  const auto path = temp_path("magic.bin");
  save(mixed_dataset(), path);
  auto bytes = read_bytes(path);
  bytes[2] ^= 0x5a;
  write_bytes(path, bytes);
  EXPECT_NE(expect_load_error(path, errc::kFormat).find("magic"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(File, TruncationNamesRecord) {
  const auto path = temp_path("trunc.bin");
  save(mixed_dataset(), path);
  auto bytes = read_bytes(path);
  bytes.resize(bytes.size() - 600);
  write_bytes(path, bytes);
  const auto msg = expect_load_error(path, errc::kFormat);
  EXPECT_NE(msg.find("byte"), std::string::npos) << msg;
  std::filesystem::remove(path);
}

TEST(File, RejectsOtherWorldConfig) {
  const auto path = temp_path("world.bin");
  save(mixed_dataset(), path);
  world::WorldConfig other = kCfg;
  other.v_max = 20.0;
  try {
    load(path, other);
    ADD_FAILURE() << "load succeeded";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kHashMismatch);
    EXPECT_NE(std::string(e.what()).find("world_hash"), std::string::npos);
  }
  other = kCfg;
  other.horizon = 12;
  EXPECT_THROW(load(path, other), Error);
  std::filesystem::remove(path);
}

TEST(File, MissingFile) { expect_load_error(temp_path("does_not_exist.bin"), errc::kMissingArtifact); }

TEST(Sampling, IndicesPassChiSquareUniformity) {
  Dataset d;
  d.states.resize(1, 100);
  Rng rng(77);
  const int draws = 100000;
  std::vector<int> counts(100, 0);
  for (auto i : sample_indices(d, draws, rng)) counts[static_cast<std::size_t>(i)]++;
  const double expected = draws / 100.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double critical = boost::math::quantile(boost::math::chi_squared(99.0), 0.99);
  EXPECT_LT(chi2, critical);
}

TEST(Sampling, BatchGathersColumns) {
  const auto& d = mixed_dataset();
  Rng a(1), b(1);
  const auto idx = sample_indices(d, 16, a);
  const auto batch = sample_batch(d, 16, b);
  for (int j = 0; j < 16; ++j) {
    EXPECT_EQ(batch.states.col(j), d.states.col(idx[static_cast<std::size_t>(j)]));
    EXPECT_EQ(batch.rewards[j], d.rewards[idx[static_cast<std::size_t>(j)]]);
  }
}

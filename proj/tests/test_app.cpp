#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "rapid/app/config.hpp"
#include "rapid/app/pipeline.hpp"

using namespace rapid;
using namespace rapid::app;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& name) {
  ExperimentConfig c;
  c.output_dir = (fs::path(testing::TempDir()) / ("rapid_app_" + name)).string();
  fs::remove_all(c.output_dir);
  c.data.scenarios_per_kind = 2;
  c.prior.hidden = {8};
  c.prior.steps = 20;
  c.prior.batch = 16;
  c.prior.sample_steps = 4;
  c.critic.hidden = {8};
  c.critic.steps = 20;
  c.critic.awr_steps = 10;
  c.critic.batch = 16;
  c.policy.hidden = {8};
  c.srpo.steps = 10;
  c.srpo.batch = 16;
  c.eval.scenarios_per_kind = 1;
  c.eval.heldout_scenarios_per_kind = 1;
  c.bench.calls = 100;
  return c;
}

void run_training(const ExperimentConfig& c) {
  gen_data(c);
  train_prior(c);
  train_critic(c);
  extract_policy(c);
}

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, RoundTripsThroughJson) {
  auto c = tiny("roundtrip");
  c.srpo.beta = 0.25;
  c.data.kinds = {"merge"};
  const auto back = parse_config(to_json(c).dump());
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  auto j = to_json(ExperimentConfig{});
  j["srpo"]["betta"] = 1.0;
  EXPECT_EQ(error_code([&] { config_from_json(j); }), errc::kConfig);
  EXPECT_NE(error_text([&] { config_from_json(j); }).find("srpo.betta"), std::string::npos);

  j = to_json(ExperimentConfig{});
  j["prior"]["steps"] = "many";
  EXPECT_EQ(error_code([&] { config_from_json(j); }), errc::kConfig);
  EXPECT_EQ(error_code([] { parse_config("{not json"); }), errc::kConfig);
}

TEST(Config, OverrideChangesOneValue) {
  const ExperimentConfig c;
  const auto o = with_override(c, "srpo.beta=0.5");
  EXPECT_EQ(o.srpo.beta, 0.5);
  EXPECT_NE(config_hash(o), config_hash(c));
  EXPECT_EQ(error_code([&] { with_override(c, "srpo.nope=1"); }), errc::kConfig);
  EXPECT_EQ(error_code([&] { with_override(c, "srpo=1"); }), errc::kConfig);
  EXPECT_EQ(error_code([&] { with_override(c, "srpo.beta=-1"); }), errc::kConfig);
}

TEST(Config, HashIgnoresPlacementAndThreads) {
  auto a = tiny("hash");
  auto b = a;
  b.output_dir = "elsewhere";
  b.data.threads = 3;
  b.eval.threads = 2;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, StageHashTracksOnlyUpstreamSections) {
  const auto a = tiny("stage");
  auto b = a;
  b.srpo.beta = 2.0;
  b.eval.reactive = true;
  for (const char* s : {"gen-data", "train-prior", "train-critic"}) EXPECT_EQ(stage_hash(a, s), stage_hash(b, s)) << s;
  EXPECT_NE(stage_hash(a, "extract-policy"), stage_hash(b, "extract-policy"));
  b = a;
  b.prior.steps += 1;
  EXPECT_EQ(stage_hash(a, "train-critic"), stage_hash(b, "train-critic"));
  EXPECT_NE(stage_hash(a, "train-prior"), stage_hash(b, "train-prior"));
}

TEST(Pipeline, ExtractBeforeCriticNamesTheMissingCheckpoint) {
  const auto c = tiny("missing");
  gen_data(c);
  train_prior(c);
  EXPECT_EQ(error_code([&] { extract_policy(c); }), errc::kMissingArtifact);
  const auto msg = error_text([&] { extract_policy(c); });
  EXPECT_NE(msg.find("critic.ckpt"), std::string::npos) << msg;
  EXPECT_NE(msg.find("train-critic"), std::string::npos) << msg;
}

TEST(Pipeline, ChangedUpstreamSettingsAreRejected) {
  auto c = tiny("mismatch");
  gen_data(c);
  auto other = c;
  other.data.scenarios_per_kind = 3;
  EXPECT_EQ(error_code([&] { train_prior(other); }), errc::kHashMismatch);
  other = c;
  other.srpo.beta = 1.0;
  EXPECT_NO_THROW(train_prior(other));
}

TEST(Pipeline, ZeroExtractionStepsKeepTheInitialPolicy) {
  auto c = tiny("zero_steps");
  c.srpo.steps = 0;
  run_training(c);
  const auto d = load_dataset(c);
  const auto p = paths_of(c);
  const auto pol = load_policy(p.policy(), c, d, "extract-policy");
  const auto init = load_policy(p.policy_init(), c, d, "train-critic");
  EXPECT_TRUE(pol.params == init.params);
}

TEST(Pipeline, ArtifactsCarryProvenance) {
  const auto c = tiny("provenance");
  run_training(c);
  const auto ck = nn::load_checkpoint(paths_of(c).policy().string());
  const auto meta = json::parse(ck.metadata);
  EXPECT_EQ(meta["command"], "extract-policy");
  EXPECT_EQ(meta["version"], kVersion);
  EXPECT_EQ(meta["config_hash"], hex64(config_hash(c)));
  EXPECT_EQ(meta["seed"], c.seed);
  EXPECT_EQ(meta["sources"]["critic"], file_hash(paths_of(c).critic()));
}

TEST(Pipeline, RepeatedRunsGiveIdenticalBytes) {
  auto a = tiny("repeat_a");
  auto b = tiny("repeat_b");
  b.data.threads = 2;
  for (const auto& c : {a, b}) {
    run_training(c);
    for (const auto& name : {"policy", "diffusion", "expert", "constant-velocity"}) run_eval(c, name);
    write_report(c);
  }
  const auto pa = paths_of(a), pb = paths_of(b);
  for (const auto& f : {pa.dataset(), pa.prior(), pa.critic(), pa.policy_init(), pa.policy(), pa.srpo_log(),
                        pa.eval("policy", false), pa.eval("diffusion", false), pa.report_csv()})
    EXPECT_EQ(bytes(f), bytes(pb.dir / f.filename())) << f.filename();
}

TEST(Pipeline, ReportJudgesTheClosedLoop) {
  const auto c = tiny("report");
  run_training(c);
  for (const auto& name : {"policy", "diffusion", "constant-velocity"}) run_eval(c, name);
  run_bench(c);
  const auto r = write_report(c);
  EXPECT_TRUE(r.doc["criteria"].contains("closed_loop"));
  EXPECT_TRUE(r.doc["criteria"].contains("objective"));
  EXPECT_TRUE(r.doc["criteria"].contains("latency"));
  EXPECT_EQ(r.doc["planners"].size(), 3u);
  EXPECT_TRUE(fs::exists(paths_of(c).report_csv()));
}

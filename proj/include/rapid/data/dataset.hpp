#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "rapid/core/binary_io.hpp"
#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/core/rng.hpp"
#include "rapid/pdm/scorer.hpp"
#include "rapid/world/encoder.hpp"
#include "rapid/world/episode.hpp"
#include "rapid/world/expert.hpp"
#include "rapid/world/scenario.hpp"

namespace rapid::data {

using world::ScenarioKind;

// File layout, little-endian:
//   "RAPIDDS1" | u32 version | u32 state_dim | u32 action_dim | u64 count | u64 world_hash
//   count records: f64[state_dim] s | f64[action_dim] a | f64 r | f64[state_dim] s' | u8 done
//                  | u8 kind | u64 scenario_seed | u32 step
//   stats: f64[state_dim] state mean, std | f64[action_dim] action mean, std, box
//   str metadata
inline constexpr char kDatasetMagic[8] = {'R', 'A', 'P', 'I', 'D', 'D', 'S', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

/// Where a record came from, so it can be regenerated and re-scored.
struct RecordTag {
  ScenarioKind kind = ScenarioKind::lane_follow;
  std::uint64_t scenario_seed = 0;
  std::uint32_t step = 0;
  friend bool operator==(const RecordTag&, const RecordTag&) = default;
};

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  RecordTag tag;
};

/// Normalized replay buffer; columns are records.
struct Dataset {
  int state_dim = 0;
  int action_dim = 0;
  std::uint64_t world_hash = 0;
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  std::vector<std::uint8_t> done;
  std::vector<RecordTag> tags;
  world::FeatureStats state_stats;
  world::FeatureStats action_stats;
  Eigen::VectorXd action_box;  // per-coordinate bound of normalized actions
  std::string metadata;

  Eigen::Index size() const { return states.cols(); }

  Transition at(Eigen::Index i) const {
    require(i >= 0 && i < size(), errc::kDomain, "record index out of range");
    return {states.col(i), actions.col(i), rewards[i], next_states.col(i), done[static_cast<std::size_t>(i)] != 0,
            tags[static_cast<std::size_t>(i)]};
  }

  void validate() const {
    const auto n = size();
    require(actions.cols() == n && next_states.cols() == n && rewards.size() == n &&
                static_cast<Eigen::Index>(done.size()) == n && static_cast<Eigen::Index>(tags.size()) == n,
            errc::kShape, "dataset columns disagree on the record count");
    require(states.rows() == state_dim && next_states.rows() == state_dim && actions.rows() == action_dim,
            errc::kShape, "dataset dims disagree with its header");
    require(states.allFinite() && actions.allFinite() && next_states.allFinite() && rewards.allFinite(),
            errc::kNonFinite, "dataset holds non-finite values");
    require((rewards.array() >= 0.0).all() && (rewards.array() <= 1.0).all(), errc::kDomain,
            "dataset rewards must lie in [0, 1]");
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.state_dim == b.state_dim && a.action_dim == b.action_dim && a.world_hash == b.world_hash &&
           a.states == b.states && a.actions == b.actions && a.rewards == b.rewards &&
           a.next_states == b.next_states && a.done == b.done && a.tags == b.tags &&
           a.state_stats.mean == b.state_stats.mean && a.state_stats.std == b.state_stats.std &&
           a.action_stats.mean == b.action_stats.mean && a.action_stats.std == b.action_stats.std &&
           a.action_box == b.action_box && a.metadata == b.metadata;
  }
};

struct BuildConfig {
  int scenarios_per_kind = 10;
  std::uint64_t seed = 0;
  std::vector<ScenarioKind> kinds{std::begin(world::kAllKinds), std::end(world::kAllKinds)};
  int threads = 0;  // 0: hardware concurrency
};

struct BuildResult {
  Dataset dataset;
  int scenarios = 0;
  int skipped = 0;
};

inline std::uint64_t scenario_seed(std::uint64_t root, ScenarioKind kind, int index) {
  return Fnv1a{}.u64(root).str("scenario").str(world::to_string(kind)).u64(static_cast<std::uint64_t>(index)).value();
}

namespace detail {

struct RawRecord {
  world::RawFeatures state;
  Eigen::VectorXd action;
  double reward = 0.0;
  world::RawFeatures next_state;
  bool done = false;
  RecordTag tag;
};

struct EpisodeOutcome {
  std::vector<RawRecord> records;
  bool failed = false;
};

/// Receding-horizon expert episode: one record per replanning point.
inline EpisodeOutcome expert_episode(const world::Scenario& sc, const world::WorldConfig& wc,
                                     const pdm::ScorerConfig& pc, const world::ExpertConfig& ex) {
  EpisodeOutcome out;
  try {
    auto history = world::initial_history(sc.ego_start, wc);
    for (int step = 0; step * wc.executed_steps < wc.episode_len; ++step) {
      const double t = step * wc.executed_steps * wc.dt;
      const auto scene = world::make_scene(sc, history, world::scripted_states(sc, t), wc);
      const auto plan = world::expert_demonstrate(scene, sc.mode_seed, wc, ex);
      const double r = pdm::score(scene, plan, world::agent_futures(sc, t, wc.horizon, wc), wc, pc).score;
      history = world::advance_history(history, world::execute_prefix(scene.ego(), plan, wc.executed_steps), wc);
      const double t_next = t + wc.executed_steps * wc.dt;
      const auto next = world::make_scene(sc, history, world::scripted_states(sc, t_next), wc);
      const bool done = world::goal_reached(next) || (step + 1) * wc.executed_steps >= wc.episode_len;
      out.records.push_back({world::raw_features(scene, wc), world::trajectory_to_action(plan, world::pose_of(scene.ego())),
                             r, world::raw_features(next, wc), done,
                             {sc.kind, sc.seed, static_cast<std::uint32_t>(step)}});
      if (done) break;
    }
  } catch (const Error&) {
    out.records.clear();
    out.failed = true;
  }
  return out;
}

template <class F>
void parallel_for(int n, int threads, F&& body) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(n, 1));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += threads) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Max |normalized action| per coordinate with 5% headroom.
inline Eigen::VectorXd action_box_of(const Eigen::MatrixXd& normalized_actions) {
  Eigen::VectorXd box = normalized_actions.cwiseAbs().rowwise().maxCoeff() * 1.05;
  return box.cwiseMax(1e-3);
}

/// Runs the scripted expert over generated scenarios, scores each plan, and
/// returns the normalized buffer. Scenarios are built in parallel and merged
/// in (kind, index) order, so the result does not depend on thread count.
inline BuildResult build_buffer(const BuildConfig& bc, const world::WorldConfig& wc, const pdm::ScorerConfig& pc = {},
                                const world::ExpertConfig& ex = {}) {
  require(bc.scenarios_per_kind >= 1, errc::kConfig, "scenarios_per_kind must be >= 1");
  require(!bc.kinds.empty(), errc::kConfig, "no scenario kinds requested");
  wc.validate();
  pc.validate();

  const int per = bc.scenarios_per_kind;
  const int total = per * static_cast<int>(bc.kinds.size());
  std::vector<detail::EpisodeOutcome> outcomes(static_cast<std::size_t>(total));
  detail::parallel_for(total, bc.threads, [&](int i) {
    const auto kind = bc.kinds[static_cast<std::size_t>(i / per)];
    const auto sc = world::generate_scenario(scenario_seed(bc.seed, kind, i % per), kind, wc);
    outcomes[static_cast<std::size_t>(i)] = detail::expert_episode(sc, wc, pc, ex);
  });

  BuildResult res;
  res.scenarios = total;
  std::vector<const detail::RawRecord*> recs;
  for (const auto& o : outcomes) {
    if (o.failed) ++res.skipped;
    for (const auto& r : o.records) recs.push_back(&r);
  }
  require(!recs.empty(), errc::kDomain, "every scenario failed; dataset would be empty");

  const auto n = static_cast<Eigen::Index>(recs.size());
  const int ds = wc.state_dim, da = wc.action_dim();
  Eigen::MatrixXd raw_s(ds, n), mask_s(ds, n), raw_a(da, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    raw_s.col(j) = recs[static_cast<std::size_t>(j)]->state.values;
    mask_s.col(j) = recs[static_cast<std::size_t>(j)]->state.present;
    raw_a.col(j) = recs[static_cast<std::size_t>(j)]->action;
  }

  Dataset& d = res.dataset;
  d.state_dim = ds;
  d.action_dim = da;
  d.world_hash = wc.hash();
  d.state_stats = world::FeatureStats::fit(raw_s, &mask_s);
  d.action_stats = world::FeatureStats::fit(raw_a);
  d.states.resize(ds, n);
  d.next_states.resize(ds, n);
  d.rewards.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = *recs[static_cast<std::size_t>(j)];
    d.states.col(j) = world::normalize_features(r.state, d.state_stats);
    d.next_states.col(j) = world::normalize_features(r.next_state, d.state_stats);
    d.rewards[j] = r.reward;
    d.done.push_back(r.done ? 1 : 0);
    d.tags.push_back(r.tag);
  }
  d.actions = d.action_stats.normalize_cols(raw_a);
  d.action_box = action_box_of(d.actions);
  d.validate();
  return res;
}

inline io::Writer serialize(const Dataset& d) {
  d.validate();
  io::Writer w;
  w.raw(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.state_dim));
  w.u32(static_cast<std::uint32_t>(d.action_dim));
  w.u64(static_cast<std::uint64_t>(d.size()));
  w.u64(d.world_hash);
  auto vec = [&](const Eigen::VectorXd& v) { w.f64s({v.data(), static_cast<std::size_t>(v.size())}); };
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    vec(d.states.col(j));
    vec(d.actions.col(j));
    w.f64(d.rewards[j]);
    vec(d.next_states.col(j));
    w.u8(d.done[static_cast<std::size_t>(j)]);
    const auto& tag = d.tags[static_cast<std::size_t>(j)];
    w.u8(static_cast<std::uint8_t>(tag.kind));
    w.u64(tag.scenario_seed);
    w.u32(tag.step);
  }
  vec(d.state_stats.mean);
  vec(d.state_stats.std);
  vec(d.action_stats.mean);
  vec(d.action_stats.std);
  vec(d.action_box);
  w.str(d.metadata);
  return w;
}

inline void save(const Dataset& d, const std::string& path) { serialize(d).save(path); }

/// Parses and validates a dataset against the current world configuration.
inline Dataset deserialize(io::Reader& r, const world::WorldConfig& wc) {
  char magic[8];
  r.raw(magic, sizeof magic, "header field 'magic'");
  require(std::equal(magic, magic + 8, kDatasetMagic), errc::kFormat, "bad dataset header field 'magic'");
  const auto version = r.u32("header field 'version'");
  require(version == kDatasetVersion, errc::kFormat,
          "unsupported dataset header field 'version' = " + std::to_string(version));
  Dataset d;
  d.state_dim = static_cast<int>(r.u32("header field 'state_dim'"));
  d.action_dim = static_cast<int>(r.u32("header field 'action_dim'"));
  require(d.state_dim == wc.state_dim, errc::kShape,
          "dataset header field 'state_dim' = " + std::to_string(d.state_dim) + ", world expects " +
              std::to_string(wc.state_dim));
  require(d.action_dim == wc.action_dim(), errc::kShape,
          "dataset header field 'action_dim' = " + std::to_string(d.action_dim) + ", world expects " +
              std::to_string(wc.action_dim()));
  const auto count = r.u64("header field 'count'");
  d.world_hash = r.u64("header field 'world_hash'");
  require(d.world_hash == wc.hash(), errc::kHashMismatch,
          "dataset header field 'world_hash' = " + hex64(d.world_hash) + " does not match the current world config " +
              hex64(wc.hash()));
  const std::size_t record_bytes = 8 * (2 * d.state_dim + d.action_dim + 1) + 1 + 1 + 8 + 4;
  require(count <= r.remaining() / record_bytes, errc::kFormat,
          "dataset header field 'count' = " + std::to_string(count) + " exceeds the records present (" +
              std::to_string(r.remaining() / record_bytes) + ")");

  const auto n = static_cast<Eigen::Index>(count);
  d.states.resize(d.state_dim, n);
  d.actions.resize(d.action_dim, n);
  d.rewards.resize(n);
  d.next_states.resize(d.state_dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::string where = "record " + std::to_string(j);
    r.f64s({d.states.col(j).data(), static_cast<std::size_t>(d.state_dim)}, (where + " state").c_str());
    r.f64s({d.actions.col(j).data(), static_cast<std::size_t>(d.action_dim)}, (where + " action").c_str());
    d.rewards[j] = r.f64((where + " reward").c_str());
    r.f64s({d.next_states.col(j).data(), static_cast<std::size_t>(d.state_dim)}, (where + " next_state").c_str());
    d.done.push_back(r.u8((where + " done").c_str()));
    RecordTag tag;
    const auto kind = r.u8((where + " kind").c_str());
    require(kind < std::size(world::kAllKinds), errc::kFormat, where + " has unknown scenario kind");
    tag.kind = static_cast<ScenarioKind>(kind);
    tag.scenario_seed = r.u64((where + " scenario_seed").c_str());
    tag.step = r.u32((where + " step").c_str());
    d.tags.push_back(tag);
  }
  auto vec = [&](Eigen::VectorXd& v, Eigen::Index size, const char* what) {
    v.resize(size);
    r.f64s({v.data(), static_cast<std::size_t>(size)}, what);
  };
  vec(d.state_stats.mean, d.state_dim, "stats field 'state_mean'");
  vec(d.state_stats.std, d.state_dim, "stats field 'state_std'");
  vec(d.action_stats.mean, d.action_dim, "stats field 'action_mean'");
  vec(d.action_stats.std, d.action_dim, "stats field 'action_std'");
  vec(d.action_box, d.action_dim, "stats field 'action_box'");
  d.metadata = r.str("metadata");
  require(r.remaining() == 0, errc::kFormat,
          "dataset has " + std::to_string(r.remaining()) + " trailing bytes after the metadata");
  d.validate();
  return d;
}

inline Dataset load(const std::string& path, const world::WorldConfig& wc) {
  auto r = io::Reader::from_file(path);
  try {
    return deserialize(r, wc);
  } catch (const Error& e) {
    throw Error(e.code(), "dataset '" + path + "': " + e.what());
  }
}

/// Uniform with replacement.
inline std::vector<Eigen::Index> sample_indices(const Dataset& d, int batch, Rng& rng) {
  require(d.size() > 0, errc::kDomain, "cannot sample from an empty dataset");
  require(batch >= 1, errc::kDomain, "batch must be >= 1");
  std::uniform_int_distribution<Eigen::Index> pick(0, d.size() - 1);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

struct Batch {
  Eigen::MatrixXd states, actions, next_states;
  Eigen::VectorXd rewards, done;
};

inline Batch gather(const Dataset& d, const std::vector<Eigen::Index>& idx) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  Batch out{Eigen::MatrixXd(d.state_dim, b), Eigen::MatrixXd(d.action_dim, b), Eigen::MatrixXd(d.state_dim, b),
            Eigen::VectorXd(b), Eigen::VectorXd(b)};
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto i = idx[static_cast<std::size_t>(j)];
    out.states.col(j) = d.states.col(i);
    out.actions.col(j) = d.actions.col(i);
    out.next_states.col(j) = d.next_states.col(i);
    out.rewards[j] = d.rewards[i];
    out.done[j] = d.done[static_cast<std::size_t>(i)];
  }
  return out;
}

inline Batch sample_batch(const Dataset& d, int batch, Rng& rng) { return gather(d, sample_indices(d, batch, rng)); }

/// Re-creates the scene a record was taken from by replaying the expert
/// episode up to the record's step. Returns the scene and agent futures.
struct RegeneratedRecord {
  world::Scenario scenario;
  world::SceneContext scene;
  std::vector<world::Trajectory> futures;
};

inline RegeneratedRecord regenerate(const RecordTag& tag, const world::WorldConfig& wc,
                                    const world::ExpertConfig& ex = {}) {
  RegeneratedRecord out;
  out.scenario = world::generate_scenario(tag.scenario_seed, tag.kind, wc);
  const auto& sc = out.scenario;
  auto history = world::initial_history(sc.ego_start, wc);
  for (std::uint32_t step = 0;; ++step) {
    const double t = step * wc.executed_steps * wc.dt;
    const auto scene = world::make_scene(sc, history, world::scripted_states(sc, t), wc);
    if (step == tag.step) {
      out.scene = scene;
      out.futures = world::agent_futures(sc, t, wc.horizon, wc);
      return out;
    }
    const auto plan = world::expert_demonstrate(scene, sc.mode_seed, wc, ex);
    history = world::advance_history(history, world::execute_prefix(scene.ego(), plan, wc.executed_steps), wc);
  }
}

}  // namespace rapid::data

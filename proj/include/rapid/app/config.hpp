#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rapid/core/error.hpp"
#include "rapid/core/hash.hpp"
#include "rapid/data/dataset.hpp"
#include "rapid/diffusion/schedule.hpp"
#include "rapid/eval/closed_loop.hpp"
#include "rapid/iql/critic.hpp"
#include "rapid/pdm/scorer.hpp"
#include "rapid/srpo/policy.hpp"
#include "rapid/world/vehicle.hpp"

namespace rapid::app {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

struct DataSection {
  int scenarios_per_kind = 60;
  std::vector<std::string> kinds{"lane_follow", "lead_stop", "obstacle_pass", "merge"};
  int threads = 0;
};

struct PriorSection {
  std::vector<int> hidden{128, 128};
  int steps = 24000;
  int batch = 256;
  double learning_rate = 3e-3;
  double final_lr_fraction = 0.02;
  double t_lo = 0.02;
  double t_hi = 0.98;
  int sample_steps = 20;
};

struct CriticSection {
  std::vector<int> hidden{128, 128};
  iql::CriticHyper hyper;
  int steps = 4000;
  int awr_steps = 2000;
  int batch = 256;
};

struct PolicySection {
  std::vector<int> hidden{128, 128};
};

struct SrpoSection {
  double beta = 0.7;
  double learning_rate = 3e-4;
  int score_samples = 1;
  int steps = 2000;
  int batch = 256;
};

struct EvalSection {
  int scenarios_per_kind = 13;
  int heldout_scenarios_per_kind = 5;
  bool reactive = false;
  int replan_every = 2;
  int episode_len = 20;
  int threads = 0;
  world::IdmParams idm;
};

struct BenchSection {
  int calls = 200;
  int warmup = 10;
};

/// Everything a pipeline run depends on. Parsed strictly: unknown keys and
/// wrongly typed values are rejected with the dotted path of the offender.
struct ExperimentConfig {
  std::uint64_t seed = 20240613;
  std::string output_dir = "out";
  world::WorldConfig world;
  pdm::ScorerConfig scorer;
  DataSection data;
  PriorSection prior;
  CriticSection critic;
  PolicySection policy;
  SrpoSection srpo;
  EvalSection eval;
  BenchSection bench;

  diffusion::TimeRange times() const { return {prior.t_lo, prior.t_hi}; }

  iql::CriticHyper critic_hyper() const { return critic.hyper; }

  srpo::SrpoHyper srpo_hyper() const {
    srpo::SrpoHyper h;
    h.beta = srpo.beta;
    h.learning_rate = srpo.learning_rate;
    h.score_samples = srpo.score_samples;
    h.times = times();
    return h;
  }

  data::BuildConfig build_config() const {
    data::BuildConfig bc;
    bc.scenarios_per_kind = data.scenarios_per_kind;
    bc.seed = make_stream(seed, "data")();
    bc.kinds.clear();
    for (const auto& k : data.kinds) bc.kinds.push_back(world::parse_kind(k));
    bc.threads = data.threads;
    return bc;
  }

  eval::EvalConfig eval_config() const {
    eval::EvalConfig ec;
    ec.episode_len = eval.episode_len;
    ec.replan_every = eval.replan_every;
    ec.reactive = eval.reactive;
    ec.idm = eval.idm;
    return ec;
  }

  /// The validation split draws its scenarios from a separate stream so that
  /// hyperparameters can be chosen without touching the evaluation suite.
  eval::SuiteConfig suite_config(bool validation = false) const {
    eval::SuiteConfig sc;
    sc.kinds = build_config().kinds;
    sc.scenarios_per_kind = eval.scenarios_per_kind;
    sc.seed = make_stream(seed, validation ? "validation" : "eval")();
    sc.threads = eval.threads;
    return sc;
  }

  void validate() const {
    world.validate();
    scorer.validate();
    require(data.scenarios_per_kind >= 1 && !data.kinds.empty(), errc::kConfig, "data section needs scenarios");
    for (const auto& k : data.kinds) {
      try {
        world::parse_kind(k);
      } catch (const Error& e) {
        throw Error(errc::kConfig, std::string("data.kinds: ") + e.what());
      }
    }
    times().validate();
    require(prior.steps >= 0 && prior.batch >= 1 && prior.learning_rate > 0 && prior.sample_steps >= 1 &&
                prior.final_lr_fraction > 0 && prior.final_lr_fraction <= 1, errc::kConfig,
            "prior section out of range");
    critic.hyper.validate();
    require(critic.steps >= 0 && critic.awr_steps >= 0 && critic.batch >= 1, errc::kConfig,
            "critic section out of range");
    srpo_hyper().validate();
    require(srpo.steps >= 0 && srpo.batch >= 1, errc::kConfig, "srpo section out of range");
    eval_config().validate();
    require(eval.scenarios_per_kind >= 1 && eval.heldout_scenarios_per_kind >= 1, errc::kConfig,
            "eval section needs scenarios");
    require(bench.calls >= 100 && bench.warmup >= 10, errc::kConfig, "bench needs >= 100 calls and >= 10 warm-ups");
    for (const auto* h : {&prior.hidden, &critic.hidden, &policy.hidden})
      for (int w : *h) require(w >= 1, errc::kConfig, "hidden widths must be >= 1");
  }
};

namespace detail {

/// Walks one JSON object, recording which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), errc::kConfig, "config section '" + label() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(errc::kConfig, "config key '" + dotted(key) + "' has the wrong type");
    }
  }

  Fields sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Fields(j_.contains(key) ? j_.at(key) : empty, dotted(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw Error(errc::kConfig, "unknown config key '" + dotted(item.key()) + "'");
  }

 private:
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& w = c.world;
  const auto& s = c.scorer;
  const auto& h = c.critic.hyper;
  const auto& idm = c.eval.idm;
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"world",
       {{"wheelbase", w.wheelbase}, {"v_max", w.v_max}, {"steer_max", w.steer_max}, {"accel_min", w.accel_min},
        {"accel_max", w.accel_max}, {"dt", w.dt}, {"horizon", w.horizon}, {"history", w.history},
        {"state_dim", w.state_dim}, {"max_agents", w.max_agents}, {"nearest_agents", w.nearest_agents},
        {"ego_half_length", w.ego_half_length}, {"ego_half_width", w.ego_half_width},
        {"feasibility_margin", w.feasibility_margin}, {"episode_len", w.episode_len},
        {"executed_steps", w.executed_steps}}},
      {"scorer",
       {{"weights",
         {{"ttc", s.weights.ttc}, {"comfort", s.weights.comfort}, {"proximity", s.weights.proximity},
          {"progress", s.weights.progress}, {"speed_limit", s.weights.speed_limit},
          {"lane_following", s.weights.lane_following}}},
        {"ttc_critical", s.ttc_critical}, {"ttc_safe", s.ttc_safe}, {"max_accel", s.max_accel},
        {"max_jerk", s.max_jerk}, {"max_yaw_rate", s.max_yaw_rate}, {"proximity_base", s.proximity_base},
        {"proximity_headway", s.proximity_headway}, {"direction_tolerance", s.direction_tolerance},
        {"lane_tolerance", s.lane_tolerance}, {"reference_accel", s.reference_accel},
        {"overlap_margin", s.overlap_margin}}},
      {"data", {{"scenarios_per_kind", c.data.scenarios_per_kind}, {"kinds", c.data.kinds}, {"threads", c.data.threads}}},
      {"prior",
       {{"hidden", c.prior.hidden}, {"steps", c.prior.steps}, {"batch", c.prior.batch},
        {"learning_rate", c.prior.learning_rate}, {"final_lr_fraction", c.prior.final_lr_fraction}, {"t_lo", c.prior.t_lo}, {"t_hi", c.prior.t_hi},
        {"sample_steps", c.prior.sample_steps}}},
      {"critic",
       {{"hidden", c.critic.hidden}, {"tau", h.tau}, {"gamma", h.gamma}, {"beta_awr", h.beta_awr},
        {"awr_clip", h.awr_clip}, {"polyak", h.polyak}, {"lr_value", h.lr_value}, {"lr_q", h.lr_q},
        {"lr_policy", h.lr_policy}, {"steps", c.critic.steps}, {"awr_steps", c.critic.awr_steps},
        {"batch", c.critic.batch}}},
      {"policy", {{"hidden", c.policy.hidden}}},
      {"srpo",
       {{"beta", c.srpo.beta}, {"learning_rate", c.srpo.learning_rate}, {"score_samples", c.srpo.score_samples},
        {"steps", c.srpo.steps}, {"batch", c.srpo.batch}}},
      {"eval",
       {{"scenarios_per_kind", c.eval.scenarios_per_kind},
        {"heldout_scenarios_per_kind", c.eval.heldout_scenarios_per_kind}, {"reactive", c.eval.reactive},
        {"replan_every", c.eval.replan_every}, {"episode_len", c.eval.episode_len}, {"threads", c.eval.threads},
        {"idm",
         {{"headway", idm.headway}, {"max_accel", idm.max_accel}, {"comfort_decel", idm.comfort_decel},
          {"min_gap", idm.min_gap}, {"exponent", idm.exponent}}}}},
      {"bench", {{"calls", c.bench.calls}, {"warmup", c.bench.warmup}}},
  };
}

/// Missing keys keep their defaults.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::Fields root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  {
    auto f = root.sub("world");
    auto& w = c.world;
    f.get("wheelbase", w.wheelbase);
    f.get("v_max", w.v_max);
    f.get("steer_max", w.steer_max);
    f.get("accel_min", w.accel_min);
    f.get("accel_max", w.accel_max);
    f.get("dt", w.dt);
    f.get("horizon", w.horizon);
    f.get("history", w.history);
    f.get("state_dim", w.state_dim);
    f.get("max_agents", w.max_agents);
    f.get("nearest_agents", w.nearest_agents);
    f.get("ego_half_length", w.ego_half_length);
    f.get("ego_half_width", w.ego_half_width);
    f.get("feasibility_margin", w.feasibility_margin);
    f.get("episode_len", w.episode_len);
    f.get("executed_steps", w.executed_steps);
    f.finish();
  }
  {
    auto f = root.sub("scorer");
    auto& s = c.scorer;
    {
      auto wf = f.sub("weights");
      wf.get("ttc", s.weights.ttc);
      wf.get("comfort", s.weights.comfort);
      wf.get("proximity", s.weights.proximity);
      wf.get("progress", s.weights.progress);
      wf.get("speed_limit", s.weights.speed_limit);
      wf.get("lane_following", s.weights.lane_following);
      wf.finish();
    }
    f.get("ttc_critical", s.ttc_critical);
    f.get("ttc_safe", s.ttc_safe);
    f.get("max_accel", s.max_accel);
    f.get("max_jerk", s.max_jerk);
    f.get("max_yaw_rate", s.max_yaw_rate);
    f.get("proximity_base", s.proximity_base);
    f.get("proximity_headway", s.proximity_headway);
    f.get("direction_tolerance", s.direction_tolerance);
    f.get("lane_tolerance", s.lane_tolerance);
    f.get("reference_accel", s.reference_accel);
    f.get("overlap_margin", s.overlap_margin);
    f.finish();
  }
  {
    auto f = root.sub("data");
    f.get("scenarios_per_kind", c.data.scenarios_per_kind);
    f.get("kinds", c.data.kinds);
    f.get("threads", c.data.threads);
    f.finish();
  }
  {
    auto f = root.sub("prior");
    f.get("hidden", c.prior.hidden);
    f.get("steps", c.prior.steps);
    f.get("batch", c.prior.batch);
    f.get("learning_rate", c.prior.learning_rate);
    f.get("final_lr_fraction", c.prior.final_lr_fraction);
    f.get("t_lo", c.prior.t_lo);
    f.get("t_hi", c.prior.t_hi);
    f.get("sample_steps", c.prior.sample_steps);
    f.finish();
  }
  {
    auto f = root.sub("critic");
    auto& h = c.critic.hyper;
    f.get("hidden", c.critic.hidden);
    f.get("tau", h.tau);
    f.get("gamma", h.gamma);
    f.get("beta_awr", h.beta_awr);
    f.get("awr_clip", h.awr_clip);
    f.get("polyak", h.polyak);
    f.get("lr_value", h.lr_value);
    f.get("lr_q", h.lr_q);
    f.get("lr_policy", h.lr_policy);
    f.get("steps", c.critic.steps);
    f.get("awr_steps", c.critic.awr_steps);
    f.get("batch", c.critic.batch);
    f.finish();
  }
  {
    auto f = root.sub("policy");
    f.get("hidden", c.policy.hidden);
    f.finish();
  }
  {
    auto f = root.sub("srpo");
    f.get("beta", c.srpo.beta);
    f.get("learning_rate", c.srpo.learning_rate);
    f.get("score_samples", c.srpo.score_samples);
    f.get("steps", c.srpo.steps);
    f.get("batch", c.srpo.batch);
    f.finish();
  }
  {
    auto f = root.sub("eval");
    f.get("scenarios_per_kind", c.eval.scenarios_per_kind);
    f.get("heldout_scenarios_per_kind", c.eval.heldout_scenarios_per_kind);
    f.get("reactive", c.eval.reactive);
    f.get("replan_every", c.eval.replan_every);
    f.get("episode_len", c.eval.episode_len);
    f.get("threads", c.eval.threads);
    auto idm = f.sub("idm");
    idm.get("headway", c.eval.idm.headway);
    idm.get("max_accel", c.eval.idm.max_accel);
    idm.get("comfort_decel", c.eval.idm.comfort_decel);
    idm.get("min_gap", c.eval.idm.min_gap);
    idm.get("exponent", c.eval.idm.exponent);
    idm.finish();
    f.finish();
  }
  {
    auto f = root.sub("bench");
    f.get("calls", c.bench.calls);
    f.get("warmup", c.bench.warmup);
    f.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(errc::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), errc::kMissingArtifact, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Replaces one scalar at a dotted path, e.g. "srpo.beta=0.1". The value is
/// read as JSON, falling back to a plain string. The path must already exist.
inline ExperimentConfig with_override(const ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, errc::kConfig, "override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json j = to_json(c);
  json* node = &j;
  std::stringstream parts(path);
  for (std::string key; std::getline(parts, key, '.');) {
    require(node->is_object() && node->contains(key), errc::kConfig, "unknown config key '" + path + "'");
    node = &(*node)[key];
  }
  require(!node->is_object(), errc::kConfig, "override target '" + path + "' is a section, not a value");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  *node = value;
  return config_from_json(j);
}

/// Content hash of the canonical serialization. Where outputs go and how many
/// threads run cannot change any result, so they are left out.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j["data"].erase("threads");
  j["eval"].erase("threads");
  return hash_string(j.dump());
}

/// Hash of only the sections a stage's output depends on. Inputs are checked
/// against this, so tuning a later stage keeps earlier artifacts valid.
inline std::uint64_t stage_hash(const ExperimentConfig& c, const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> kSections{
      {"gen-data", {"seed", "world", "scorer", "data"}},
      {"train-prior", {"seed", "world", "scorer", "data", "prior"}},
      {"train-critic", {"seed", "world", "scorer", "data", "critic", "policy"}},
      {"extract-policy", {"seed", "world", "scorer", "data", "prior", "critic", "policy", "srpo"}},
  };
  const auto it = kSections.find(stage);
  require(it != kSections.end(), errc::kConfig, "no stage named '" + stage + "'");
  json j = to_json(c);
  j["data"].erase("threads");
  json sub = json::object();
  for (const auto& k : it->second) sub[k] = j[k];
  sub["stage"] = stage;
  return hash_string(sub.dump());
}

}  // namespace rapid::app

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rapid/core/error.hpp"
#include "rapid/eval/closed_loop.hpp"

namespace rapid::eval {

struct LatencyStats {
  std::string planner;
  std::vector<std::int64_t> ns;  // one wall time per timed call
  double mean_ns = 0.0;
  double median_ns = 0.0;
  double p95_ns = 0.0;
};

struct LatencyReport {
  int warmup = 10;
  int calls = 200;
  std::vector<LatencyStats> planners;

  const LatencyStats& at(const std::string& name) const {
    for (const auto& p : planners)
      if (p.planner == name) return p;
    throw Error(errc::kDomain, "no latency entry for planner '" + name + "'");
  }
  /// mean(slow) / mean(fast)
  double ratio(const std::string& slow, const std::string& fast) const { return at(slow).mean_ns / at(fast).mean_ns; }
};

inline LatencyStats summarize_latency(std::string name, std::vector<std::int64_t> ns) {
  require(!ns.empty(), errc::kDomain, "no timed calls");
  LatencyStats s;
  s.planner = std::move(name);
  s.mean_ns = std::accumulate(ns.begin(), ns.end(), 0.0) / static_cast<double>(ns.size());
  auto sorted = ns;
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  s.median_ns = n % 2 ? static_cast<double>(sorted[n / 2]) : 0.5 * static_cast<double>(sorted[n / 2 - 1] + sorted[n / 2]);
  // nearest-rank percentile
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ns = static_cast<double>(sorted[std::max<std::size_t>(rank, 1) - 1]);
  s.ns = std::move(ns);
  return s;
}

/// Times each planner on the same scene, single-threaded, on the steady
/// clock. Planners are interleaved call by call so slow drift in machine load
/// hits all of them alike; warm-up calls are discarded.
inline LatencyReport bench_latency(const std::vector<Planner>& planners, const world::SceneContext& scene,
                                   const world::Scenario& sc, int calls = 200, int warmup = 10,
                                   std::uint64_t seed = 0) {
  require(calls >= 100 && warmup >= 10, errc::kConfig, "latency bench needs >= 100 calls after >= 10 warm-ups");
  require(!planners.empty(), errc::kConfig, "no planners to time");
  LatencyReport rep;
  rep.calls = calls;
  rep.warmup = warmup;
  std::vector<std::vector<std::int64_t>> ns(planners.size());
  std::vector<Rng> rngs;
  for (const auto& p : planners) rngs.push_back(make_stream(seed, "bench/" + p.name));
  double sink = 0.0;
  for (int i = 0; i < warmup + calls; ++i) {
    for (std::size_t p = 0; p < planners.size(); ++p) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto traj = planners[p].plan(scene, sc, rngs[p]);
      const auto t1 = std::chrono::steady_clock::now();
      sink += traj.poses.back().x;
      if (i >= warmup) ns[p].push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
  }
  require(std::isfinite(sink), errc::kNonFinite, "a benchmarked planner produced non-finite poses");
  for (std::size_t p = 0; p < planners.size(); ++p)
    rep.planners.push_back(summarize_latency(planners[p].name, std::move(ns[p])));
  return rep;
}

inline nlohmann::json to_json(const LatencyReport& r) {
  nlohmann::json j;
  j["warmup"] = r.warmup;
  j["calls"] = r.calls;
  j["planners"] = nlohmann::json::array();
  for (const auto& p : r.planners)
    j["planners"].push_back(
        {{"planner", p.planner}, {"mean_ns", p.mean_ns}, {"median_ns", p.median_ns}, {"p95_ns", p.p95_ns}, {"ns", p.ns}});
  return j;
}

}  // namespace rapid::eval

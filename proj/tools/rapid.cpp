// rapid: stage-by-stage driver for the offline pipeline.
//
//   rapid gen-data       --config configs/default.json
//   rapid train-prior    --config ...
//   rapid train-critic   --config ...
//   rapid extract-policy --config ...
//   rapid eval           --config ... --planner policy [--reactive] [--validation]
//   rapid bench          --config ...
//   rapid report         --config ...
//
// Failures print one line "E_CODE: message" on stderr and exit 1.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rapid/app/config.hpp"
#include "rapid/app/pipeline.hpp"

using namespace rapid;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

app::ExperimentConfig resolve(const Common& c) {
  auto cfg = c.config_path.empty() ? app::ExperimentConfig{} : app::load_config(c.config_path);
  for (const auto& o : c.overrides) cfg = app::with_override(cfg, o);
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "experiment config (JSON); defaults apply when omitted");
  sub->add_option("-s,--set", c.overrides, "override a scalar, e.g. --set srpo.beta=0.1");
  sub->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
}

void print_summary(const eval::SuiteResult& r) {
  const auto& s = r.summary;
  std::cout << r.planner << (r.reactive ? " (reactive)" : "") << ": episodes " << s.episodes << ", mean composite "
            << s.mean_composite << ", collision rate " << s.collision_rate << ", failures " << s.failures << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"RAPiD offline pipeline: diffusion prior, IQL critic, score-regularized policy extraction"};
  cli.require_subcommand(1);
  Common common;
  std::string planner = "policy";
  bool reactive = false;
  bool validation = false;

  auto* gen = cli.add_subcommand("gen-data", "run the scripted expert and write the replay buffer");
  auto* prior = cli.add_subcommand("train-prior", "train the diffusion denoiser on the buffer");
  auto* critic = cli.add_subcommand("train-critic", "train V and twin Q, then the AWR initial policy");
  auto* extract = cli.add_subcommand("extract-policy", "score-regularized extraction from the AWR initial policy");
  auto* ev = cli.add_subcommand("eval", "closed-loop evaluation of one planner");
  auto* bench = cli.add_subcommand("bench", "latency of the one-step policy against the sampler");
  auto* report = cli.add_subcommand("report", "join eval and bench outputs into report.json / report.csv");
  auto* config = cli.add_subcommand("config", "print the resolved config and its hash");
  for (auto* s : {gen, prior, critic, extract, ev, bench, report, config}) add_common(s, common);
  ev->add_option("-p,--planner", planner, "policy | diffusion | expert | awr-init | constant-velocity")
      ->check(CLI::IsMember(app::planner_names()));
  ev->add_flag("--reactive", reactive, "IDM agents react to the ego");
  ev->add_flag("--validation", validation, "use the validation scenarios instead of the evaluation suite");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e);
  }

  try {
    auto cfg = resolve(common);
    if (reactive) cfg.eval.reactive = true;
    if (*gen) {
      const auto d = app::gen_data(cfg);
      std::cout << "wrote " << app::paths_of(cfg).dataset().string() << " (" << d.size() << " records)\n";
    } else if (*prior) {
      app::train_prior(cfg);
      std::cout << "wrote " << app::paths_of(cfg).prior().string() << '\n';
    } else if (*critic) {
      app::train_critic(cfg);
      std::cout << "wrote " << app::paths_of(cfg).critic().string() << " and "
                << app::paths_of(cfg).policy_init().string() << '\n';
    } else if (*extract) {
      app::extract_policy(cfg);
      std::cout << "wrote " << app::paths_of(cfg).policy().string() << '\n';
    } else if (*ev) {
      print_summary(app::run_eval(cfg, planner, validation));
    } else if (*bench) {
      const auto rep = app::run_bench(cfg);
      for (const auto& p : rep.planners)
        std::cout << p.planner << ": mean " << p.mean_ns / 1e3 << " us, median " << p.median_ns / 1e3 << " us, p95 "
                  << p.p95_ns / 1e3 << " us\n";
    } else if (*report) {
      const auto r = app::write_report(cfg);
      std::cout << r.doc["criteria"].dump(2) << '\n';
    } else if (*config) {
      std::cout << app::to_json(cfg).dump(2) << "\nconfig_hash " << hex64(app::config_hash(cfg)) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << e.code() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

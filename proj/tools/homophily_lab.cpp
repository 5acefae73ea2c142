#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "homophily/config.hpp"
#include "homophily/pipeline.hpp"

using namespace homophily;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> reps;
  std::optional<std::string> mode;
};

void add_common(CLI::App* cmd, Common& c, bool with_reps, bool with_mode) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  if (with_reps) cmd->add_option("--reps", c.reps, "Replications (overrides the config)");
  if (with_mode)
    cmd->add_option("--mode", c.mode, "Homophily mode")
        ->check(CLI::IsMember({"learning", "preference", "mixed"}));
}

RunConfig resolve(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (c.out) config.output_dir = *c.out;
  if (c.reps) config.replications = *c.reps;
  if (c.mode) config.model.mode = parse_mode(*c.mode);
  validate(config);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulate and estimate learning-driven friendship formation under randomized "
               "dorm allocation."};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common calc_opts;
  int calc_s = 1;
  std::string calc_distance = "far";
  std::optional<double> p0, r, c_near, c_far;
  auto* calc = app.add_subcommand("calc", "Print closed-form model quantities");
  calc->add_option("--config", calc_opts.config_path, "JSON run configuration")
      ->check(CLI::ExistingFile);
  calc->add_option("--mode", calc_opts.mode, "Homophily mode")
      ->check(CLI::IsMember({"learning", "preference", "mixed"}));
  calc->add_option("--s", calc_s, "Similarity count")->capture_default_str();
  calc->add_option("--distance", calc_distance, "near or far")
      ->check(CLI::IsMember({"near", "far"}))
      ->capture_default_str();
  calc->add_option("--p0", p0, "Prior that an interaction is valuable");
  calc->add_option("--r", r, "Discount rate");
  calc->add_option("--c-near", c_near, "Flow cost at the near distance");
  calc->add_option("--c-far", c_far, "Flow cost at the far distance");

  Common rand_opts;
  std::string roster;
  auto* randomize = app.add_subcommand("randomize", "Build randomization lists and dorms from a roster");
  randomize->add_option("--roster", roster, "Roster CSV")->required()->check(CLI::ExistingFile);
  add_common(randomize, rand_opts, false, false);

  Common sim_opts;
  auto* simulate = app.add_subcommand("simulate", "Simulate populations, allocations and links");
  add_common(simulate, sim_opts, true, true);

  Common est_opts;
  std::string dyads_path, nodes_path;
  auto* estimate = app.add_subcommand("estimate", "Estimate the regressions from simulated tables");
  estimate->add_option("--dyads", dyads_path, "Dyad CSV")->required()->check(CLI::ExistingFile);
  estimate->add_option("--nodes", nodes_path, "Node CSV")->required()->check(CLI::ExistingFile);
  add_common(estimate, est_opts, false, false);

  Common exp_opts;
  auto* experiment = app.add_subcommand("experiment", "Run the full pipeline and write a report");
  add_common(experiment, exp_opts, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*calc) {
      RunConfig config;
      if (!calc_opts.config_path.empty()) config = load_config(calc_opts.config_path);
      if (calc_opts.mode) config.model.mode = parse_mode(*calc_opts.mode);
      if (p0) config.model.p0 = *p0;
      if (r) config.model.r = *r;
      if (c_near) config.model.c_near = *c_near;
      if (c_far) config.model.c_far = *c_far;
      cmd_calc(config.model, calc_s,
               calc_distance == "near" ? DistanceClass::Near : DistanceClass::Far, std::cout);
    } else if (*randomize) {
      const RunConfig config = resolve(rand_opts);
      cmd_randomize(roster, config, config.output_dir);
      std::cout << fmt::format("wrote lists.csv, dorms.csv, compliance.csv to {}\n",
                               config.output_dir);
    } else if (*simulate) {
      const RunConfig config = resolve(sim_opts);
      cmd_simulate(config, config.output_dir);
      std::cout << fmt::format("wrote {} replication(s) to {} (config {})\n",
                               config.replications, config.output_dir, config_hash(config));
    } else if (*estimate) {
      const RunConfig config = resolve(est_opts);
      cmd_estimate(dyads_path, nodes_path, config, config.output_dir, std::cerr);
      std::cout << fmt::format("wrote coefficient tables to {}\n", config.output_dir);
    } else if (*experiment) {
      const RunConfig config = resolve(exp_opts);
      const auto report = cmd_experiment(config, config.output_dir);
      int failed = 0;
      for (const auto& inv : report["invariants"]) {
        const auto& pass = inv["pass"];
        const char* status = pass.is_null() ? "SKIP" : pass.get<bool>() ? "PASS" : "FAIL";
        if (!pass.is_null() && !pass.get<bool>()) ++failed;
        std::cout << fmt::format("{} {}: {}\n", status, inv["name"].get<std::string>(),
                                 inv["detail"].get<std::string>());
      }
      std::cout << fmt::format("report: {}/report.json ({} invariant(s) failed)\n",
                               config.output_dir, failed);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

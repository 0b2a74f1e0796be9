#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmicl/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"linear-attention in-context learning laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string experiment_override;
  std::string out_dir = "out";
  std::string format_name = "csv";
  std::int64_t seed_override = 0;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("--config", config_path, "JSON config file")->required();
  run->add_option("--experiment", experiment_override,
                  "override the config's experiment id");
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "override the seed");
  run->add_option("--out", out_dir, "output directory (default: out)");
  run->add_option("--format", format_name, "output format: csv|json (default: csv)");

  CLI::App* check = app.add_subcommand("check", "run the fast self-check suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a config error
  }

  try {
    if (check->parsed()) return mmicl::run_check();

    std::ifstream in(config_path);
    if (!in) throw mmicl::ConfigError("cannot open config '" + config_path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw mmicl::ConfigError("config '" + config_path + "': " + e.what());
    }
    mmicl::ExperimentConfig cfg = mmicl::ExperimentConfig::from_json(j);
    if (!experiment_override.empty()) cfg.experiment = experiment_override;
    if (seed_opt->count() > 0) {
      if (seed_override < 0) throw mmicl::ConfigError("--seed must be nonnegative");
      cfg.seed = static_cast<std::uint64_t>(seed_override);
    }
    cfg.validate();
    mmicl::Format format = mmicl::parse_format(format_name);
    return mmicl::run_experiment(cfg, out_dir, format);
  } catch (const mmicl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

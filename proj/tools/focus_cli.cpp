#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "focus/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with credibility-weighted aggregation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, scenario, run_dir;
  bool force = false;

  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("--config", config_path, "Experiment config (key = value)")->required();
  run->add_option("--out", out_dir, "Output directory; the run lands in <out>/<config-hash>")->required();
  run->add_flag("--force", force, "Overwrite an existing run directory");

  auto* repro = app.add_subcommand("repro", "Run a canned scenario with both aggregators");
  repro->add_option("scenario", scenario, "usc-noisy | usc-normal | multi-tier")->required();
  repro->add_option("--out", out_dir, "Output directory")->required();

  auto* report = app.add_subcommand("report", "Print curves of a finished run and write report.csv");
  report->add_option("run_dir", run_dir, "Run directory containing result.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return focus::cli::kConfigError;
  }

  if (run->parsed()) return focus::cli::cmd_run(config_path, out_dir, force, std::cout, std::cerr);
  if (repro->parsed()) return focus::cli::cmd_repro(scenario, out_dir, std::cout, std::cerr);
  return focus::cli::cmd_report(run_dir, std::cout, std::cerr);
}

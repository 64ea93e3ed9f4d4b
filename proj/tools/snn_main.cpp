// Command-line driver. Values resolve as defaults < --config file < flags.
// Exit status: 0 success, 1 runtime failure or failed check, 2 invalid config or usage.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "experiment.hpp"
#include "report.hpp"

namespace {

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw snn::cli::ConfigError("config: cannot read " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw snn::cli::ConfigError("config: " + path + " is not valid JSON (" + e.what() + ")");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and attack networks with analytically propagated first-layer noise."};
  app.set_version_flag("--version", snn::cli::code_version());
  app.require_subcommand(1);

  std::string config_path, out, mode, eps_grid, checkpoint;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  app.add_option("--config", config_path, "JSON experiment config (see README for the schema)");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed");
  CLI::Option* out_opt = app.add_option("--out", out, "Output directory");
  CLI::Option* sigma_opt = app.add_option("--sigma", sigma, "Noise level (fixed sigma, sigma0, attack/inference sigma)");
  CLI::Option* mode_opt =
      app.add_option("--mode", mode, "Variance propagation")->check(CLI::IsMember({"identity", "diagonal"}));
  CLI::Option* grid_opt = app.add_option("--eps-grid", eps_grid, "Comma-separated eps values, e.g. 0,0.05,0.1");
  CLI::Option* ckpt_opt = app.add_option("--checkpoint", checkpoint, "Model file for eval and attack");

  const std::pair<const char*, const char*> commands[] = {
      {"train", "Train with the stochastic loss; writes model.snnc and history.csv"},
      {"eval", "Clean accuracy of a checkpoint"},
      {"attack", "Accuracy under attack over the eps grid"},
      {"sweep-sigma", "Train and attack one model per sigma in sweep_sigmas"},
      {"at-baseline", "PGD adversarial training for each eps in at_eps"},
      {"learn-sigma", "Learnable and Bimodel sigma runs from --sigma"},
      {"gradcheck", "Backprop against central differences; exit 1 above tolerance"},
      {"mc-validate", "Analytic moments against Monte Carlo; exit 1 on affine-regime violations"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    snn::cli::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = snn::cli::merge_config(cfg, read_config_file(config_path));
    nlohmann::json flags = nlohmann::json::object();
    if (seed_opt->count() > 0) flags["seed"] = seed;
    if (out_opt->count() > 0) flags["out"] = out;
    if (sigma_opt->count() > 0) flags["sigma"] = sigma;
    if (mode_opt->count() > 0) flags["variance_mode"] = mode;
    if (grid_opt->count() > 0) flags["eps_grid"] = snn::cli::parse_number_list(eps_grid);
    if (ckpt_opt->count() > 0) flags["checkpoint"] = checkpoint;
    cfg = snn::cli::merge_config(cfg, flags);
    return snn::cli::run_command(app.get_subcommands().front()->get_name(), cfg, std::cout);
  } catch (const snn::cli::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

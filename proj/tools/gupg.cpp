#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gupg/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Policy optimization for general utilities of the occupancy measure"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  for (const auto& name : gupg::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    gupg::ExperimentConfig config = gupg::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out_dir) config.output_dir = *out_dir;
    const auto result = gupg::run_command(command, config);
    std::printf("%s: %s\n", command.c_str(), result.summary.c_str());
    for (const auto& file : result.files) std::printf("  wrote %s\n", file.string().c_str());
  } catch (const gupg::ConfigError& err) {
    std::fprintf(stderr, "%s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "%s: %s\n", command.c_str(), err.what());
    return 1;
  }
  return 0;
}

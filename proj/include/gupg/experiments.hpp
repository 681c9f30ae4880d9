#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gupg/mdp.hpp"
#include "gupg/optimizer.hpp"
#include "gupg/utilities.hpp"

namespace gupg {

struct EnvironmentConfig {
  /// "gridworld" or "random".
  std::string type = "gridworld";
  std::string layout = "SFFF/FHFH/FFFH/HFFG";
  bool slippery = false;
  double reward_goal = 1.0;
  double cost_at_c = 1.0;
  double reward_at_c = -0.4;
  double start_mix = 0.0;
  double discount = 0.9;
  int states = 5;
  int actions = 3;
  std::uint64_t mdp_seed = 0;
  double dirichlet_alpha = 1.0;

  bool operator==(const EnvironmentConfig&) const = default;
};

struct UtilityConfig {
  /// linear | entropy | kl | min_eigenvalue | log_barrier
  std::string name = "linear";
  double budget = 1.0;
  double beta = 0.0;
  /// KL target visitation; empty draws it as the visitation of a random
  /// policy seeded by `prior_seed`.
  std::vector<double> prior;
  std::uint64_t prior_seed = 0;
  /// KL strong-concavity modulus; 0 keeps the (1-γ)² default.
  double strong_concavity = 0.0;
  /// Min-eigenvalue features, one row per (s, a) in s·A + a order; empty
  /// draws standard normal features of width `feature_dim`.
  std::vector<std::vector<double>> features;
  int feature_dim = 2;
  std::uint64_t feature_seed = 0;

  bool operator==(const UtilityConfig&) const = default;
};

struct PolicyConfig {
  /// tabular | softmax
  std::string parameterization = "softmax";
  /// uniform | random | table
  std::string init = "uniform";
  double init_scale = 1.0;
  std::uint64_t init_seed = 0;
  std::vector<std::vector<double>> table;

  bool operator==(const PolicyConfig&) const = default;
};

struct EstimatorConfig {
  /// exact | variational | composite
  std::string mode = "variational";
  int episodes = 1000;
  int horizon = 0;
  long iterations = 10000;
  double alpha = 0.01;
  double beta_step = 0.1;
  /// constant | robbins_monro
  std::string alpha_schedule = "constant";
  /// constant | robbins_monro | averaging
  std::string beta_schedule = "averaging";
  /// exact | rollout
  std::string q_source = "exact";
  int rollout_horizon = 0;
  int checkpoints = 20;

  bool operator==(const EstimatorConfig&) const = default;
};

struct TrainConfig {
  /// η; 0 selects 1/L̂.
  double step = 0.0;
  int iterations = 100;
  int eval_episodes = 20;
  int eval_every = 1;
  int smoothness_samples = 20;
  /// Compute F(λ*) with Frank-Wolfe for the gap column.
  bool oracle = true;

  bool operator==(const TrainConfig&) const = default;
};

struct MseConfig {
  std::vector<int> episode_counts{100, 1000, 10000};
  int repeats = 10;
  double iterations_per_episode = 20.0;

  bool operator==(const MseConfig&) const = default;
};

struct RateConfig {
  /// sublinear | linear
  std::string model = "sublinear";
  int first_k = 10;
  int last_k = -1;
  double floor = 1e-12;
  /// Use the analytic 2γA/(1-γ)³ step and check the tabular bound per k.
  bool analytic_smoothness = false;
  int fw_iterations = 50000;
  double fw_tolerance = 1e-9;
  /// open_loop | line_search
  std::string fw_step = "line_search";

  bool operator==(const RateConfig&) const = default;
};

struct SweepConfig {
  /// Dotted path of the numeric field being varied.
  std::string parameter = "utility.beta";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;

  bool operator==(const SweepConfig&) const = default;
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  UtilityConfig utility;
  PolicyConfig policy;
  EstimatorConfig estimator;
  TrainConfig train;
  MseConfig mse;
  RateConfig rate;
  SweepConfig sweep;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses and validates a JSON document. Errors name the offending field and
/// the line it sits on.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Sets a numeric field addressed by a dotted path ("utility.beta").
ExperimentConfig with_override(const ExperimentConfig& config, const std::string& path,
                               double value);

Mdp make_environment(const EnvironmentConfig& config);
UtilityPtr make_utility(const ExperimentConfig& config, const Mdp& mdp);
ParametricPolicy make_initial_policy(const PolicyConfig& config, const Mdp& mdp);

/// "%.17g", with nan/inf spelled out.
std::string format_double(double value);

/// Row-major S×A table behind a "S,A" line and a γ line.
void write_occupancy(const std::filesystem::path& path, const Table& lambda, double discount);
struct OccupancyDump {
  Table lambda;
  double discount = 0.0;
};
OccupancyDump read_occupancy(const std::filesystem::path& path);

struct CommandResult {
  std::vector<std::filesystem::path> files;
  std::string summary;
};

CommandResult cmd_estimate_gradient(const ExperimentConfig& config);
CommandResult cmd_train(const ExperimentConfig& config);
CommandResult cmd_mse_study(const ExperimentConfig& config);
CommandResult cmd_rate_study(const ExperimentConfig& config);
/// Runs cmd_train for every (value, seed) pair in its own subdirectory.
/// GUPG_THREADS caps the worker count.
CommandResult cmd_sweep(const ExperimentConfig& config);

const std::vector<std::string>& command_names();
CommandResult run_command(const std::string& name, const ExperimentConfig& config);

}  // namespace gupg

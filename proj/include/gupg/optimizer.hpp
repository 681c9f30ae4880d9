#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gupg/estimation.hpp"
#include "gupg/mdp.hpp"
#include "gupg/utilities.hpp"

namespace gupg {

enum class Parameterization { tabular, softmax };

/// Wraps an S×A parameter table in the matching policy type.
ParametricPolicy make_policy(Parameterization kind, const Table& parameters);

struct ValueIterationResult {
  Vector values;
  std::vector<int> greedy;
  int sweeps = 0;
};

/// Bellman optimality iteration on `reward` until successive iterates differ
/// by less than `tolerance` in sup norm. `warm_start` seeds V when given.
ValueIterationResult value_iteration(const Mdp& mdp, const Table& reward,
                                     double tolerance = 1e-10,
                                     const Vector* warm_start = nullptr,
                                     int max_sweeps = 1000000);

/// ξᵀ V* for the reward table.
double optimal_value(const Mdp& mdp, const Table& reward);

TabularPolicy deterministic_policy(const std::vector<int>& actions, int num_actions);

enum class EstimatorMode { exact, variational, composite };

struct AscentConfig {
  /// η; non-positive selects 1/L̂ from estimate_smoothness.
  double step = 0.0;
  int iterations = 100;
  Parameterization parameterization = Parameterization::softmax;
  EstimatorMode estimator = EstimatorMode::exact;
  /// Monte Carlo estimators: episodes per gradient and truncation (0 = default).
  int episodes = 100;
  int horizon = 0;
  SaddleConfig saddle{};
  int smoothness_samples = 20;
  /// Evaluation rollouts per recorded iteration; 0 disables them.
  int eval_episodes = 0;
  int eval_every = 1;
  /// F(λ*) used for the gap column.
  std::optional<double> optimum;
  bool keep_iterates = true;
  std::uint64_t seed = 0;
};

struct AscentMetrics {
  int k = 0;
  double objective = 0.0;
  double gap = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  double wall_seconds = 0.0;
  double eval_reward = 0.0;
  double eval_cost = 0.0;
};

enum class AscentStatus { completed, barrier_exit };

/// Sequence θ^k with exact F(λ(θ^k)) recorded at every k = 0..iterations.
struct AscentRun {
  std::vector<Table> iterates;
  std::vector<AscentMetrics> metrics;
  Table final_parameters;
  Parameterization parameterization = Parameterization::softmax;
  EstimatorMode estimator = EstimatorMode::exact;
  AscentStatus status = AscentStatus::completed;
  double step = 0.0;
  std::string diagnostic;

  ParametricPolicy final_policy() const { return make_policy(parameterization, final_parameters); }
  std::vector<double> gaps() const;
};

class AscentDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// θ^{k+1} = Proj_Θ(θ^k + η ∇R(θ^k)). Tabular rows are projected onto the
/// simplex; softmax rows are shifted to zero mean, which leaves π unchanged.
AscentRun pg_ascent(const Mdp& mdp, const ParametricPolicy& initial, const Utility& utility,
                    const AscentConfig& config);

/// Exact ∇_θ F(λ(θ)), routed through the composite formula for the log barrier.
Table exact_utility_gradient(const Mdp& mdp, const ParametricPolicy& policy,
                             const Utility& utility);

/// Discounted reward and cost averaged over `episodes` sampled rollouts.
struct Evaluation {
  double reward = 0.0;
  double cost = 0.0;
};
Evaluation evaluate_policy(const Mdp& mdp, const TabularPolicy& policy, int episodes,
                           int horizon, std::uint64_t seed);

struct SmoothnessEstimate {
  /// 2 · largest sampled ‖∇R(θ) - ∇R(θ')‖ / ‖θ - θ'‖.
  double estimate = 0.0;
  double max_quotient = 0.0;
  /// 2γA/(1-γ)³ for linear utilities under the tabular parameterization.
  std::optional<double> analytic;
};

SmoothnessEstimate estimate_smoothness(const Mdp& mdp, const Utility& utility,
                                       Parameterization parameterization, int samples,
                                       std::uint64_t seed);

enum class FwStep { open_loop, line_search };

struct FrankWolfeConfig {
  int iterations = 2000;
  double tolerance = 1e-6;
  FwStep step = FwStep::open_loop;
  double vi_tolerance = 1e-10;
};

struct PolytopeOptimum {
  Table lambda_star;
  double value = 0.0;
  /// ⟨∇F(λ*), v - λ*⟩ for the maximizing vertex v; bounds F(opt) - F(λ*).
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Conditional gradient over the flow polytope. The linear step is an MDP
/// solve on reward ∇F(λ^t); its greedy deterministic policy gives the vertex.
PolytopeOptimum frank_wolfe_optimum(const Mdp& mdp, const Utility& utility,
                                    const FrankWolfeConfig& config = {});

enum class RateModel { sublinear, linear };

struct RateFit {
  RateModel model = RateModel::sublinear;
  /// Sublinear: slope of log gap against log(k+1). Linear: slope against k.
  double slope = 0.0;
  double slope_low = 0.0;
  double slope_high = 0.0;
  /// exp(slope) for the linear model.
  double rho = 0.0;
  double residual_rms = 0.0;
  int first_k = 0;
  int last_k = 0;
  bool early_convergence = false;
};

struct FitWindow {
  int first_k = 10;
  /// Gaps at or below this are treated as converged and end the window.
  double floor = 1e-12;
  int last_k = -1;
};

/// Requires at least 50 entries (k = 0, 1, ...).
RateFit rate_fit(std::span<const double> gaps, RateModel model, const FitWindow& window = {});
RateFit rate_fit(const AscentRun& run, const PolytopeOptimum& oracle, RateModel model,
                 const FitWindow& window = {});

/// 20 L |S| / ((1-γ)² (k+1)) · ‖d^{π*}_ξ / ξ‖∞².
double tabular_rate_bound(const Mdp& mdp, const TabularPolicy& optimal, double smoothness, int k);

}  // namespace gupg

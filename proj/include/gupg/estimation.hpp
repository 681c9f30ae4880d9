#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gupg/mdp.hpp"
#include "gupg/utilities.hpp"

namespace gupg {

/// n episodes of horizon K sampled from one policy on one MDP.
struct EpisodeBatch {
  std::vector<Trajectory> trajectories;
  int horizon = 0;
  double discount = 0.0;
  Table policy_probs;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(trajectories.size()); }
};

/// Episode i uses stream Rng::derive(seed, i), so the batch does not depend
/// on `threads`.
EpisodeBatch generate_batch(const Mdp& mdp, const TabularPolicy& policy, int episodes,
                            int horizon, std::uint64_t seed, int threads = 1);

/// Discounted state-action visit counts averaged over the batch. Absorbed
/// episodes are extended at their terminal state with actions drawn in
/// expectation from the policy. Estimates λ truncated at K.
Table empirical_occupancy(const EpisodeBatch& batch);

enum class QSourceKind { exact, rollout };

/// Where Q(s, a; z) comes from inside the estimators.
struct QSource {
  QSourceKind kind = QSourceKind::exact;
  /// Rollout truncation; 0 picks the default horizon.
  int rollout_horizon = 0;
  std::uint64_t seed = 0;
};

/// Unbiased single-rollout estimate of Q(s, a; z) truncated at `horizon`.
double rollout_q(const Mdp& mdp, const Table& probs, int state, int action, const Table& z,
                 int horizon, Rng& rng);

/// (1/n) Σ_i Σ_k γ^k z(s_k, a_k).
double empirical_value(const EpisodeBatch& batch, const Table& z);

/// (1/n) Σ_i Σ_k γ^k Σ_a Q(s_k, a; z) ∇_θ π_θ(a|s_k).
Table empirical_pg(const Mdp& mdp, const EpisodeBatch& batch, const Table& z,
                   const ParametricPolicy& policy, const QSource& q_source = {});

/// The cumulative-return baseline: empirical_pg with z = r.
Table reinforce_pg(const Mdp& mdp, const EpisodeBatch& batch, const Table& reward,
                   const ParametricPolicy& policy, const QSource& q_source = {});

enum class AlphaSchedule { constant, robbins_monro };
enum class BetaSchedule { constant, robbins_monro, averaging };

struct SaddleConfig {
  long iterations = 10000;
  double alpha = 0.01;
  double beta = 0.1;
  AlphaSchedule alpha_schedule = AlphaSchedule::constant;
  BetaSchedule beta_schedule = BetaSchedule::constant;
  QSource q_source{};
  std::uint64_t seed = 0;
};

/// Primal-dual iterate of the sample-average saddle problem.
struct SaddleState {
  Table z;
  Table x;
  long t = 0;
  double alpha = 0.0;
  double beta = 0.0;
};

using SaddleObserver = std::function<void(const SaddleState&)>;

/// Monte Carlo primal-dual estimate of ∇_θ F(λ(θ)).
///
/// Each iteration draws an episode uniformly and a time index k ∈ [0, K]
/// with probability ∝ γ^k, then
///   z ← clip_{ℓ_F}(z - α/(1-γ) 1_{s_k a_k} + α ∇F*(z))
///   x ← x + β (Σ_a Q(s_k, a; z) ∇_θ π_θ(a|s_k) / (1-γ) - x).
/// z starts at ∇F of the batch's empirical occupancy and x at 0. Linear
/// utilities pin z to the reward. `observer`, when set, sees the state after
/// initialization and after every iteration.
Table variational_pg(const Mdp& mdp, const EpisodeBatch& batch, const Utility& utility,
                     const ParametricPolicy& policy, const SaddleConfig& config,
                     const SaddleObserver& observer = {});

/// Exact ∇_θ F(λ(θ)) = ∇_θ V(θ; ∇F(λ(θ))).
Table chain_rule_oracle(const Mdp& mdp, const ParametricPolicy& policy, const Utility& utility);

/// ∇V(θ;r) - β ∇V(θ;c) / (C - V(θ;c)) from exact solves.
Table composite_pg(const Mdp& mdp, const ParametricPolicy& policy,
                   const LogBarrierUtility& utility);
/// Same formula with every term estimated from the batch.
Table composite_pg(const Mdp& mdp, const EpisodeBatch& batch, const ParametricPolicy& policy,
                   const LogBarrierUtility& utility, const QSource& q_source = {});

struct MseStudyConfig {
  std::vector<int> episode_counts{100, 1000, 10000};
  int repeats = 10;
  int horizon = 0;
  /// Saddle iterations per episode in the batch (T = n · this).
  double iterations_per_episode = 20.0;
  SaddleConfig saddle{};
  std::uint64_t seed = 0;
  int threads = 1;
};

struct MseRow {
  int episodes;
  double mse;
  double stderr_mse;
};

struct MseStudyResult {
  std::vector<MseRow> rows;
  /// Least-squares slope of log MSE on log n; NaN with fewer than two rows.
  double slope = 0.0;
  double slope_stderr = 0.0;
  bool low_confidence = false;
  bool insufficient_points = false;
};

/// Mean-squared error of variational_pg against chain_rule_oracle per batch size.
MseStudyResult estimator_mse_study(const Mdp& mdp, const ParametricPolicy& policy,
                                   const Utility& utility, const MseStudyConfig& config);

/// Cosine similarity; 0 if either side is the zero vector.
double cosine_similarity(const Table& a, const Table& b);

}  // namespace gupg

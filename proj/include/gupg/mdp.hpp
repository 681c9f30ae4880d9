#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gupg/rng.hpp"

namespace gupg {

/// S×A table indexed (state, action). Occupancies, rewards, dual variables
/// and parameter-shaped gradients all use this layout.
using Table = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a state carries no occupancy mass, so no policy can be read off it.
class UnreachableStateError : public std::runtime_error {
 public:
  UnreachableStateError(int state, const std::string& what)
      : std::runtime_error(what), state_(state) {}
  int state() const { return state_; }

 private:
  int state_;
};

/// Finite discounted MDP. Immutable after construction.
class Mdp {
 public:
  /// `transitions[a](i, j)` is the probability of moving to j from i under a.
  /// Optional reward/cost channels are S×A tables; `terminal` marks absorbing
  /// states at which sampled episodes stop early.
  Mdp(std::vector<Eigen::MatrixXd> transitions, Vector initial, double discount,
      std::optional<Table> reward = std::nullopt, std::optional<Table> cost = std::nullopt,
      std::vector<bool> terminal = {});

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  double discount() const { return discount_; }
  const Eigen::MatrixXd& transition(int action) const { return transitions_.at(action); }
  const Vector& initial() const { return initial_; }
  const std::optional<Table>& reward() const { return reward_; }
  const std::optional<Table>& cost() const { return cost_; }
  bool is_terminal(int state) const { return terminal_[state]; }
  const std::vector<bool>& terminal() const { return terminal_; }

  /// Reward channel, or std::invalid_argument if the MDP has none.
  const Table& reward_table() const;
  const Table& cost_table() const;

  /// P_π(i, j) = Σ_a π(a|i) P_a(i, j). `probs` is not validated.
  Eigen::MatrixXd policy_transition(const Table& probs) const;

  /// Copy with a different initial distribution.
  Mdp with_initial(Vector initial) const;

 private:
  int num_states_;
  int num_actions_;
  std::vector<Eigen::MatrixXd> transitions_;
  Vector initial_;
  double discount_;
  std::optional<Table> reward_;
  std::optional<Table> cost_;
  std::vector<bool> terminal_;
};

/// Stochastic policy π(a|s) stored directly; rows lie on the simplex.
class TabularPolicy {
 public:
  explicit TabularPolicy(Table probs);
  static TabularPolicy uniform(int num_states, int num_actions);

  const Table& probs() const { return probs_; }
  int num_states() const { return static_cast<int>(probs_.rows()); }
  int num_actions() const { return static_cast<int>(probs_.cols()); }
  double operator()(int state, int action) const { return probs_(state, action); }

 private:
  Table probs_;
};

/// Softmax policy π_θ(a|s) = exp(θ_sa) / Σ_a' exp(θ_sa').
class SoftmaxPolicy {
 public:
  explicit SoftmaxPolicy(Table theta);

  const Table& theta() const { return theta_; }
  const Table& probs() const { return probs_; }
  int num_states() const { return static_cast<int>(theta_.rows()); }
  int num_actions() const { return static_cast<int>(theta_.cols()); }
  TabularPolicy tabular() const { return TabularPolicy(probs_); }

 private:
  Table theta_;
  Table probs_;
};

/// Either parameterization. The parameter table has the same S×A shape in both cases.
using ParametricPolicy = std::variant<TabularPolicy, SoftmaxPolicy>;

const Table& policy_probs(const ParametricPolicy& policy);
const Table& policy_parameters(const ParametricPolicy& policy);

/// Row `state` of Σ_a q_a ∇_θ π_θ(a|state). The derivative of π(·|s) only
/// touches parameter row s, so this A-vector is the whole contribution.
Vector policy_derivative_row(const ParametricPolicy& policy, int state,
                             const Eigen::Ref<const Vector>& q_row);

/// Discounted state-action occupancy measure λ (total mass 1/(1-γ)).
class OccupancyMeasure {
 public:
  explicit OccupancyMeasure(Table lambda);

  const Table& lambda() const { return lambda_; }
  /// μ̃_s = Σ_a λ_sa.
  Vector state_occupancy() const { return lambda_.rowwise().sum(); }
  /// d_s = (1-γ) μ̃_s.
  Vector visitation(double discount) const { return (1.0 - discount) * state_occupancy(); }
  double mass() const { return lambda_.sum(); }

 private:
  Table lambda_;
};

/// L1 residual of the flow constraints Σ_a (I - γ P_aᵀ) λ_a = ξ.
double flow_residual(const Mdp& mdp, const Table& lambda);

struct Step {
  int state;
  int action;
  int time;
};

/// One truncated episode. When `absorbed` is set the last step is the first
/// visit to a terminal state; the process stays there for the remaining
/// time indices up to `horizon`.
struct Trajectory {
  std::vector<Step> steps;
  int horizon = 0;
  bool absorbed = false;
};

/// Exact evaluation of one fixed policy. Factors I - γP_π once and reuses it
/// for any number of occupancy/value/Q queries.
class PolicyEvaluator {
 public:
  PolicyEvaluator(const Mdp& mdp, Table probs);

  const Mdp& mdp() const { return *mdp_; }
  const Table& probs() const { return probs_; }

  /// μ̃ solving (I - γ P_πᵀ) μ̃ = ξ.
  const Vector& state_occupancy() const { return state_occupancy_; }
  Table occupancy() const;
  /// V solving (I - γ P_π) V = z_π.
  Vector state_values(const Table& z) const;
  /// Q = z + γ P_a V.
  Table q_values(const Table& z) const;
  double value(const Table& z) const { return (occupancy().array() * z.array()).sum(); }

 private:
  const Mdp* mdp_;
  Table probs_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Vector state_occupancy_;
};

OccupancyMeasure occupancy_exact(const Mdp& mdp, const TabularPolicy& policy);
/// π(a|s) = λ_sa / Σ_a' λ_sa'. Throws UnreachableStateError when a row carries no mass.
TabularPolicy extract_policy(const OccupancyMeasure& lambda);
double value_exact(const Mdp& mdp, const TabularPolicy& policy, const Table& z);
Table q_values_exact(const Mdp& mdp, const TabularPolicy& policy, const Table& z);

/// Σ_s μ̃_s Σ_a Q(s,a;z) ∇_θ π_θ(a|s), the gradient of V(θ; z).
Table exact_policy_gradient(const Mdp& mdp, const ParametricPolicy& policy, const Table& z);

/// K = ceil(log(1e-6 (1-γ)) / log γ), so γ^K / (1-γ) < 1e-6.
int default_horizon(double discount);

/// s_0 ~ ξ, a_k ~ π(·|s_k), s_{k+1} ~ P_{a_k}(s_k, ·) for k = 0..K. Stops early
/// on entering a terminal state when `stop_at_terminal` is set.
Trajectory sample_episode(const Mdp& mdp, const TabularPolicy& policy, int horizon, Rng& rng,
                          bool stop_at_terminal = true);

/// A×(S·A) Jacobian ∂π(a|s)/∂θ_{s'a'}; columns are flattened row-major (s'·A + a').
Eigen::MatrixXd softmax_jacobian(const SoftmaxPolicy& policy, int state);

/// Euclidean projection onto the probability simplex (sorted-threshold method).
Vector simplex_project(const Eigen::Ref<const Vector>& v);

namespace detail {

/// Occupancy for an arbitrary probability table, no validation. Used by
/// finite-difference checks that step off the simplex.
Table occupancy_from_probs(const Mdp& mdp, const Table& probs);
Table softmax_rows(const Table& theta);
void check_table_shape(const Mdp& mdp, const Table& t, const char* what);

}  // namespace detail

}  // namespace gupg

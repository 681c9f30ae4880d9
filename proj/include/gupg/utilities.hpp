#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "gupg/mdp.hpp"

namespace gupg {

/// Lower clamp applied to visitation probabilities inside logarithms.
inline constexpr double kLogClamp = 1e-12;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Concave utility F of the occupancy measure, maximized over policies.
///
/// `grad` returns an element of the superdifferential (the gradient where F
/// is differentiable). Utilities with a closed-form Fenchel dual
/// F*(z) = inf_λ ⟨λ,z⟩ - F(λ) report `has_dual()` and can drive the
/// variational saddle-point estimator; the others are "dual-free".
class Utility {
 public:
  virtual ~Utility() = default;

  virtual std::string name() const = 0;
  virtual double value(const Table& lambda) const = 0;
  virtual Table grad(const Table& lambda) const = 0;

  virtual bool has_dual() const { return false; }
  /// F*(z); kNegInf outside the dual domain.
  virtual double dual(const Table& z) const;
  virtual Table dual_grad(const Table& z) const;
  /// Maps z back into the affine dual domain (identity for most utilities).
  virtual void project_dual(Table& /*z*/) const {}

  /// For linear utilities the saddle point pins z to the reward table.
  virtual std::optional<Table> pinned_dual() const { return std::nullopt; }

  /// Bound on ‖∇F(λ)‖∞ over ‖λ‖₁ ≤ 2/(1-γ).
  virtual double ell_f() const = 0;
  /// Strong-concavity modulus; 0 for merely concave utilities.
  virtual double strong_concavity() const { return 0.0; }
};

using UtilityPtr = std::shared_ptr<const Utility>;

/// F(λ) = ⟨r, λ⟩.
class LinearUtility final : public Utility {
 public:
  explicit LinearUtility(Table reward);
  std::string name() const override { return "linear"; }
  double value(const Table& lambda) const override;
  Table grad(const Table& lambda) const override;
  bool has_dual() const override { return true; }
  /// 0 when z is a nonnegative multiple of r, kNegInf otherwise.
  double dual(const Table& z) const override;
  std::optional<Table> pinned_dual() const override { return reward_; }
  double ell_f() const override;
  const Table& reward() const { return reward_; }

 private:
  Table reward_;
};

/// Entropy of the state visitation d_s = (1-γ) Σ_a λ_sa.
///
/// The dual is F*(z) = -Σ_sa exp(-z_sa/(1-γ) - 1). That is the exact conjugate
/// of the state-action entropy -Σ_sa (1-γ)λ_sa log((1-γ)λ_sa); the two
/// gradients agree whenever each π(·|s) is uniform.
class EntropyUtility final : public Utility {
 public:
  explicit EntropyUtility(double discount, double strong_concavity = 0.0);
  std::string name() const override { return "entropy"; }
  double value(const Table& lambda) const override;
  Table grad(const Table& lambda) const override;
  bool has_dual() const override { return true; }
  double dual(const Table& z) const override;
  Table dual_grad(const Table& z) const override;
  double ell_f() const override;
  double strong_concavity() const override { return strong_concavity_; }

 private:
  double discount_;
  double strong_concavity_;
};

/// F(λ) = -KL(d ‖ μ̄) with d the state visitation. Maximized at d = μ̄.
///
/// The dual is finite only for z constant across actions within each state.
/// `dual_grad` is the Euclidean gradient of F* restricted to that subspace
/// (each action gets 1/A of the per-state derivative) and `project_dual`
/// replaces every row by its mean.
class KlUtility final : public Utility {
 public:
  KlUtility(Vector prior, double discount, std::optional<double> strong_concavity = std::nullopt);
  std::string name() const override { return "kl"; }
  double value(const Table& lambda) const override;
  Table grad(const Table& lambda) const override;
  bool has_dual() const override { return true; }
  double dual(const Table& z) const override;
  Table dual_grad(const Table& z) const override;
  void project_dual(Table& z) const override;
  double ell_f() const override;
  double strong_concavity() const override { return strong_concavity_; }
  const Vector& prior() const { return prior_; }

 private:
  Vector prior_;
  double discount_;
  double strong_concavity_;
};

/// Smallest eigenvalue of Σ_sa λ_sa φ(s,a) φ(s,a)ᵀ. Dual-free.
class MinEigenvalueUtility final : public Utility {
 public:
  /// `features` has one row per (s, a) pair, flattened as s·A + a.
  MinEigenvalueUtility(Eigen::MatrixXd features, int num_states, int num_actions);
  std::string name() const override { return "min_eigenvalue"; }
  double value(const Table& lambda) const override;
  /// Average of |φ(s,a)ᵀ v_i|² over an orthonormal basis v_i of the minimal
  /// eigenspace (eigenvalues within 1e-9 of the minimum).
  Table grad(const Table& lambda) const override;
  double ell_f() const override;
  const Eigen::MatrixXd& features() const { return features_; }

 private:
  Eigen::MatrixXd covariance(const Table& lambda) const;
  Eigen::MatrixXd features_;
  int num_states_;
  int num_actions_;
};

/// Log-barrier CMDP objective ⟨r,λ⟩ + β log(C - ⟨c,λ⟩). Dual-free; the
/// gradient estimator combines two linear policy gradients.
class LogBarrierUtility final : public Utility {
 public:
  LogBarrierUtility(Table reward, Table cost, double budget, double beta);
  std::string name() const override { return "log_barrier"; }
  /// kNegInf once ⟨c,λ⟩ ≥ C.
  double value(const Table& lambda) const override;
  /// Throws BarrierViolation outside the barrier interior.
  Table grad(const Table& lambda) const override;
  double ell_f() const override;

  const Table& reward() const { return reward_; }
  const Table& cost() const { return cost_; }
  double budget() const { return budget_; }
  double beta() const { return beta_; }
  bool interior(double cost_value) const { return cost_value < budget_; }

 private:
  Table reward_;
  Table cost_;
  double budget_;
  double beta_;
};

class BarrierViolation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

UtilityPtr linear_utility(Table reward);
UtilityPtr entropy_utility(double discount);
UtilityPtr kl_utility(Vector prior, double discount);
UtilityPtr min_eigenvalue_utility(Eigen::MatrixXd features, int num_states, int num_actions);
UtilityPtr log_barrier_cmdp_utility(Table reward, Table cost, double budget, double beta);

/// |F(λ) - inf_z {⟨λ,z⟩ - F*(z)}| with the infimum approximated by multi-start
/// gradient descent from z₀ = ∇F(λ) and perturbed copies of it.
/// Rejects dual-free utilities.
double dual_gap_check(const Utility& utility, const Table& lambda, int starts = 4,
                      std::uint64_t seed = 0);

}  // namespace gupg

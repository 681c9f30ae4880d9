#include "gupg/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gupg {

namespace {

constexpr double kStochasticTol = 1e-12;

void check_distribution_rows(const Eigen::MatrixXd& m, const std::string& what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0.0).any() || !m.row(i).allFinite()) {
      throw std::invalid_argument(what + ": negative or non-finite entry in row " +
                                  std::to_string(i));
    }
    if (std::abs(m.row(i).sum() - 1.0) > kStochasticTol) {
      std::ostringstream os;
      os << what << ": row " << i << " sums to " << m.row(i).sum();
      throw std::invalid_argument(os.str());
    }
  }
}

}  // namespace

namespace detail {

void check_table_shape(const Mdp& mdp, const Table& t, const char* what) {
  if (t.rows() != mdp.num_states() || t.cols() != mdp.num_actions()) {
    std::ostringstream os;
    os << what << ": expected " << mdp.num_states() << "x" << mdp.num_actions() << " table, got "
       << t.rows() << "x" << t.cols();
    throw std::invalid_argument(os.str());
  }
}

Table softmax_rows(const Table& theta) {
  Table p(theta.rows(), theta.cols());
  for (Eigen::Index s = 0; s < theta.rows(); ++s) {
    const double m = theta.row(s).maxCoeff();
    p.row(s) = (theta.row(s).array() - m).exp();
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

Table occupancy_from_probs(const Mdp& mdp, const Table& probs) {
  const int n = mdp.num_states();
  const Eigen::MatrixXd system =
      Eigen::MatrixXd::Identity(n, n) - mdp.discount() * mdp.policy_transition(probs).transpose();
  const Vector mu = system.partialPivLu().solve(mdp.initial());
  return probs.array().colwise() * mu.array();
}

}  // namespace detail

Mdp::Mdp(std::vector<Eigen::MatrixXd> transitions, Vector initial, double discount,
         std::optional<Table> reward, std::optional<Table> cost, std::vector<bool> terminal)
    : transitions_(std::move(transitions)),
      initial_(std::move(initial)),
      discount_(discount),
      reward_(std::move(reward)),
      cost_(std::move(cost)),
      terminal_(std::move(terminal)) {
  if (transitions_.empty()) throw std::invalid_argument("Mdp: at least one action required");
  num_actions_ = static_cast<int>(transitions_.size());
  num_states_ = static_cast<int>(transitions_.front().rows());
  if (num_states_ < 1) throw std::invalid_argument("Mdp: at least one state required");
  for (int a = 0; a < num_actions_; ++a) {
    const auto& p = transitions_[a];
    if (p.rows() != num_states_ || p.cols() != num_states_) {
      throw std::invalid_argument("Mdp: transition matrix " + std::to_string(a) +
                                  " is not S x S");
    }
    check_distribution_rows(p, "Mdp: transition matrix " + std::to_string(a));
  }
  if (initial_.size() != num_states_) {
    throw std::invalid_argument("Mdp: initial distribution has wrong length");
  }
  check_distribution_rows(initial_.transpose(), "Mdp: initial distribution");
  if (!(discount_ > 0.0 && discount_ < 1.0)) {
    throw std::invalid_argument("Mdp: discount must lie in (0, 1)");
  }
  if (reward_) detail::check_table_shape(*this, *reward_, "Mdp: reward");
  if (cost_) detail::check_table_shape(*this, *cost_, "Mdp: cost");
  if (terminal_.empty()) terminal_.assign(num_states_, false);
  if (static_cast<int>(terminal_.size()) != num_states_) {
    throw std::invalid_argument("Mdp: terminal flags have wrong length");
  }
  for (int s = 0; s < num_states_; ++s) {
    if (!terminal_[s]) continue;
    for (int a = 0; a < num_actions_; ++a) {
      if (transitions_[a](s, s) != 1.0) {
        throw std::invalid_argument("Mdp: terminal state " + std::to_string(s) +
                                    " is not absorbing");
      }
    }
  }
}

const Table& Mdp::reward_table() const {
  if (!reward_) throw std::invalid_argument("Mdp has no reward channel");
  return *reward_;
}

const Table& Mdp::cost_table() const {
  if (!cost_) throw std::invalid_argument("Mdp has no cost channel");
  return *cost_;
}

Eigen::MatrixXd Mdp::policy_transition(const Table& probs) const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(num_states_, num_states_);
  for (int a = 0; a < num_actions_; ++a) {
    p += probs.col(a).asDiagonal() * transitions_[a];
  }
  return p;
}

Mdp Mdp::with_initial(Vector initial) const {
  return Mdp(transitions_, std::move(initial), discount_, reward_, cost_, terminal_);
}

TabularPolicy::TabularPolicy(Table probs) : probs_(std::move(probs)) {
  if (probs_.rows() < 1 || probs_.cols() < 1) {
    throw std::invalid_argument("TabularPolicy: empty table");
  }
  check_distribution_rows(probs_, "TabularPolicy");
}

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
  return TabularPolicy(Table::Constant(num_states, num_actions, 1.0 / num_actions));
}

SoftmaxPolicy::SoftmaxPolicy(Table theta) : theta_(std::move(theta)) {
  if (!theta_.allFinite()) throw std::invalid_argument("SoftmaxPolicy: non-finite parameter");
  probs_ = detail::softmax_rows(theta_);
}

const Table& policy_probs(const ParametricPolicy& policy) {
  return std::visit([](const auto& p) -> const Table& { return p.probs(); }, policy);
}

const Table& policy_parameters(const ParametricPolicy& policy) {
  if (const auto* soft = std::get_if<SoftmaxPolicy>(&policy)) return soft->theta();
  return std::get<TabularPolicy>(policy).probs();
}

Vector policy_derivative_row(const ParametricPolicy& policy, int state,
                             const Eigen::Ref<const Vector>& q_row) {
  if (std::holds_alternative<TabularPolicy>(policy)) return q_row;
  // ∂π(a|s)/∂θ_sb = π(a|s)(1{a=b} - π(b|s))  =>  Σ_a q_a ∂π(a|s)/∂θ_sb = π(b|s)(q_b - π·q).
  const Vector pi = std::get<SoftmaxPolicy>(policy).probs().row(state).transpose();
  return pi.array() * (q_row.array() - pi.dot(q_row));
}

OccupancyMeasure::OccupancyMeasure(Table lambda) : lambda_(std::move(lambda)) {
  if (!lambda_.allFinite() || (lambda_.array() < 0.0).any()) {
    throw std::invalid_argument("OccupancyMeasure: entries must be finite and nonnegative");
  }
}

double flow_residual(const Mdp& mdp, const Table& lambda) {
  const Vector mu = lambda.rowwise().sum();
  Vector inflow = Vector::Zero(mdp.num_states());
  for (int a = 0; a < mdp.num_actions(); ++a) {
    inflow += mdp.transition(a).transpose() * lambda.col(a);
  }
  return (mu - mdp.discount() * inflow - mdp.initial()).lpNorm<1>();
}

PolicyEvaluator::PolicyEvaluator(const Mdp& mdp, Table probs)
    : mdp_(&mdp), probs_(std::move(probs)) {
  detail::check_table_shape(mdp, probs_, "PolicyEvaluator: policy");
  const int n = mdp.num_states();
  lu_.compute(Eigen::MatrixXd::Identity(n, n) - mdp.discount() * mdp.policy_transition(probs_));
  state_occupancy_ = lu_.transpose().solve(mdp.initial());
  if (!state_occupancy_.allFinite()) {
    throw std::runtime_error("PolicyEvaluator: linear solve failed (malformed transitions?)");
  }
}

Table PolicyEvaluator::occupancy() const {
  Table lambda = probs_.array().colwise() * state_occupancy_.array();
  // Round-off can leave -1e-18 on zero-probability entries.
  return lambda.cwiseMax(0.0);
}

Vector PolicyEvaluator::state_values(const Table& z) const {
  detail::check_table_shape(*mdp_, z, "state_values: z");
  const Vector z_pi = (probs_.array() * z.array()).rowwise().sum();
  return lu_.solve(z_pi);
}

Table PolicyEvaluator::q_values(const Table& z) const {
  const Vector v = state_values(z);
  Table q = z;
  for (int a = 0; a < mdp_->num_actions(); ++a) {
    q.col(a) += mdp_->discount() * (mdp_->transition(a) * v);
  }
  return q;
}

OccupancyMeasure occupancy_exact(const Mdp& mdp, const TabularPolicy& policy) {
  return OccupancyMeasure(PolicyEvaluator(mdp, policy.probs()).occupancy());
}

TabularPolicy extract_policy(const OccupancyMeasure& lambda) {
  const Table& l = lambda.lambda();
  Table probs(l.rows(), l.cols());
  for (Eigen::Index s = 0; s < l.rows(); ++s) {
    const double mass = l.row(s).sum();
    if (!(mass > 0.0)) {
      throw UnreachableStateError(static_cast<int>(s),
                                  "extract_policy: state " + std::to_string(s) +
                                      " has zero occupancy");
    }
    probs.row(s) = l.row(s) / mass;
  }
  return TabularPolicy(std::move(probs));
}

double value_exact(const Mdp& mdp, const TabularPolicy& policy, const Table& z) {
  detail::check_table_shape(mdp, z, "value_exact: z");
  return PolicyEvaluator(mdp, policy.probs()).value(z);
}

Table q_values_exact(const Mdp& mdp, const TabularPolicy& policy, const Table& z) {
  return PolicyEvaluator(mdp, policy.probs()).q_values(z);
}

Table exact_policy_gradient(const Mdp& mdp, const ParametricPolicy& policy, const Table& z) {
  const Table& probs = policy_probs(policy);
  detail::check_table_shape(mdp, z, "exact_policy_gradient: z");
  const PolicyEvaluator eval(mdp, probs);
  const Table q = eval.q_values(z);
  const Vector& mu = eval.state_occupancy();
  Table grad(mdp.num_states(), mdp.num_actions());
  for (int s = 0; s < mdp.num_states(); ++s) {
    grad.row(s) = mu[s] * policy_derivative_row(policy, s, q.row(s).transpose()).transpose();
  }
  return grad;
}

int default_horizon(double discount) {
  return static_cast<int>(std::ceil(std::log(1e-6 * (1.0 - discount)) / std::log(discount)));
}

Trajectory sample_episode(const Mdp& mdp, const TabularPolicy& policy, int horizon, Rng& rng,
                          bool stop_at_terminal) {
  if (horizon < 1) throw std::invalid_argument("sample_episode: horizon must be >= 1");
  detail::check_table_shape(mdp, policy.probs(), "sample_episode: policy");
  Trajectory traj;
  traj.horizon = horizon;
  traj.steps.reserve(static_cast<std::size_t>(horizon) + 1);
  int state = rng.categorical(mdp.initial());
  for (int k = 0; k <= horizon; ++k) {
    const int action = rng.categorical(policy.probs().row(state).transpose());
    traj.steps.push_back({state, action, k});
    if (stop_at_terminal && mdp.is_terminal(state) && k < horizon) {
      traj.absorbed = true;
      break;
    }
    if (k < horizon) state = rng.categorical(mdp.transition(action).row(state).transpose());
  }
  return traj;
}

Eigen::MatrixXd softmax_jacobian(const SoftmaxPolicy& policy, int state) {
  if (state < 0 || state >= policy.num_states()) {
    throw std::out_of_range("softmax_jacobian: state out of range");
  }
  const int na = policy.num_actions();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(na, policy.num_states() * na);
  const Vector pi = policy.probs().row(state).transpose();
  const Eigen::MatrixXd block =
      Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose();
  jac.middleCols(static_cast<Eigen::Index>(state) * na, na) = block;
  return jac;
}

Vector simplex_project(const Eigen::Ref<const Vector>& v) {
  const Eigen::Index n = v.size();
  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cumulative += sorted[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - t > 0.0) threshold = t;
  }
  return (v.array() - threshold).cwiseMax(0.0);
}

}  // namespace gupg

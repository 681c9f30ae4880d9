#include "gupg/utilities.hpp"

#include <cmath>
#include <stdexcept>

namespace gupg {

namespace {

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

Vector visitation_of(const Table& lambda, double discount) {
  return (1.0 - discount) * lambda.rowwise().sum();
}

double inner(const Table& a, const Table& b) { return (a.array() * b.array()).sum(); }

}  // namespace

double Utility::dual(const Table& /*z*/) const {
  throw std::logic_error("utility '" + name() + "' has no closed-form dual");
}

Table Utility::dual_grad(const Table& /*z*/) const {
  throw std::logic_error("utility '" + name() + "' has no closed-form dual gradient");
}

// ---------------------------------------------------------------------------

LinearUtility::LinearUtility(Table reward) : reward_(std::move(reward)) {
  if (!reward_.allFinite()) throw std::invalid_argument("linear utility: non-finite reward");
}

double LinearUtility::value(const Table& lambda) const { return inner(reward_, lambda); }

Table LinearUtility::grad(const Table& /*lambda*/) const { return reward_; }

double LinearUtility::dual(const Table& z) const {
  const double rr = reward_.squaredNorm();
  if (rr == 0.0) return z.cwiseAbs().maxCoeff() <= 1e-9 ? 0.0 : kNegInf;
  const double scale = inner(z, reward_) / rr;
  if (scale < -1e-9) return kNegInf;
  return (z - scale * reward_).cwiseAbs().maxCoeff() <= 1e-9 ? 0.0 : kNegInf;
}

double LinearUtility::ell_f() const { return reward_.cwiseAbs().maxCoeff(); }

// ---------------------------------------------------------------------------

EntropyUtility::EntropyUtility(double discount, double strong_concavity)
    : discount_(discount), strong_concavity_(strong_concavity) {
  if (!(discount > 0.0 && discount < 1.0)) {
    throw std::invalid_argument("entropy utility: discount must lie in (0, 1)");
  }
}

double EntropyUtility::value(const Table& lambda) const {
  double h = 0.0;
  for (double d : visitation_of(lambda, discount_)) h -= xlogx(d);
  return h;
}

Table EntropyUtility::grad(const Table& lambda) const {
  const Vector d = visitation_of(lambda, discount_);
  Table g(lambda.rows(), lambda.cols());
  for (Eigen::Index s = 0; s < lambda.rows(); ++s) {
    g.row(s).setConstant(-(1.0 - discount_) * (std::log(std::max(d[s], kLogClamp)) + 1.0));
  }
  return g;
}

double EntropyUtility::dual(const Table& z) const {
  return -(-z.array() / (1.0 - discount_) - 1.0).exp().sum();
}

Table EntropyUtility::dual_grad(const Table& z) const {
  return (-z.array() / (1.0 - discount_) - 1.0).exp() / (1.0 - discount_);
}

double EntropyUtility::ell_f() const {
  return (1.0 - discount_) * (std::abs(std::log(kLogClamp)) + 1.0);
}

// ---------------------------------------------------------------------------

KlUtility::KlUtility(Vector prior, double discount, std::optional<double> strong_concavity)
    : prior_(std::move(prior)),
      discount_(discount),
      strong_concavity_(strong_concavity.value_or((1.0 - discount) * (1.0 - discount))) {
  if (!(discount > 0.0 && discount < 1.0)) {
    throw std::invalid_argument("kl utility: discount must lie in (0, 1)");
  }
  if (prior_.size() == 0 || !(prior_.array() > 0.0).all()) {
    throw std::invalid_argument("kl utility: prior must be strictly positive");
  }
  if (std::abs(prior_.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("kl utility: prior must sum to 1");
  }
}

double KlUtility::value(const Table& lambda) const {
  const Vector d = visitation_of(lambda, discount_);
  double kl = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s) {
    if (d[s] > 0.0) kl += d[s] * std::log(d[s] / prior_[s]);
  }
  return -kl;
}

Table KlUtility::grad(const Table& lambda) const {
  const Vector d = visitation_of(lambda, discount_);
  Table g(lambda.rows(), lambda.cols());
  for (Eigen::Index s = 0; s < lambda.rows(); ++s) {
    const double v = std::log(std::max(d[s], kLogClamp) / prior_[s]) + 1.0;
    g.row(s).setConstant(-(1.0 - discount_) * v);
  }
  return g;
}

double KlUtility::dual(const Table& z) const {
  double total = 0.0;
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    if (z.row(s).maxCoeff() - z.row(s).minCoeff() > 1e-9) return kNegInf;
    total -= prior_[s] * std::exp(-z(s, 0) / (1.0 - discount_) - 1.0);
  }
  return total;
}

Table KlUtility::dual_grad(const Table& z) const {
  Table g(z.rows(), z.cols());
  const double na = static_cast<double>(z.cols());
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const double zs = z.row(s).mean();
    g.row(s).setConstant(prior_[s] * std::exp(-zs / (1.0 - discount_) - 1.0) /
                         ((1.0 - discount_) * na));
  }
  return g;
}

void KlUtility::project_dual(Table& z) const {
  for (Eigen::Index s = 0; s < z.rows(); ++s) z.row(s).setConstant(z.row(s).mean());
}

double KlUtility::ell_f() const {
  return (1.0 - discount_) *
         (std::abs(std::log(kLogClamp)) + std::abs(std::log(prior_.minCoeff())) + 1.0);
}

// ---------------------------------------------------------------------------

MinEigenvalueUtility::MinEigenvalueUtility(Eigen::MatrixXd features, int num_states,
                                           int num_actions)
    : features_(std::move(features)), num_states_(num_states), num_actions_(num_actions) {
  if (features_.rows() != static_cast<Eigen::Index>(num_states) * num_actions ||
      features_.cols() < 1) {
    throw std::invalid_argument("min-eigenvalue utility: features must be (S*A) x dim, dim >= 1");
  }
  if (!features_.allFinite()) {
    throw std::invalid_argument("min-eigenvalue utility: non-finite features");
  }
}

Eigen::MatrixXd MinEigenvalueUtility::covariance(const Table& lambda) const {
  Vector weights(features_.rows());
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) weights[s * num_actions_ + a] = lambda(s, a);
  }
  return features_.transpose() * weights.asDiagonal() * features_;
}

double MinEigenvalueUtility::value(const Table& lambda) const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance(lambda),
                                                     Eigen::EigenvaluesOnly);
  return eig.eigenvalues()[0];
}

Table MinEigenvalueUtility::grad(const Table& lambda) const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance(lambda));
  const Vector& values = eig.eigenvalues();
  int k = 1;
  while (k < values.size() && values[k] - values[0] <= 1e-9) ++k;
  const Eigen::MatrixXd basis = eig.eigenvectors().leftCols(k);
  const Vector projections = (features_ * basis).array().square().rowwise().sum() / k;
  Table g(num_states_, num_actions_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) g(s, a) = projections[s * num_actions_ + a];
  }
  return g;
}

double MinEigenvalueUtility::ell_f() const { return features_.rowwise().squaredNorm().maxCoeff(); }

// ---------------------------------------------------------------------------

LogBarrierUtility::LogBarrierUtility(Table reward, Table cost, double budget, double beta)
    : reward_(std::move(reward)), cost_(std::move(cost)), budget_(budget), beta_(beta) {
  if (reward_.rows() != cost_.rows() || reward_.cols() != cost_.cols()) {
    throw std::invalid_argument("log-barrier utility: reward and cost shapes differ");
  }
  if (!(beta_ >= 0.0) || !std::isfinite(budget_)) {
    throw std::invalid_argument("log-barrier utility: need beta >= 0 and a finite budget");
  }
}

double LogBarrierUtility::value(const Table& lambda) const {
  const double spent = inner(cost_, lambda);
  if (!interior(spent)) return beta_ == 0.0 ? inner(reward_, lambda) : kNegInf;
  const double barrier = beta_ == 0.0 ? 0.0 : beta_ * std::log(budget_ - spent);
  return inner(reward_, lambda) + barrier;
}

Table LogBarrierUtility::grad(const Table& lambda) const {
  if (beta_ == 0.0) return reward_;
  const double spent = inner(cost_, lambda);
  if (!interior(spent)) {
    throw BarrierViolation("log-barrier utility: cost " + std::to_string(spent) +
                           " reached budget " + std::to_string(budget_));
  }
  return reward_ - beta_ * cost_ / (budget_ - spent);
}

double LogBarrierUtility::ell_f() const { return std::numeric_limits<double>::infinity(); }

// ---------------------------------------------------------------------------

UtilityPtr linear_utility(Table reward) { return std::make_shared<LinearUtility>(std::move(reward)); }

UtilityPtr entropy_utility(double discount) { return std::make_shared<EntropyUtility>(discount); }

UtilityPtr kl_utility(Vector prior, double discount) {
  return std::make_shared<KlUtility>(std::move(prior), discount);
}

UtilityPtr min_eigenvalue_utility(Eigen::MatrixXd features, int num_states, int num_actions) {
  return std::make_shared<MinEigenvalueUtility>(std::move(features), num_states, num_actions);
}

UtilityPtr log_barrier_cmdp_utility(Table reward, Table cost, double budget, double beta) {
  return std::make_shared<LogBarrierUtility>(std::move(reward), std::move(cost), budget, beta);
}

// ---------------------------------------------------------------------------

double dual_gap_check(const Utility& utility, const Table& lambda, int starts,
                      std::uint64_t seed) {
  if (!utility.has_dual()) {
    throw std::invalid_argument("dual_gap_check: utility '" + utility.name() +
                                "' is dual-free");
  }
  const double primal = utility.value(lambda);
  if (auto pinned = utility.pinned_dual()) {
    return std::abs(primal - (inner(lambda, *pinned) - utility.dual(*pinned)));
  }

  // h(z) = ⟨λ,z⟩ - F*(z) is convex; minimize it with Barzilai-Borwein steps
  // guarded by Armijo backtracking.
  auto objective = [&](const Table& z) { return inner(lambda, z) - utility.dual(z); };
  auto gradient = [&](const Table& z) {
    Table g = lambda - utility.dual_grad(z);
    utility.project_dual(g);
    return g;
  };

  Rng rng(seed);
  double best = std::numeric_limits<double>::infinity();
  for (int start = 0; start < std::max(starts, 1); ++start) {
    Table z = utility.grad(lambda);
    if (start > 0) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] += 0.5 * rng.normal();
    }
    utility.project_dual(z);
    double fz = objective(z);
    Table g = gradient(z);
    double step = 1e-2;
    for (int it = 0; it < 20000 && g.norm() > 1e-12; ++it) {
      Table candidate = z - step * g;
      utility.project_dual(candidate);
      double fc = objective(candidate);
      while (!(fc <= fz - 1e-4 * step * g.squaredNorm()) && step > 1e-16) {
        step *= 0.5;
        candidate = z - step * g;
        utility.project_dual(candidate);
        fc = objective(candidate);
      }
      if (!(fc <= fz)) break;
      const Table g_next = gradient(candidate);
      const Table dz = candidate - z;
      const Table dg = g_next - g;
      const double curvature = inner(dz, dg);
      step = curvature > 0.0 ? dz.squaredNorm() / curvature : step * 2.0;
      z = candidate;
      fz = fc;
      g = g_next;
    }
    best = std::min(best, fz);
  }
  return std::abs(primal - best);
}

}  // namespace gupg

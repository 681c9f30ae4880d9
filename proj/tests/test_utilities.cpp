#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gupg/environments.hpp"
#include "gupg/mdp.hpp"
#include "gupg/utilities.hpp"
#include "oracles.hpp"

using namespace gupg;

namespace {

constexpr double kGamma = 0.9;

/// Random feasible occupancies of a fixed random MDP.
std::vector<Table> polytope_points(const Mdp& mdp, int count, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<Table> out;
  for (int i = 0; i < count; ++i) {
    Table probs = oracle::random_probs(gen, mdp.num_states(), mdp.num_actions());
    out.push_back(occupancy_exact(mdp, TabularPolicy(probs)).lambda());
  }
  return out;
}

Vector visitation(const Table& lambda) {
  return (1.0 - kGamma) * lambda.rowwise().sum();
}

Eigen::MatrixXd random_features(int rows, int dim, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return oracle::random_table(gen, rows, dim);
}

struct Family {
  std::string label;
  UtilityPtr utility;
};

std::vector<Family> all_families(const Mdp& mdp) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  Vector prior = Vector::LinSpaced(S, 1.0, 2.0);
  prior /= prior.sum();
  // Budget far above any reachable cost keeps the barrier interior everywhere.
  return {
      {"linear", linear_utility(mdp.reward_table())},
      {"entropy", entropy_utility(kGamma)},
      {"kl", kl_utility(prior, kGamma)},
      {"min_eigenvalue", min_eigenvalue_utility(random_features(S * A, 3, 5), S, A)},
      {"log_barrier",
       log_barrier_cmdp_utility(mdp.reward_table(), mdp.cost_table(), 20.0, 1.5)},
  };
}

}  // namespace

TEST(LinearUtility, ValueGradAndDual) {
  Mdp mdp = random_mdp(4, 2, kGamma, 1);
  auto u = linear_utility(Table::Ones(4, 2));
  auto lambda = occupancy_exact(mdp, TabularPolicy::uniform(4, 2)).lambda();
  EXPECT_NEAR(u->value(lambda), 1.0 / (1.0 - kGamma), 1e-9);
  Table r = mdp.reward_table();
  auto ur = linear_utility(r);
  for (const auto& l : polytope_points(mdp, 5, 2)) EXPECT_EQ(ur->grad(l), r);
  EXPECT_DOUBLE_EQ(ur->dual(3.0 * r), 0.0);
  EXPECT_DOUBLE_EQ(ur->dual(Table::Zero(4, 2)), 0.0);
  EXPECT_EQ(ur->dual(-r), kNegInf);
  Table off = r;
  off(0, 0) += 0.1;
  EXPECT_EQ(ur->dual(off), kNegInf);
  ASSERT_TRUE(ur->pinned_dual().has_value());
  EXPECT_EQ(*ur->pinned_dual(), r);
  EXPECT_DOUBLE_EQ(ur->ell_f(), r.cwiseAbs().maxCoeff());
  EXPECT_DOUBLE_EQ(ur->strong_concavity(), 0.0);
}

TEST(EntropyUtility, UniformVisitationGivesLogS) {
  const int S = 5;
  Table lambda = Table::Constant(S, 2, 1.0 / ((1.0 - kGamma) * S * 2));
  EntropyUtility u(kGamma);
  EXPECT_NEAR(u.value(lambda), std::log(S), 1e-12);
}

TEST(EntropyUtility, PointMassGivesZero) {
  Table lambda = Table::Zero(4, 3);
  lambda(2, 1) = 1.0 / (1.0 - kGamma);
  EntropyUtility u(kGamma);
  EXPECT_NEAR(u.value(lambda), 0.0, 1e-12);
  Table g = u.grad(lambda);
  // Clamped log at the empty states keeps the gradient finite.
  EXPECT_TRUE(g.allFinite());
  EXPECT_LE(g.cwiseAbs().maxCoeff(), u.ell_f() + 1e-12);
  EXPECT_NEAR(u.ell_f(), (1 - kGamma) * (-std::log(1e-12) + 1.0), 1e-12);
}

TEST(EntropyUtility, DualGradMatchesFiniteDifferences) {
  EntropyUtility u(kGamma);
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 10; ++trial) {
    Table z = oracle::random_table(gen, 4, 3, 0.3);
    auto f = [&](const Table& t) { return u.dual(t); };
    Table fd = oracle::finite_difference(f, z, 1e-6);
    EXPECT_LT(oracle::relative_error(u.dual_grad(z), fd), 1e-5);
  }
}

TEST(KlUtility, MatchingPriorIsTheMaximum) {
  Mdp mdp = random_mdp(5, 3, kGamma, 7);
  auto lambda = occupancy_exact(mdp, TabularPolicy::uniform(5, 3)).lambda();
  Vector prior = visitation(lambda);
  KlUtility u(prior, kGamma);
  EXPECT_NEAR(u.value(lambda), 0.0, 1e-12);
  for (const auto& other : polytope_points(mdp, 20, 8)) EXPECT_LE(u.value(other), 1e-12);
}

TEST(KlUtility, PointMassAgainstUniformPrior) {
  const int S = 6;
  Table lambda = Table::Zero(S, 2);
  lambda(3, 0) = 1.0 / (1.0 - kGamma);
  KlUtility u(Vector::Constant(S, 1.0 / S), kGamma);
  EXPECT_NEAR(u.value(lambda), -std::log(S), 1e-12);
}

TEST(KlUtility, RejectsInvalidPrior) {
  Vector zero(3);
  zero << 0.5, 0.5, 0.0;
  EXPECT_THROW(KlUtility(zero, kGamma), std::invalid_argument);
  Vector unnormalized = Vector::Ones(3);
  EXPECT_THROW(KlUtility(unnormalized, kGamma), std::invalid_argument);
}

TEST(KlUtility, DualFiniteOnlyOnStateConstantTables) {
  KlUtility u(Vector::Constant(3, 1.0 / 3), kGamma);
  Table z = Table::Zero(3, 2);
  z.row(1).setConstant(0.4);
  EXPECT_TRUE(std::isfinite(u.dual(z)));
  z(2, 1) = 0.1;
  EXPECT_EQ(u.dual(z), kNegInf);
  u.project_dual(z);
  EXPECT_NEAR(z(2, 0), 0.05, 1e-15);
  EXPECT_NEAR(z(2, 1), 0.05, 1e-15);
}

TEST(KlUtility, DualGradMatchesDirectionalDifferences) {
  Vector prior(4);
  prior << 0.1, 0.2, 0.3, 0.4;
  KlUtility u(prior, kGamma);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    Table z(4, 3), dir(4, 3);
    for (int s = 0; s < 4; ++s) {
      z.row(s).setConstant(n(gen));
      dir.row(s).setConstant(n(gen));
    }
    const double h = 1e-6;
    double fd = (u.dual(z + h * dir) - u.dual(z - h * dir)) / (2 * h);
    double analytic = (u.dual_grad(z).array() * dir.array()).sum();
    EXPECT_LT(std::abs(fd - analytic), 1e-5 * std::max(std::abs(analytic), 1e-8));
  }
}

TEST(MinEigenvalueUtility, OneDimensionalFeatures) {
  Eigen::MatrixXd phi(4, 1);
  phi << 1, 2, -1, 0.5;
  MinEigenvalueUtility u(phi, 2, 2);
  Table lambda(2, 2);
  lambda << 0.3, 0.2, 1.5, 0.7;
  EXPECT_NEAR(u.value(lambda), 0.3 * 1 + 0.2 * 4 + 1.5 * 1 + 0.7 * 0.25, 1e-12);
}

TEST(MinEigenvalueUtility, StandardBasisGivesSmallestEntry) {
  MinEigenvalueUtility u(Eigen::MatrixXd::Identity(6, 6), 3, 2);
  Table lambda(3, 2);
  lambda << 0.9, 0.4, 2.0, 0.25, 1.1, 0.6;
  EXPECT_NEAR(u.value(lambda), 0.25, 1e-12);
  Table g = u.grad(lambda);
  Table expected = Table::Zero(3, 2);
  expected(1, 1) = 1.0;
  EXPECT_LT((g - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MinEigenvalueUtility, RepeatedEigenvalueAveragesTheEigenspace) {
  MinEigenvalueUtility u(Eigen::MatrixXd::Identity(4, 4), 2, 2);
  Table lambda(2, 2);
  lambda << 0.5, 0.5, 1.0, 2.0;
  Table g = u.grad(lambda);
  EXPECT_NEAR(g(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(g(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(g(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(g(1, 1), 0.0, 1e-12);
}

TEST(MinEigenvalueUtility, RejectsNonFiniteFeatures) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(4, 2);
  phi(1, 1) = std::nan("");
  EXPECT_THROW(MinEigenvalueUtility(phi, 2, 2), std::invalid_argument);
  EXPECT_THROW(MinEigenvalueUtility(Eigen::MatrixXd::Ones(3, 2), 2, 2), std::invalid_argument);
}

TEST(LogBarrierUtility, ZeroPenaltyIsLinear) {
  Mdp mdp = random_mdp(4, 3, kGamma, 11);
  LogBarrierUtility barrier(mdp.reward_table(), mdp.cost_table(), 1.0, 0.0);
  LinearUtility linear(mdp.reward_table());
  for (const auto& l : polytope_points(mdp, 10, 12)) {
    EXPECT_DOUBLE_EQ(barrier.value(l), linear.value(l));
    EXPECT_EQ(barrier.grad(l), linear.grad(l));
  }
}

TEST(LogBarrierUtility, ViolationGivesSentinelAndRaises) {
  Table r = Table::Ones(2, 2), c = Table::Ones(2, 2);
  LogBarrierUtility u(r, c, 5.0, 1.0);
  Table lambda = Table::Constant(2, 2, 2.5);  // ⟨c,λ⟩ = 10 ≥ 5
  EXPECT_EQ(u.value(lambda), kNegInf);
  EXPECT_THROW(u.grad(lambda), BarrierViolation);
  Table edge = Table::Constant(2, 2, 1.25);  // exactly at the budget
  EXPECT_EQ(u.value(edge), kNegInf);
}

TEST(LogBarrierUtility, GradMatchesFiniteDifferences) {
  Mdp mdp = random_mdp(4, 3, kGamma, 13);
  LogBarrierUtility u(mdp.reward_table(), mdp.cost_table(), 10.0, 2.0);
  for (const auto& l : polytope_points(mdp, 10, 14)) {
    ASSERT_TRUE(u.interior((mdp.cost_table().array() * l.array()).sum()));
    auto f = [&](const Table& t) { return u.value(t); };
    Table fd = oracle::finite_difference(f, l, 1e-5);
    EXPECT_LT(oracle::relative_error(u.grad(l), fd), 1e-6);
  }
}

TEST(LogBarrierUtility, DecreasingInCostAtFixedReward) {
  Table r = Table::Zero(2, 2);
  r(0, 0) = 1.0;
  Table c = Table::Zero(2, 2);
  c(1, 1) = 1.0;
  LogBarrierUtility u(r, c, 8.0, 1.0);
  double previous = std::numeric_limits<double>::infinity();
  for (double spent = 0.0; spent < 7.9; spent += 0.5) {
    Table lambda = Table::Zero(2, 2);
    lambda(0, 0) = 2.0;
    lambda(1, 1) = spent;
    double v = u.value(lambda);
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(UtilityProperties, ConcavityOnPolytopeSegments) {
  for (int m = 0; m < 3; ++m) {
    Mdp mdp = random_mdp(5, 3, kGamma, 200 + m);
    auto points = polytope_points(mdp, 40, 300 + m);
    for (const auto& family : all_families(mdp)) {
      for (std::size_t i = 0; i + 1 < points.size(); i += 2) {
        const Table& a = points[i];
        const Table& b = points[i + 1];
        for (double t : {0.25, 0.5, 0.75}) {
          double mid = family.utility->value(t * a + (1 - t) * b);
          double chord = t * family.utility->value(a) + (1 - t) * family.utility->value(b);
          EXPECT_GE(mid, chord - 1e-9) << family.label;
        }
      }
    }
  }
}

TEST(UtilityProperties, SupergradientInequality) {
  Mdp mdp = random_mdp(5, 3, kGamma, 400);
  auto points = polytope_points(mdp, 200, 401);
  for (const auto& family : all_families(mdp)) {
    for (std::size_t i = 0; i + 1 < points.size(); i += 2) {
      const Table& l = points[i];
      const Table& other = points[i + 1];
      double bound = family.utility->value(l) +
                     (family.utility->grad(l).array() * (other - l).array()).sum();
      EXPECT_LE(family.utility->value(other), bound + 1e-9) << family.label;
    }
  }
}

TEST(UtilityProperties, GradientBoundedByEllF) {
  Mdp mdp = random_mdp(5, 3, kGamma, 410);
  for (const auto& family : all_families(mdp)) {
    if (family.label == "log_barrier") {
      EXPECT_TRUE(std::isinf(family.utility->ell_f()));
      continue;
    }
    for (const auto& l : polytope_points(mdp, 20, 411))
      EXPECT_LE(family.utility->grad(l).cwiseAbs().maxCoeff(), family.utility->ell_f() + 1e-12)
          << family.label;
  }
}

TEST(UtilityProperties, EntropyOrdersByUniformity) {
  // Among sampled feasible points the entropy maximizer is the one whose
  // visitation is closest to uniform in KL.
  Mdp mdp = random_mdp(6, 3, kGamma, 420);
  EntropyUtility u(kGamma);
  auto points = polytope_points(mdp, 60, 421);
  int best_value = 0, best_uniformity = 0;
  double best_h = -1e300, best_kl = 1e300;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    Vector d = visitation(points[i]);
    double kl = (d.array() * (d.array() * 6.0).log()).sum();
    if (u.value(points[i]) > best_h) {
      best_h = u.value(points[i]);
      best_value = i;
    }
    if (kl < best_kl) {
      best_kl = kl;
      best_uniformity = i;
    }
  }
  EXPECT_EQ(best_value, best_uniformity);
}

TEST(DualGapCheck, LinearIsExact) {
  Mdp mdp = random_mdp(4, 2, kGamma, 500);
  auto lambda = occupancy_exact(mdp, TabularPolicy::uniform(4, 2)).lambda();
  EXPECT_LT(dual_gap_check(*linear_utility(mdp.reward_table()), lambda), 1e-12);
}

TEST(DualGapCheck, KlAtPriorIsTight) {
  Mdp mdp = random_mdp(5, 3, kGamma, 501);
  auto lambda = occupancy_exact(mdp, TabularPolicy::uniform(5, 3)).lambda();
  KlUtility u(visitation(lambda), kGamma);
  EXPECT_LT(dual_gap_check(u, lambda), 1e-4);
}

TEST(DualGapCheck, EntropyOnFrozenLakeIsReported) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  Mdp mdp = build_gridworld(spec);
  auto lambda = occupancy_exact(mdp, TabularPolicy::uniform(16, 4)).lambda();
  double gap = dual_gap_check(EntropyUtility(kGamma), lambda);
  EXPECT_TRUE(std::isfinite(gap));
  EXPECT_GE(gap, 0.0);
  std::cout << "entropy dual gap at the uniform policy: " << gap << "\n";
}

TEST(DualGapCheck, RejectsDualFreeUtilities) {
  MinEigenvalueUtility u(Eigen::MatrixXd::Identity(4, 4), 2, 2);
  EXPECT_THROW(dual_gap_check(u, Table::Ones(2, 2)), std::invalid_argument);
  EXPECT_THROW(u.dual(Table::Ones(2, 2)), std::logic_error);
}

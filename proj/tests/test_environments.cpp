#include <gtest/gtest.h>

#include <cmath>
#include <queue>

#include "gupg/environments.hpp"
#include "gupg/mdp.hpp"

using namespace gupg;

namespace {

void expect_valid(const Mdp& mdp) {
  for (int a = 0; a < mdp.num_actions(); ++a) {
    const auto& p = mdp.transition(a);
    EXPECT_GE(p.minCoeff(), 0.0);
    for (int s = 0; s < mdp.num_states(); ++s) EXPECT_NEAR(p.row(s).sum(), 1.0, 1e-12);
  }
  EXPECT_GE(mdp.initial().minCoeff(), 0.0);
  EXPECT_NEAR(mdp.initial().sum(), 1.0, 1e-12);
  EXPECT_GT(mdp.discount(), 0.0);
  EXPECT_LT(mdp.discount(), 1.0);
}

/// Moves on a grid without the library's builder; gym action order.
int grid_move(int s, int a, int rows, int cols) {
  int r = s / cols, c = s % cols;
  const int dr[] = {0, 1, 0, -1}, dc[] = {-1, 0, 1, 0};
  int nr = r + dr[a], nc = c + dc[a];
  if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) return s;
  return nr * cols + nc;
}

}  // namespace

TEST(GridSpec, ParsesAndPrintsLayouts) {
  auto rows = GridSpec::parse_layout("SFFF/FHFH/FFFH/HFFG");
  EXPECT_EQ(rows, kFrozenLake4x4);
  GridSpec spec;
  spec.layout = rows;
  EXPECT_EQ(spec.layout_string(), "SFFF/FHFH/FFFH/HFFG");
  EXPECT_EQ(spec.rows(), 4);
  EXPECT_EQ(spec.cols(), 4);
  EXPECT_EQ(spec.tile(5), 'H');
}

TEST(BuildGridworld, StandardMapDimensions) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  Mdp mdp = build_gridworld(spec);
  EXPECT_EQ(mdp.num_states(), 16);
  EXPECT_EQ(mdp.num_actions(), 4);
  expect_valid(mdp);
  EXPECT_DOUBLE_EQ(mdp.initial()(0), 1.0);
  for (int s : {5, 7, 11, 12, 15}) EXPECT_TRUE(mdp.is_terminal(s));
  EXPECT_FALSE(mdp.is_terminal(0));
}

TEST(BuildGridworld, OneStepGoal) {
  GridSpec spec;
  spec.layout = {"SG"};
  Mdp mdp = build_gridworld(spec);
  Table right = Table::Zero(2, 4);
  right.col(kRight).setConstant(1.0);
  EXPECT_NEAR(value_exact(mdp, TabularPolicy(right), mdp.reward_table()), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(mdp.transition(kRight)(0, 1), 1.0);
  // Off-grid moves stay in place.
  EXPECT_DOUBLE_EQ(mdp.transition(kLeft)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(mdp.transition(kUp)(0, 0), 1.0);
}

TEST(BuildGridworld, DeterministicMovesFollowActionOrder) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  Mdp mdp = build_gridworld(spec);
  for (int s = 0; s < 16; ++s) {
    if (mdp.is_terminal(s)) continue;
    for (int a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(mdp.transition(a)(s, grid_move(s, a, 4, 4)), 1.0);
  }
}

TEST(BuildGridworld, SlipperyRowsHaveAtMostThreeOutcomes) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  spec.slippery = true;
  Mdp mdp = build_gridworld(spec);
  expect_valid(mdp);
  for (int a = 0; a < 4; ++a) {
    for (int s = 0; s < 16; ++s) {
      int nonzero = 0;
      for (int j = 0; j < 16; ++j) nonzero += mdp.transition(a)(s, j) > 0.0;
      EXPECT_LE(nonzero, 3);
    }
  }
  // Intended direction and the two perpendicular ones share the mass.
  EXPECT_NEAR(mdp.transition(kRight)(9, 10), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(mdp.transition(kRight)(9, 13), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(mdp.transition(kRight)(9, 5), 1.0 / 3.0, 1e-15);
}

TEST(BuildGridworld, TerminalsAbsorbWithZeroRewardAndCost) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4Costly;
  Mdp mdp = build_gridworld(spec);
  for (int s = 0; s < 16; ++s) {
    if (!mdp.is_terminal(s)) continue;
    for (int a = 0; a < 4; ++a) {
      EXPECT_DOUBLE_EQ(mdp.transition(a)(s, s), 1.0);
      EXPECT_DOUBLE_EQ(mdp.reward_table()(s, a), 0.0);
      EXPECT_DOUBLE_EQ(mdp.cost_table()(s, a), 0.0);
    }
  }
}

TEST(BuildGridworld, RewardOnEnteringGoalAndCostlyTiles) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4Costly;
  spec.reward_at_c = -0.2;
  spec.cost_at_c = 2.0;
  Mdp mdp = build_gridworld(spec);
  EXPECT_DOUBLE_EQ(mdp.reward_table()(14, kRight), 1.0);
  EXPECT_DOUBLE_EQ(mdp.reward_table()(14, kLeft), 0.0);
  for (int s : {1, 4}) {
    for (int a = 0; a < 4; ++a) {
      EXPECT_DOUBLE_EQ(mdp.reward_table()(s, a), -0.2);
      EXPECT_DOUBLE_EQ(mdp.cost_table()(s, a), 2.0);
    }
  }
  EXPECT_DOUBLE_EQ(mdp.cost_table()(0, kRight), 0.0);
  EXPECT_EQ(mdp.cost_table().cwiseAbs().sum(), 2.0 * 2 * 4);
}

TEST(BuildGridworld, StartMixSpreadsTheInitialDistribution) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  spec.start_mix = 0.5;
  Mdp mdp = build_gridworld(spec);
  expect_valid(mdp);
  EXPECT_NEAR(mdp.initial()(0), 0.5 + 0.5 / 16, 1e-15);
  EXPECT_NEAR(mdp.initial()(3), 0.5 / 16, 1e-15);
  spec.start_mix = 1.5;
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
}

TEST(BuildGridworld, RejectsMalformedLayouts) {
  GridSpec spec;
  spec.layout = {"SFF", "FG"};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
  spec.layout = {"SFX", "FFG"};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
  spec.layout = {"SFS", "FFG"};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
  spec.layout = {"FFF", "FFG"};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
  spec.layout = {"SFF", "FFF"};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
  spec.layout = {};
  EXPECT_THROW(build_gridworld(spec), std::invalid_argument);
}

TEST(BuildGridworld, ShortestPathValueMatchesBreadthFirstSearch) {
  GridSpec spec;
  spec.layout = kFrozenLake4x4;
  Mdp mdp = build_gridworld(spec);
  // BFS distances to G over non-hole tiles.
  std::vector<int> dist(16, -1);
  std::queue<int> q;
  dist[15] = 0;
  q.push(15);
  while (!q.empty()) {
    int s = q.front();
    q.pop();
    for (int prev = 0; prev < 16; ++prev) {
      if (dist[prev] >= 0 || spec.tile(prev) == 'H' || spec.tile(prev) == 'G') continue;
      for (int a = 0; a < 4; ++a) {
        if (grid_move(prev, a, 4, 4) == s) {
          dist[prev] = dist[s] + 1;
          q.push(prev);
          break;
        }
      }
    }
  }
  ASSERT_EQ(dist[0], 6);
  Table probs = Table::Zero(16, 4);
  for (int s = 0; s < 16; ++s) {
    int choice = 0;
    for (int a = 0; a < 4; ++a) {
      int next = grid_move(s, a, 4, 4);
      if (dist[s] > 0 && dist[next] == dist[s] - 1) {
        choice = a;
        break;
      }
    }
    probs(s, choice) = 1.0;
  }
  double v = value_exact(mdp, TabularPolicy(probs), mdp.reward_table());
  EXPECT_NEAR(v, std::pow(0.9, dist[0] - 1), 1e-12);
}

TEST(RandomMdp, DeterministicInSeed) {
  Mdp a = random_mdp(5, 3, 0.9, 42), b = random_mdp(5, 3, 0.9, 42), c = random_mdp(5, 3, 0.9, 43);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(a.transition(k), b.transition(k));
  EXPECT_EQ(a.initial(), b.initial());
  EXPECT_EQ(a.reward_table(), b.reward_table());
  EXPECT_EQ(a.cost_table(), b.cost_table());
  EXPECT_NE(a.transition(0), c.transition(0));
}

TEST(RandomMdp, LargeConcentrationIsNearlyUniform) {
  Mdp mdp = random_mdp(6, 2, 0.9, 7, 1e6);
  for (int a = 0; a < 2; ++a)
    EXPECT_LT((mdp.transition(a).array() - 1.0 / 6).abs().maxCoeff(), 1e-2);
  EXPECT_LT((mdp.initial().array() - 1.0 / 6).abs().maxCoeff(), 1e-2);
}

TEST(RandomMdp, SatisfiesInvariantsAndRewardRange) {
  for (int seed = 0; seed < 30; ++seed) {
    Mdp mdp = random_mdp(1 + seed % 9, 1 + seed % 4, 0.5 + 0.015 * seed, seed, 0.3 + seed % 3);
    expect_valid(mdp);
    EXPECT_GE(mdp.reward_table().minCoeff(), 0.0);
    EXPECT_LE(mdp.reward_table().maxCoeff(), 1.0);
  }
  EXPECT_THROW(random_mdp(0, 2, 0.9, 1), std::invalid_argument);
}

TEST(Dirichlet, SamplesLieOnTheSimplex) {
  Rng rng(3);
  for (double alpha : {0.05, 1.0, 50.0}) {
    for (int i = 0; i < 100; ++i) {
      Vector v = dirichlet(rng, 5, alpha);
      EXPECT_GE(v.minCoeff(), 0.0);
      EXPECT_NEAR(v.sum(), 1.0, 1e-12);
    }
  }
}

TEST(Rng, DerivedStreamsAreReproducibleAndDistinct) {
  Rng a = Rng::derive(5, 1), b = Rng::derive(5, 1), c = Rng::derive(5, 2), d = Rng::derive(5, 1, 0);
  auto ea = a.engine()(), eb = b.engine()(), ec = c.engine()(), ed = d.engine()();
  EXPECT_EQ(ea, eb);
  EXPECT_NE(ea, ec);
  EXPECT_NE(ea, ed);
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    int k = r.uniform_int(7);
    EXPECT_GE(k, 0);
    EXPECT_LT(k, 7);
  }
}

#pragma once

// Reference computations used by the tests. They avoid the library's solvers
// and samplers so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gupg/mdp.hpp"

namespace oracle {

using gupg::Mdp;
using gupg::Table;
using gupg::Vector;

/// Index drawn from any row or column expression, read in place.
template <class Probs>
int draw(std::mt19937_64& gen, const Eigen::DenseBase<Probs>& probs) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(gen);
  int last = 0;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    if (probs(i) > 0.0) last = i;
    u -= probs(i);
    if (u < 0.0) return i;
  }
  return last;
}

inline Table random_probs(std::mt19937_64& gen, int states, int actions) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Table p(states, actions);
  for (int s = 0; s < states; ++s) {
    for (int a = 0; a < actions; ++a) p(s, a) = g(gen) + 1e-3;
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

inline Table random_table(std::mt19937_64& gen, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Table t(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t(i, j) = n(gen);
  return t;
}

/// Per-entry sample mean and standard error of discounted visit counts,
/// simulated step by step for `horizon + 1` steps. Terminal states keep
/// accruing visits at their self-loop.
struct McOccupancy {
  Table mean;
  Table stderr_;
};

inline McOccupancy mc_occupancy(const Mdp& mdp, const Table& probs, int episodes, int horizon,
                                std::uint64_t seed) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  const double g = mdp.discount();
  // Per-state cumulative table over (action, next state) pairs, so one
  // uniform draws both.
  const int pairs = A * S;
  std::vector<double> joint(static_cast<std::size_t>(S) * pairs);
  for (int s = 0; s < S; ++s) {
    double acc = 0.0;
    for (int a = 0; a < A; ++a) {
      for (int j = 0; j < S; ++j) {
        joint[s * pairs + a * S + j] = acc += probs(s, a) * mdp.transition(a)(s, j);
      }
    }
  }
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> sum(S * A, 0.0), sq(S * A, 0.0), visit(S * A);
  for (int e = 0; e < episodes; ++e) {
    std::fill(visit.begin(), visit.end(), 0.0);
    int s = draw(gen, mdp.initial());
    double w = 1.0;
    for (int k = 0; k <= horizon; ++k) {
      const double* row = &joint[s * pairs];
      const double u = unit(gen) * row[pairs - 1];
      const auto hit = std::upper_bound(row, row + pairs, u) - row;
      const int pick = std::min(static_cast<int>(hit), pairs - 1);
      visit[s * A + pick / S] += w;
      s = pick % S;
      w *= g;
    }
    for (int i = 0; i < S * A; ++i) {
      sum[i] += visit[i];
      sq[i] += visit[i] * visit[i];
    }
  }
  McOccupancy out{Table(S, A), Table(S, A)};
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double mean = sum[s * A + a] / episodes;
      const double var = std::max(sq[s * A + a] / episodes - mean * mean, 0.0);
      out.mean(s, a) = mean;
      out.stderr_(s, a) = std::sqrt(var / (episodes - 1.0));
    }
  }
  return out;
}

/// Occupancy by summing ξᵀ P_π^k γ^k until the tail is negligible.
inline Table power_series_occupancy(const Mdp& mdp, const Table& probs) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
  for (int a = 0; a < A; ++a) P += probs.col(a).asDiagonal() * mdp.transition(a);
  Eigen::RowVectorXd dist = mdp.initial().transpose();
  Vector mu = Vector::Zero(S);
  double w = 1.0;
  while (w > 1e-16) {
    mu += w * dist.transpose();
    dist = dist * P;
    w *= mdp.discount();
  }
  return mu.asDiagonal() * probs;
}

inline std::vector<double> flatten(const Table& t) {
  std::vector<double> v;
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) v.push_back(t(i, j));
  return v;
}

/// Central differences of f over every entry of `at`.
inline Table finite_difference(const std::function<double(const Table&)>& f, const Table& at,
                               double h) {
  Table grad(at.rows(), at.cols());
  for (int i = 0; i < at.rows(); ++i) {
    for (int j = 0; j < at.cols(); ++j) {
      Table up = at, down = at;
      up(i, j) += h;
      down(i, j) -= h;
      grad(i, j) = (f(up) - f(down)) / (2.0 * h);
    }
  }
  return grad;
}

inline double relative_error(const Table& a, const Table& b) {
  double scale = std::max(b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

/// Minimizer of ‖x - v‖² over a grid on the simplex with spacing 1/steps
/// (dimension ≤ 4), followed by coordinate refinement on a shrinking grid.
inline Vector grid_simplex_projection(const Vector& v, int steps) {
  const int n = static_cast<int>(v.size());
  Vector best = Vector::Constant(n, 1.0 / n);
  double best_d = (best - v).squaredNorm();
  std::vector<int> idx(n, 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == n - 1) {
      idx[i] = left;
      Vector x(n);
      for (int j = 0; j < n; ++j) x(j) = static_cast<double>(idx[j]) / steps;
      double d = (x - v).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = x;
      }
      return;
    }
    for (int k = 0; k <= left; ++k) {
      idx[i] = k;
      rec(i + 1, left - k);
    }
  };
  rec(0, steps);
  // Local refinement: move mass between coordinate pairs with shrinking steps.
  for (double h = 1.0 / steps; h > 1e-9; h *= 0.5) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (i == j || best(j) < h) continue;
          Vector x = best;
          x(i) += h;
          x(j) -= h;
          double d = (x - v).squaredNorm();
          if (d < best_d - 1e-18) {
            best_d = d;
            best = x;
            improved = true;
          }
        }
      }
    }
  }
  return best;
}

/// Optimal values by Bellman iteration written out directly.
inline Vector bellman_optimal_values(const Mdp& mdp, const Table& reward) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  Vector V = Vector::Zero(S);
  for (int it = 0; it < 100000; ++it) {
    Vector next(S);
    for (int s = 0; s < S; ++s) {
      double best = -1e300;
      for (int a = 0; a < A; ++a)
        best = std::max(best, reward(s, a) + mdp.discount() * mdp.transition(a).row(s).dot(V));
      next(s) = best;
    }
    double diff = (next - V).cwiseAbs().maxCoeff();
    V = next;
    if (diff < 1e-14) break;
  }
  return V;
}

}  // namespace oracle

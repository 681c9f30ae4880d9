#include "gupg/environments.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace gupg {

std::vector<std::string> GridSpec::parse_layout(const std::string& rows) {
  std::vector<std::string> out;
  std::stringstream ss(rows);
  std::string row;
  while (std::getline(ss, row, '/')) out.push_back(row);
  return out;
}

std::string GridSpec::layout_string() const {
  std::string out;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (i) out += '/';
    out += layout[i];
  }
  return out;
}

void validate_grid(const GridSpec& spec) {
  if (spec.layout.empty() || spec.layout.front().empty()) {
    throw std::invalid_argument("grid layout is empty");
  }
  const auto width = spec.layout.front().size();
  int starts = 0;
  int goals = 0;
  for (const auto& row : spec.layout) {
    if (row.size() != width) throw std::invalid_argument("grid layout is not rectangular");
    for (char c : row) {
      switch (c) {
        case 'S': ++starts; break;
        case 'G': ++goals; break;
        case 'F':
        case 'H':
        case 'C': break;
        default: throw std::invalid_argument(std::string("unknown grid tile '") + c + "'");
      }
    }
  }
  if (starts != 1) throw std::invalid_argument("grid layout needs exactly one S");
  if (goals < 1) throw std::invalid_argument("grid layout needs at least one G");
  if (!(spec.start_mix >= 0.0 && spec.start_mix <= 1.0)) {
    throw std::invalid_argument("start_mix must lie in [0, 1]");
  }
}

Mdp build_gridworld(const GridSpec& spec) {
  validate_grid(spec);
  const int nrow = spec.rows();
  const int ncol = spec.cols();
  const int ns = nrow * ncol;
  constexpr int na = 4;

  auto move = [&](int s, int a) {
    int r = s / ncol;
    int c = s % ncol;
    switch (a) {
      case kLeft: c = std::max(c - 1, 0); break;
      case kDown: r = std::min(r + 1, nrow - 1); break;
      case kRight: c = std::min(c + 1, ncol - 1); break;
      case kUp: r = std::max(r - 1, 0); break;
    }
    return r * ncol + c;
  };
  auto absorbing = [&](int s) { return spec.tile(s) == 'H' || spec.tile(s) == 'G'; };

  std::vector<Eigen::MatrixXd> p(na, Eigen::MatrixXd::Zero(ns, ns));
  std::vector<bool> terminal(ns, false);
  int start = 0;
  for (int s = 0; s < ns; ++s) {
    if (spec.tile(s) == 'S') start = s;
    terminal[s] = absorbing(s);
    for (int a = 0; a < na; ++a) {
      if (terminal[s]) {
        p[a](s, s) = 1.0;
      } else if (spec.slippery) {
        // Intended direction and both perpendicular ones, 1/3 each.
        for (int d : {(a + 3) % 4, a, (a + 1) % 4}) p[a](s, move(s, d)) += 1.0 / 3.0;
      } else {
        p[a](s, move(s, a)) = 1.0;
      }
    }
  }

  Table reward = Table::Zero(ns, na);
  Table cost = Table::Zero(ns, na);
  for (int s = 0; s < ns; ++s) {
    if (terminal[s]) continue;
    for (int a = 0; a < na; ++a) {
      for (int j = 0; j < ns; ++j) {
        if (spec.tile(j) == 'G') reward(s, a) += spec.reward_goal * p[a](s, j);
      }
      if (spec.tile(s) == 'C') {
        reward(s, a) += spec.reward_at_c;
        cost(s, a) = spec.cost_at_c;
      }
    }
  }

  Vector xi = Vector::Constant(ns, spec.start_mix / ns);
  xi[start] += 1.0 - spec.start_mix;
  return Mdp(std::move(p), std::move(xi), spec.discount, std::move(reward), std::move(cost),
             std::move(terminal));
}

Vector dirichlet(Rng& rng, int n, double alpha) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.gamma(alpha);
  const double total = v.sum();
  if (!(total > 0.0)) {
    v.setConstant(1.0 / n);
    return v;
  }
  v /= total;
  // Renormalize once more so the row passes the 1e-12 stochasticity check.
  v /= v.sum();
  return v;
}

Mdp random_mdp(int num_states, int num_actions, double discount, std::uint64_t seed,
               double dirichlet_alpha) {
  if (num_states < 1 || num_actions < 1) {
    throw std::invalid_argument("random_mdp: need at least one state and action");
  }
  Rng rng(seed);
  std::vector<Eigen::MatrixXd> p(num_actions, Eigen::MatrixXd(num_states, num_states));
  for (int a = 0; a < num_actions; ++a) {
    for (int s = 0; s < num_states; ++s) {
      p[a].row(s) = dirichlet(rng, num_states, dirichlet_alpha).transpose();
    }
  }
  Vector xi = dirichlet(rng, num_states, dirichlet_alpha);
  Table reward(num_states, num_actions);
  Table cost(num_states, num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) reward(s, a) = rng.uniform();
  }
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) cost(s, a) = rng.uniform();
  }
  return Mdp(std::move(p), std::move(xi), discount, std::move(reward), std::move(cost));
}

}  // namespace gupg

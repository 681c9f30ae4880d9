#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gupg/mdp.hpp"

namespace gupg {

/// FrozenLake-style grid. Tiles: S start, F frozen, H hole, G goal, C costly.
///
/// Actions follow the gym ordering: 0 left, 1 down, 2 right, 3 up. States are
/// numbered row-major. H and G are absorbing with zero reward and cost.
struct GridSpec {
  std::vector<std::string> layout;
  bool slippery = false;
  double reward_goal = 1.0;
  double cost_at_c = 1.0;
  double reward_at_c = -0.4;
  double discount = 0.9;
  /// ξ = (1 - start_mix) δ_S + start_mix · uniform. Zero gives the point mass on S.
  double start_mix = 0.0;

  /// Parses rows joined by '/', e.g. "SFFF/FHFH/FFFH/HFFG".
  static std::vector<std::string> parse_layout(const std::string& rows);
  std::string layout_string() const;
  int rows() const { return static_cast<int>(layout.size()); }
  int cols() const { return layout.empty() ? 0 : static_cast<int>(layout.front().size()); }
  char tile(int state) const { return layout[state / cols()][state % cols()]; }
};

enum GridAction : int { kLeft = 0, kDown = 1, kRight = 2, kUp = 3 };

inline const std::vector<std::string> kFrozenLake4x4 = {"SFFF", "FHFH", "FFFH", "HFFG"};
/// Costly tiles on both exits from S, so every route to G pays cost.
inline const std::vector<std::string> kFrozenLake4x4Costly = {"SCFF", "CHFH", "FFFH", "HFFG"};

/// Throws std::invalid_argument for ragged layouts, unknown tiles, or a missing S/G.
void validate_grid(const GridSpec& spec);

Mdp build_gridworld(const GridSpec& spec);

/// Rows of each P_a and ξ drawn from a symmetric Dirichlet(alpha); reward and
/// cost channels uniform on [0, 1]. Deterministic in `seed`.
Mdp random_mdp(int num_states, int num_actions, double discount, std::uint64_t seed,
               double dirichlet_alpha = 1.0);

/// Dirichlet(alpha) sample of length n.
Vector dirichlet(Rng& rng, int n, double alpha);

}  // namespace gupg

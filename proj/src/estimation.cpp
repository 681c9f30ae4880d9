#include "gupg/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gupg/parallel.hpp"
#include "gupg/stats.hpp"

namespace gupg {

namespace {

void require_nonempty(const EpisodeBatch& batch, const char* who) {
  if (batch.trajectories.empty()) {
    throw std::invalid_argument(std::string(who) + ": empty episode batch");
  }
}

/// γ^0 .. γ^K.
std::vector<double> discount_powers(double discount, int horizon) {
  std::vector<double> pw(static_cast<std::size_t>(horizon) + 2);
  pw[0] = 1.0;
  for (std::size_t k = 1; k < pw.size(); ++k) pw[k] = pw[k - 1] * discount;
  return pw;
}

/// Σ_{k=first}^{K} γ^k, the weight an absorbed episode keeps at its terminal state.
double tail_weight(const std::vector<double>& pw, int first, int horizon, double discount) {
  if (first > horizon) return 0.0;
  return (pw[first] - pw[horizon + 1]) / (1.0 - discount);
}

/// Per-state discounted visit weights (1/n) Σ_i Σ_k γ^k 1{s_k = s}, tails included.
Vector state_weights(const EpisodeBatch& batch, int num_states) {
  const auto pw = discount_powers(batch.discount, batch.horizon);
  Vector w = Vector::Zero(num_states);
  for (const auto& traj : batch.trajectories) {
    for (const auto& step : traj.steps) w[step.state] += pw[step.time];
    if (traj.absorbed) {
      const auto& last = traj.steps.back();
      w[last.state] += tail_weight(pw, last.time + 1, batch.horizon, batch.discount);
    }
  }
  return w / static_cast<double>(batch.size());
}

void check_batch(const Mdp& mdp, const EpisodeBatch& batch, const char* who) {
  require_nonempty(batch, who);
  detail::check_table_shape(mdp, batch.policy_probs, who);
}

/// Truncated geometric index on [0, K] with P(k) ∝ γ^k, by inverse CDF.
int sample_time_index(Rng& rng, double discount, double mass_k1) {
  const double u = rng.uniform();
  const double k = std::ceil(std::log1p(-u * mass_k1) / std::log(discount)) - 1.0;
  return static_cast<int>(std::max(k, 0.0));
}

}  // namespace

EpisodeBatch generate_batch(const Mdp& mdp, const TabularPolicy& policy, int episodes,
                            int horizon, std::uint64_t seed, int threads) {
  if (episodes < 1) throw std::invalid_argument("generate_batch: need at least one episode");
  EpisodeBatch batch;
  batch.horizon = horizon;
  batch.discount = mdp.discount();
  batch.policy_probs = policy.probs();
  batch.seed = seed;
  batch.trajectories.resize(static_cast<std::size_t>(episodes));
  parallel_for(episodes, threads, [&](int i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    batch.trajectories[static_cast<std::size_t>(i)] = sample_episode(mdp, policy, horizon, rng);
  });
  return batch;
}

Table empirical_occupancy(const EpisodeBatch& batch) {
  require_nonempty(batch, "empirical_occupancy");
  const auto pw = discount_powers(batch.discount, batch.horizon);
  Table lambda = Table::Zero(batch.policy_probs.rows(), batch.policy_probs.cols());
  for (const auto& traj : batch.trajectories) {
    for (const auto& step : traj.steps) lambda(step.state, step.action) += pw[step.time];
    if (traj.absorbed) {
      const auto& last = traj.steps.back();
      lambda.row(last.state) += tail_weight(pw, last.time + 1, batch.horizon, batch.discount) *
                                batch.policy_probs.row(last.state);
    }
  }
  return lambda / static_cast<double>(batch.size());
}

double rollout_q(const Mdp& mdp, const Table& probs, int state, int action, const Table& z,
                 int horizon, Rng& rng) {
  const double gamma = mdp.discount();
  double total = 0.0;
  double weight = 1.0;
  int s = state;
  int a = action;
  for (int j = 0; j <= horizon; ++j) {
    if (j > 0 && mdp.is_terminal(s)) {
      // Absorbed: the remaining terms are deterministic in state, expected over actions.
      const double expected = probs.row(s).dot(z.row(s));
      total += expected * (weight - std::pow(gamma, horizon + 1)) / (1.0 - gamma);
      return total;
    }
    total += weight * z(s, a);
    if (j == horizon) break;
    s = rng.categorical(mdp.transition(a).row(s).transpose());
    a = rng.categorical(probs.row(s).transpose());
    weight *= gamma;
  }
  return total;
}

double empirical_value(const EpisodeBatch& batch, const Table& z) {
  require_nonempty(batch, "empirical_value");
  if (z.rows() != batch.policy_probs.rows() || z.cols() != batch.policy_probs.cols()) {
    throw std::invalid_argument("empirical_value: z has wrong shape");
  }
  const auto pw = discount_powers(batch.discount, batch.horizon);
  double total = 0.0;
  for (const auto& traj : batch.trajectories) {
    for (const auto& step : traj.steps) total += pw[step.time] * z(step.state, step.action);
    if (traj.absorbed) {
      const auto& last = traj.steps.back();
      total += tail_weight(pw, last.time + 1, batch.horizon, batch.discount) *
               batch.policy_probs.row(last.state).dot(z.row(last.state));
    }
  }
  return total / static_cast<double>(batch.size());
}

Table empirical_pg(const Mdp& mdp, const EpisodeBatch& batch, const Table& z,
                   const ParametricPolicy& policy, const QSource& q_source) {
  check_batch(mdp, batch, "empirical_pg");
  detail::check_table_shape(mdp, z, "empirical_pg: z");
  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  const Table& probs = policy_probs(policy);
  Table grad = Table::Zero(ns, na);

  if (q_source.kind == QSourceKind::exact) {
    // Σ_a Q(s,a;z)∇π(a|s) depends on s alone, so weight each state once.
    const Table q = PolicyEvaluator(mdp, probs).q_values(z);
    const Vector w = state_weights(batch, ns);
    for (int s = 0; s < ns; ++s) {
      if (w[s] == 0.0) continue;
      grad.row(s) = w[s] * policy_derivative_row(policy, s, q.row(s).transpose()).transpose();
    }
    return grad;
  }

  const int rollout_horizon =
      q_source.rollout_horizon > 0 ? q_source.rollout_horizon : default_horizon(mdp.discount());
  const auto pw = discount_powers(batch.discount, batch.horizon);
  Vector q_row(na);
  for (int i = 0; i < batch.size(); ++i) {
    const auto& traj = batch.trajectories[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < traj.steps.size(); ++k) {
      const auto& step = traj.steps[k];
      Rng rng = Rng::derive(q_source.seed, static_cast<std::uint64_t>(i), k);
      double weight = pw[step.time];
      if (traj.absorbed && k + 1 == traj.steps.size()) {
        weight += tail_weight(pw, step.time + 1, batch.horizon, batch.discount);
      }
      for (int a = 0; a < na; ++a) {
        q_row[a] = rollout_q(mdp, probs, step.state, a, z, rollout_horizon, rng);
      }
      grad.row(step.state) += weight * policy_derivative_row(policy, step.state, q_row).transpose();
    }
  }
  return grad / static_cast<double>(batch.size());
}

Table reinforce_pg(const Mdp& mdp, const EpisodeBatch& batch, const Table& reward,
                   const ParametricPolicy& policy, const QSource& q_source) {
  return empirical_pg(mdp, batch, reward, policy, q_source);
}

Table variational_pg(const Mdp& mdp, const EpisodeBatch& batch, const Utility& utility,
                     const ParametricPolicy& policy, const SaddleConfig& config,
                     const SaddleObserver& observer) {
  check_batch(mdp, batch, "variational_pg");
  if (!utility.has_dual()) {
    throw std::invalid_argument("variational_pg: utility '" + utility.name() +
                                "' is dual-free; use the composite or exact gradient");
  }
  if (config.iterations < 0) throw std::invalid_argument("variational_pg: negative iterations");

  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  const double gamma = mdp.discount();
  const double scale = 1.0 / (1.0 - gamma);
  const double mass_k1 = 1.0 - std::pow(gamma, batch.horizon + 1);
  const Table& probs = policy_probs(policy);
  const double ell = utility.ell_f();
  const auto pinned = utility.pinned_dual();
  const PolicyEvaluator evaluator(mdp, probs);
  const int rollout_horizon = config.q_source.rollout_horizon > 0
                                  ? config.q_source.rollout_horizon
                                  : default_horizon(gamma);

  auto clip = [&](Table& z) {
    utility.project_dual(z);
    if (std::isfinite(ell)) z = z.cwiseMax(-ell).cwiseMin(ell);
  };

  SaddleState state;
  state.x = Table::Zero(ns, na);
  if (pinned) {
    state.z = *pinned;
  } else {
    state.z = utility.grad(empirical_occupancy(batch));
    clip(state.z);
  }
  // With z pinned, Q never changes.
  const Table pinned_q = pinned ? evaluator.q_values(state.z) : Table();
  if (observer) observer(state);

  Rng rng = Rng::derive(config.seed, 0x5add1eULL);
  Vector q_row(na);
  for (long t = 0; t < config.iterations; ++t) {
    const double root = std::sqrt(static_cast<double>(t + 1));
    state.alpha =
        config.alpha_schedule == AlphaSchedule::constant ? config.alpha : config.alpha / root;
    switch (config.beta_schedule) {
      case BetaSchedule::constant: state.beta = config.beta; break;
      case BetaSchedule::robbins_monro: state.beta = config.beta / root; break;
      case BetaSchedule::averaging: state.beta = 1.0 / static_cast<double>(t + 1); break;
    }
    state.beta = std::min(state.beta, 1.0);

    // Draw (s_k, a_k) from the data set.
    const auto& traj =
        batch.trajectories[static_cast<std::size_t>(rng.uniform_int(batch.size()))];
    const int k = std::min(sample_time_index(rng, gamma, mass_k1), batch.horizon);
    int s;
    int a;
    if (k < static_cast<int>(traj.steps.size())) {
      s = traj.steps[static_cast<std::size_t>(k)].state;
      a = traj.steps[static_cast<std::size_t>(k)].action;
    } else {
      s = traj.steps.back().state;
      a = rng.categorical(probs.row(s).transpose());
    }

    // Q(s_k, ·; z^t).
    if (pinned) {
      q_row = pinned_q.row(s).transpose();
    } else if (config.q_source.kind == QSourceKind::exact) {
      const Vector v = evaluator.state_values(state.z);
      for (int b = 0; b < na; ++b) {
        q_row[b] = state.z(s, b) + gamma * mdp.transition(b).row(s).dot(v);
      }
    } else {
      for (int b = 0; b < na; ++b) {
        q_row[b] = rollout_q(mdp, probs, s, b, state.z, rollout_horizon, rng);
      }
    }
    // Dual step uses z^t before the primal step consumes it.
    if (!pinned) {
      Table next = state.z + state.alpha * utility.dual_grad(state.z);
      next(s, a) -= state.alpha * scale;
      clip(next);
      state.z = std::move(next);
    }

    state.x *= (1.0 - state.beta);
    state.x.row(s) +=
        (state.beta * scale) * policy_derivative_row(policy, s, q_row).transpose();
    state.t = t + 1;
    if (observer) observer(state);
  }
  return state.x;
}

Table chain_rule_oracle(const Mdp& mdp, const ParametricPolicy& policy, const Utility& utility) {
  const Table lambda = PolicyEvaluator(mdp, policy_probs(policy)).occupancy();
  return exact_policy_gradient(mdp, policy, utility.grad(lambda));
}

Table composite_pg(const Mdp& mdp, const ParametricPolicy& policy,
                   const LogBarrierUtility& utility) {
  const Table grad_r = exact_policy_gradient(mdp, policy, utility.reward());
  if (utility.beta() == 0.0) return grad_r;
  const double spent = PolicyEvaluator(mdp, policy_probs(policy)).value(utility.cost());
  if (!utility.interior(spent)) {
    throw BarrierViolation("composite_pg: cost value " + std::to_string(spent) +
                           " reached the budget");
  }
  return grad_r - utility.beta() * exact_policy_gradient(mdp, policy, utility.cost()) /
                      (utility.budget() - spent);
}

Table composite_pg(const Mdp& mdp, const EpisodeBatch& batch, const ParametricPolicy& policy,
                   const LogBarrierUtility& utility, const QSource& q_source) {
  const Table grad_r = empirical_pg(mdp, batch, utility.reward(), policy, q_source);
  if (utility.beta() == 0.0) return grad_r;
  const double spent = empirical_value(batch, utility.cost());
  if (!utility.interior(spent)) {
    throw BarrierViolation("composite_pg: estimated cost value " + std::to_string(spent) +
                           " reached the budget");
  }
  return grad_r - utility.beta() * empirical_pg(mdp, batch, utility.cost(), policy, q_source) /
                      (utility.budget() - spent);
}

MseStudyResult estimator_mse_study(const Mdp& mdp, const ParametricPolicy& policy,
                                   const Utility& utility, const MseStudyConfig& config) {
  if (config.repeats < 1) throw std::invalid_argument("estimator_mse_study: repeats must be >= 1");
  const Table oracle = chain_rule_oracle(mdp, policy, utility);
  const TabularPolicy sampler(policy_probs(policy));
  const int horizon = config.horizon > 0 ? config.horizon : default_horizon(mdp.discount());

  MseStudyResult result;
  for (int n : config.episode_counts) {
    std::vector<double> errors(static_cast<std::size_t>(config.repeats));
    parallel_for(config.repeats, config.threads, [&](int rep) {
      const auto stream = static_cast<std::uint64_t>(n);
      const auto rep_id = static_cast<std::uint64_t>(rep);
      const EpisodeBatch batch = generate_batch(
          mdp, sampler, n, horizon, Rng::derive(config.seed, stream, rep_id).engine()());
      SaddleConfig saddle = config.saddle;
      saddle.iterations =
          std::max(1L, std::lround(config.iterations_per_episode * static_cast<double>(n)));
      saddle.seed = Rng::derive(config.seed ^ 0x7e57ULL, stream, rep_id).engine()();
      saddle.q_source.seed = saddle.seed;
      const Table x = variational_pg(mdp, batch, utility, policy, saddle);
      errors[static_cast<std::size_t>(rep)] = (x - oracle).squaredNorm();
    });
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= static_cast<double>(errors.size());
    double var = 0.0;
    for (double e : errors) var += (e - mean) * (e - mean);
    const double sd = errors.size() > 1 ? std::sqrt(var / static_cast<double>(errors.size() - 1))
                                        : std::numeric_limits<double>::quiet_NaN();
    result.rows.push_back({n, mean, sd / std::sqrt(static_cast<double>(errors.size()))});
  }

  result.low_confidence = config.repeats < 2;
  if (result.rows.size() < 2) {
    result.insufficient_points = true;
    result.slope = std::numeric_limits<double>::quiet_NaN();
    result.slope_stderr = std::numeric_limits<double>::quiet_NaN();
    return result;
  }
  std::vector<double> lx;
  std::vector<double> ly;
  for (const auto& row : result.rows) {
    lx.push_back(std::log(static_cast<double>(row.episodes)));
    ly.push_back(std::log(row.mse));
  }
  const LineFit fit = fit_line(lx, ly);
  result.slope = fit.slope;
  result.slope_stderr = fit.slope_stderr;
  return result;
}

double cosine_similarity(const Table& a, const Table& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return (a.array() * b.array()).sum() / (na * nb);
}

}  // namespace gupg

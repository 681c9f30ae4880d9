#include "gupg/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "gupg/environments.hpp"
#include "gupg/stats.hpp"

namespace gupg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double inner(const Table& a, const Table& b) { return (a.array() * b.array()).sum(); }

const LogBarrierUtility* as_barrier(const Utility& utility) {
  return dynamic_cast<const LogBarrierUtility*>(&utility);
}

Table random_parameters(Parameterization kind, int ns, int na, Rng& rng) {
  Table t(ns, na);
  if (kind == Parameterization::tabular) {
    for (int s = 0; s < ns; ++s) t.row(s) = dirichlet(rng, na, 1.0).transpose();
  } else {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 2.0 * rng.normal();
  }
  return t;
}

}  // namespace

ParametricPolicy make_policy(Parameterization kind, const Table& parameters) {
  if (kind == Parameterization::tabular) return TabularPolicy(parameters);
  return SoftmaxPolicy(parameters);
}

ValueIterationResult value_iteration(const Mdp& mdp, const Table& reward, double tolerance,
                                     const Vector* warm_start, int max_sweeps) {
  detail::check_table_shape(mdp, reward, "value_iteration: reward");
  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  ValueIterationResult out;
  out.values = warm_start ? *warm_start : Vector::Zero(ns);
  Table q(ns, na);
  for (out.sweeps = 1; out.sweeps <= max_sweeps; ++out.sweeps) {
    for (int a = 0; a < na; ++a) {
      q.col(a) = reward.col(a) + mdp.discount() * (mdp.transition(a) * out.values);
    }
    const Vector next = q.rowwise().maxCoeff();
    const double change = (next - out.values).cwiseAbs().maxCoeff();
    out.values = next;
    if (change < tolerance) break;
  }
  for (int a = 0; a < na; ++a) {
    q.col(a) = reward.col(a) + mdp.discount() * (mdp.transition(a) * out.values);
  }
  out.greedy.resize(static_cast<std::size_t>(ns));
  for (int s = 0; s < ns; ++s) q.row(s).maxCoeff(&out.greedy[static_cast<std::size_t>(s)]);
  return out;
}

double optimal_value(const Mdp& mdp, const Table& reward) {
  return mdp.initial().dot(value_iteration(mdp, reward).values);
}

TabularPolicy deterministic_policy(const std::vector<int>& actions, int num_actions) {
  Table probs = Table::Zero(static_cast<Eigen::Index>(actions.size()), num_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return TabularPolicy(std::move(probs));
}

Table exact_utility_gradient(const Mdp& mdp, const ParametricPolicy& policy,
                             const Utility& utility) {
  if (const auto* barrier = as_barrier(utility)) return composite_pg(mdp, policy, *barrier);
  return chain_rule_oracle(mdp, policy, utility);
}

Evaluation evaluate_policy(const Mdp& mdp, const TabularPolicy& policy, int episodes,
                           int horizon, std::uint64_t seed) {
  Evaluation out;
  if (episodes < 1) return out;
  const Table zero = Table::Zero(mdp.num_states(), mdp.num_actions());
  const Table& reward = mdp.reward() ? *mdp.reward() : zero;
  const Table& cost = mdp.cost() ? *mdp.cost() : zero;
  const EpisodeBatch batch = generate_batch(mdp, policy, episodes, horizon, seed);
  out.reward = empirical_value(batch, reward);
  out.cost = empirical_value(batch, cost);
  return out;
}

std::vector<double> AscentRun::gaps() const {
  std::vector<double> g;
  g.reserve(metrics.size());
  for (const auto& m : metrics) g.push_back(m.gap);
  return g;
}

AscentRun pg_ascent(const Mdp& mdp, const ParametricPolicy& initial, const Utility& utility,
                    const AscentConfig& config) {
  const bool tabular = std::holds_alternative<TabularPolicy>(initial);
  const Parameterization kind = tabular ? Parameterization::tabular : Parameterization::softmax;
  if (kind != config.parameterization) {
    throw std::invalid_argument("pg_ascent: initial policy does not match the parameterization");
  }
  if (config.iterations < 0) throw std::invalid_argument("pg_ascent: negative iteration count");
  const auto* barrier = as_barrier(utility);
  if (config.estimator == EstimatorMode::composite && barrier == nullptr) {
    throw std::invalid_argument("pg_ascent: composite estimator needs the log-barrier utility");
  }

  AscentRun run;
  run.parameterization = kind;
  run.estimator = config.estimator;
  run.step = config.step;
  if (!(run.step > 0.0)) {
    const auto smooth = estimate_smoothness(mdp, utility, kind, config.smoothness_samples,
                                            config.seed ^ 0x5eedULL);
    if (!(smooth.estimate > 0.0)) {
      throw std::invalid_argument("pg_ascent: smoothness estimate is zero; set the step");
    }
    run.step = 1.0 / smooth.estimate;
  }
  const int horizon = config.horizon > 0 ? config.horizon : default_horizon(mdp.discount());
  const auto start = std::chrono::steady_clock::now();

  Table theta = policy_parameters(initial);
  if (!tabular) theta.colwise() -= theta.rowwise().mean();

  for (int k = 0;; ++k) {
    const ParametricPolicy policy = make_policy(kind, theta);
    const Table& probs = policy_probs(policy);
    const PolicyEvaluator evaluator(mdp, probs);
    const Table lambda = evaluator.occupancy();

    AscentMetrics m;
    m.k = k;
    m.step = run.step;
    if (barrier != nullptr && barrier->beta() > 0.0 &&
        !barrier->interior(inner(barrier->cost(), lambda))) {
      run.status = AscentStatus::barrier_exit;
      run.diagnostic = "barrier left at iteration " + std::to_string(k) +
                       "; returning the last interior iterate";
      break;
    }
    m.objective = utility.value(lambda);
    m.gap = config.optimum ? *config.optimum - m.objective : kNaN;

    Table grad;
    if (k < config.iterations) {
      const std::uint64_t stream_seed = Rng::derive(config.seed, static_cast<std::uint64_t>(k)).engine()();
      switch (config.estimator) {
        case EstimatorMode::exact:
          grad = exact_utility_gradient(mdp, policy, utility);
          break;
        case EstimatorMode::variational:
        case EstimatorMode::composite: {
          const EpisodeBatch batch =
              generate_batch(mdp, TabularPolicy(probs), config.episodes, horizon, stream_seed);
          if (barrier != nullptr) {
            grad = composite_pg(mdp, batch, policy, *barrier, config.saddle.q_source);
          } else {
            SaddleConfig saddle = config.saddle;
            saddle.seed = stream_seed;
            grad = variational_pg(mdp, batch, utility, policy, saddle);
          }
          break;
        }
      }
      m.grad_norm = grad.norm();
    } else {
      m.grad_norm = exact_utility_gradient(mdp, policy, utility).norm();
    }

    const bool last = k == config.iterations;
    if (config.eval_episodes > 0 && (last || k % std::max(config.eval_every, 1) == 0)) {
      const Evaluation ev =
          evaluate_policy(mdp, TabularPolicy(probs), config.eval_episodes, horizon,
                          Rng::derive(config.seed ^ 0xe7a1ULL, static_cast<std::uint64_t>(k)).engine()());
      m.eval_reward = ev.reward;
      m.eval_cost = ev.cost;
    } else {
      m.eval_reward = kNaN;
      m.eval_cost = kNaN;
    }
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.metrics.push_back(m);
    if (config.keep_iterates) run.iterates.push_back(theta);
    run.final_parameters = theta;
    if (last) break;

    Table next = theta + run.step * grad;
    if (!next.allFinite()) {
      throw AscentDiverged("pg_ascent: non-finite parameters at iteration " +
                           std::to_string(k + 1) + " (gradient norm " +
                           std::to_string(m.grad_norm) + ", step " + std::to_string(run.step) +
                           ")");
    }
    if (tabular) {
      for (Eigen::Index s = 0; s < next.rows(); ++s) {
        next.row(s) = simplex_project(next.row(s).transpose()).transpose();
      }
    } else {
      next.colwise() -= next.rowwise().mean();
    }
    theta = std::move(next);
  }
  return run;
}

SmoothnessEstimate estimate_smoothness(const Mdp& mdp, const Utility& utility,
                                       Parameterization parameterization, int samples,
                                       std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("estimate_smoothness: need at least two samples");
  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  Rng rng(seed);
  SmoothnessEstimate out;
  constexpr double kScales[] = {1.0, 1e-1, 1e-2, 1e-3};
  for (int i = 0; i < samples; ++i) {
    const double eps = kScales[i % 4];
    const Table a = random_parameters(parameterization, ns, na, rng);
    const Table other = random_parameters(parameterization, ns, na, rng);
    const Table b = parameterization == Parameterization::tabular
                        ? Table((1.0 - eps) * a + eps * other)
                        : Table(a + eps * other / 2.0);
    const double dist = (a - b).norm();
    if (!(dist > 0.0)) continue;
    try {
      const Table ga = exact_utility_gradient(mdp, make_policy(parameterization, a), utility);
      const Table gb = exact_utility_gradient(mdp, make_policy(parameterization, b), utility);
      out.max_quotient = std::max(out.max_quotient, (ga - gb).norm() / dist);
    } catch (const BarrierViolation&) {
      // Outside the barrier's domain; the sample carries no information.
    }
  }
  out.estimate = 2.0 * out.max_quotient;
  if (parameterization == Parameterization::tabular &&
      dynamic_cast<const LinearUtility*>(&utility) != nullptr) {
    const double g = mdp.discount();
    out.analytic = 2.0 * g * na / std::pow(1.0 - g, 3);
  }
  return out;
}

PolytopeOptimum frank_wolfe_optimum(const Mdp& mdp, const Utility& utility,
                                    const FrankWolfeConfig& config) {
  const int na = mdp.num_actions();
  Table lambda = PolicyEvaluator(mdp, TabularPolicy::uniform(mdp.num_states(), na).probs())
                     .occupancy();
  double value = utility.value(lambda);
  if (!std::isfinite(value)) {
    throw std::invalid_argument("frank_wolfe_optimum: utility is not finite at the uniform policy");
  }

  PolytopeOptimum best;
  best.gap = std::numeric_limits<double>::infinity();
  Vector warm = Vector::Zero(mdp.num_states());
  for (int t = 0; t <= config.iterations; ++t) {
    const Table g = utility.grad(lambda);
    const auto vi = value_iteration(mdp, g, config.vi_tolerance, &warm);
    warm = vi.values;
    const Table vertex =
        PolicyEvaluator(mdp, deterministic_policy(vi.greedy, na).probs()).occupancy();
    const double gap = std::max(inner(g, vertex - lambda), 0.0);
    if (gap < best.gap) {
      best.lambda_star = lambda;
      best.value = value;
      best.gap = gap;
      best.iterations = t;
    }
    if (gap <= config.tolerance) {
      best.converged = true;
      break;
    }
    if (t == config.iterations) break;

    double step = 2.0 / (t + 2.0);
    if (config.step == FwStep::line_search) {
      // Golden-section search of the concave φ(s) = F((1-s)λ + s v) on [0, 1].
      const Table dir = vertex - lambda;
      auto phi = [&](double s) {
        const double v = utility.value(lambda + s * dir);
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
      };
      const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
      double lo = 0.0;
      double hi = 1.0;
      double x1 = hi - ratio * (hi - lo);
      double x2 = lo + ratio * (hi - lo);
      double f1 = phi(x1);
      double f2 = phi(x2);
      for (int it = 0; it < 80 && hi - lo > 1e-14; ++it) {
        if (f1 < f2) {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + ratio * (hi - lo);
          f2 = phi(x2);
        } else {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - ratio * (hi - lo);
          f1 = phi(x1);
        }
      }
      step = 0.5 * (lo + hi);
      if (phi(1.0) >= phi(step)) step = 1.0;
    }
    Table candidate = lambda + step * (vertex - lambda);
    const double candidate_value = utility.value(candidate);
    if (!std::isfinite(candidate_value)) break;
    lambda = std::move(candidate);
    value = candidate_value;
  }
  return best;
}

RateFit rate_fit(std::span<const double> gaps, RateModel model, const FitWindow& window) {
  if (gaps.size() < 50) throw std::invalid_argument("rate_fit: need at least 50 iterates");
  RateFit fit;
  fit.model = model;
  fit.first_k = std::max(window.first_k, 0);
  const int end = window.last_k >= 0
                      ? std::min<int>(window.last_k, static_cast<int>(gaps.size()) - 1)
                      : static_cast<int>(gaps.size()) - 1;
  std::vector<double> x;
  std::vector<double> y;
  for (int k = fit.first_k; k <= end; ++k) {
    const double g = gaps[static_cast<std::size_t>(k)];
    if (!(g > window.floor)) break;
    x.push_back(model == RateModel::sublinear ? std::log(k + 1.0) : static_cast<double>(k));
    y.push_back(std::log(g));
    fit.last_k = k;
  }
  if (x.size() < 5) {
    fit.early_convergence = true;
    fit.slope = kNaN;
    fit.rho = kNaN;
    fit.slope_low = kNaN;
    fit.slope_high = kNaN;
    fit.residual_rms = kNaN;
    return fit;
  }
  const LineFit line = fit_line(x, y);
  fit.slope = line.slope;
  fit.slope_low = line.slope - 1.96 * line.slope_stderr;
  fit.slope_high = line.slope + 1.96 * line.slope_stderr;
  fit.rho = model == RateModel::linear ? std::exp(line.slope) : kNaN;
  fit.residual_rms = line.residual_rms;
  return fit;
}

RateFit rate_fit(const AscentRun& run, const PolytopeOptimum& oracle, RateModel model,
                 const FitWindow& window) {
  std::vector<double> gaps;
  gaps.reserve(run.metrics.size());
  for (const auto& m : run.metrics) gaps.push_back(oracle.value - m.objective);
  return rate_fit(gaps, model, window);
}

double tabular_rate_bound(const Mdp& mdp, const TabularPolicy& optimal, double smoothness,
                          int k) {
  const double g = mdp.discount();
  const Vector d = (1.0 - g) * PolicyEvaluator(mdp, optimal.probs()).state_occupancy();
  const double ratio = (d.array() / mdp.initial().array()).maxCoeff();
  return 20.0 * smoothness * mdp.num_states() / ((1.0 - g) * (1.0 - g) * (k + 1.0)) * ratio *
         ratio;
}

}  // namespace gupg
